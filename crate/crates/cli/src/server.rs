//! JSON HTTP API over a [`Runtime`] snapshot.
//!
//! | method | path | response |
//! |---|---|---|
//! | GET | `/api/health` | `{"status": "ok"}` |
//! | GET | `/api/classes` | class names |
//! | GET | `/api/classes/{class}/groups` | `[{name, types}]` |
//! | GET | `/api/classes/{class}/images?split=test` | `[{id, split, anomaly_type, file_name}]` |
//! | GET | `/api/images/{class}/{id}` | original image bytes |
//! | POST | `/api/preview` | [`Preview`] |
//! | POST | `/api/evaluate` | [`EvalReport`] |
//!
//! Errors come back as `{"error": message, "kind": kind}` with 400, 404,
//! 422 (protocol errors such as an all-normal split) or 500.

use std::net::SocketAddr;
use std::sync::Arc;

use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};

use nand_core::eval::{AnomalyGroup, EvalReport};

use crate::config::DetectorChoice;
use crate::runtime::{Preview, Runtime, RuntimeError};

pub struct ApiError(RuntimeError);

impl From<RuntimeError> for ApiError {
    fn from(e: RuntimeError) -> Self {
        Self(e)
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
    pub kind: String,
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let (status, kind) = match &self.0 {
            RuntimeError::NotFound(_) => (StatusCode::NOT_FOUND, "not_found"),
            RuntimeError::BadRequest(_) => (StatusCode::BAD_REQUEST, "bad_request"),
            RuntimeError::Protocol(_) => (StatusCode::UNPROCESSABLE_ENTITY, "protocol"),
            RuntimeError::Internal(_) => (StatusCode::INTERNAL_SERVER_ERROR, "internal"),
        };
        let body = ErrorBody {
            error: self.0.to_string(),
            kind: kind.to_owned(),
        };
        (status, Json(body)).into_response()
    }
}

type ApiResult<T> = Result<Json<T>, ApiError>;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ImageInfo {
    /// Path inside the class, e.g. `test/good/000.png`.
    pub id: String,
    pub split: String,
    pub anomaly_type: String,
    pub file_name: String,
}

#[derive(Debug, Deserialize)]
pub struct ImagesQuery {
    pub split: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PreviewRequest {
    pub class: String,
    pub image_id: String,
    pub normality_text: String,
    pub detector: Option<DetectorChoice>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvaluateRequest {
    pub class: String,
    pub group: String,
    pub detector: Option<DetectorChoice>,
}

async fn blocking<T, F>(f: F) -> Result<T, ApiError>
where
    F: FnOnce() -> Result<T, RuntimeError> + Send + 'static,
    T: Send + 'static,
{
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError(RuntimeError::Internal(e.to_string())))?
        .map_err(ApiError)
}

async fn health() -> Json<serde_json::Value> {
    Json(serde_json::json!({ "status": "ok" }))
}

async fn classes(State(rt): State<Arc<Runtime>>) -> Json<Vec<String>> {
    Json(rt.index.class_names().into_iter().map(str::to_owned).collect())
}

async fn groups(State(rt): State<Arc<Runtime>>, Path(class): Path<String>) -> ApiResult<Vec<AnomalyGroup>> {
    let entry = rt
        .index
        .class(&class)
        .ok_or_else(|| RuntimeError::NotFound(format!("unknown class {class}")))?;
    Ok(Json(entry.groups.clone()))
}

async fn images(
    State(rt): State<Arc<Runtime>>,
    Path(class): Path<String>,
    Query(q): Query<ImagesQuery>,
) -> ApiResult<Vec<ImageInfo>> {
    let entry = rt
        .index
        .class(&class)
        .ok_or_else(|| RuntimeError::NotFound(format!("unknown class {class}")))?;
    let list = match q.split.as_deref().unwrap_or("test") {
        "test" => &entry.test,
        "train" => &entry.train,
        other => return Err(RuntimeError::BadRequest(format!("split must be train or test, got {other}")).into()),
    };
    Ok(Json(
        list.iter()
            .map(|i| ImageInfo {
                id: i.class_relative_id(),
                split: i.split.to_string(),
                anomaly_type: i.anomaly_type.clone(),
                file_name: i.file_name.clone(),
            })
            .collect(),
    ))
}

fn content_type(name: &str) -> &'static str {
    match name.rsplit('.').next().map(str::to_ascii_lowercase).as_deref() {
        Some("png") => "image/png",
        Some("jpg" | "jpeg") => "image/jpeg",
        Some("bmp") => "image/bmp",
        Some("tif" | "tiff") => "image/tiff",
        _ => "application/octet-stream",
    }
}

async fn image_bytes(
    State(rt): State<Arc<Runtime>>,
    Path((class, id)): Path<(String, String)>,
) -> Result<Response, ApiError> {
    // only indexed images are served, which rules out path traversal
    let image = rt
        .index
        .image(&class, &id)
        .ok_or_else(|| RuntimeError::NotFound(format!("unknown image {class}/{id}")))?;
    let path = image.path(&rt.index.root);
    let bytes = tokio::fs::read(&path)
        .await
        .map_err(|e| RuntimeError::Internal(format!("{}: {e}", path.display())))?;
    Ok(([(header::CONTENT_TYPE, content_type(&image.file_name))], bytes).into_response())
}

async fn preview(State(rt): State<Arc<Runtime>>, Json(req): Json<PreviewRequest>) -> ApiResult<Preview> {
    let choice = req.detector.unwrap_or(rt.config.detector.kind);
    let p = blocking(move || rt.preview(&req.class, &req.image_id, &req.normality_text, choice)).await?;
    Ok(Json(p))
}

async fn evaluate(State(rt): State<Arc<Runtime>>, Json(req): Json<EvaluateRequest>) -> ApiResult<EvalReport> {
    let choice = req.detector.unwrap_or(rt.config.detector.kind);
    let r = blocking(move || rt.evaluate_group(&req.class, &req.group, choice)).await?;
    Ok(Json(r))
}

pub fn router(rt: Arc<Runtime>) -> Router {
    Router::new()
        .route("/api/health", get(health))
        .route("/api/classes", get(classes))
        .route("/api/classes/{class}/groups", get(groups))
        .route("/api/classes/{class}/images", get(images))
        .route("/api/images/{class}/{*id}", get(image_bytes))
        .route("/api/preview", post(preview))
        .route("/api/evaluate", post(evaluate))
        .with_state(rt)
}

/// Serves until Ctrl-C.
pub async fn serve(rt: Arc<Runtime>, port: u16) -> anyhow::Result<()> {
    let addr = SocketAddr::from(([0, 0, 0, 0], port));
    let listener = tokio::net::TcpListener::bind(addr)
        .await
        .map_err(|e| anyhow::anyhow!("cannot listen on {addr}: {e}"))?;
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(rt))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}
