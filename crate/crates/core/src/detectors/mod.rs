//! Base anomaly detectors behind one map-producing trait.

mod bank;
mod external;
mod projection;
mod zero_shot;

pub use bank::{
    bank_anomaly_map, build_bank, collect_patches, coreset_size, greedy_k_center, FeatureBank, FeatureBankDetector,
};
pub use external::ExternalMapDetector;
pub use projection::{Affine, ProjectionSpec};
pub use zero_shot::{zs_anomaly_map, zs_anomaly_map_layers, ZeroShotDetector};

pub(crate) use zero_shot::layer_affinity_maps;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::binio::FormatError;
use crate::embedding::{EmbeddingError, PatchGridSet};
use crate::map::{AnomalyMap, MapError};
use crate::prompt::TextFeature;

#[derive(Debug, Error)]
pub enum DetectorError {
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
    #[error(transparent)]
    Map(#[from] MapError),
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error("layer index {index} out of range for {count} layers")]
    LayerOutOfRange { index: usize, count: usize },
    #[error("no layers selected")]
    EmptyLayers,
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("no external map for image {0:?}")]
    MissingExternalMap(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DetectorKind {
    ZeroShotText,
    FeatureBank,
    ExternalMapFile,
    Suppressed,
}

/// Produces an anomaly map for one image's patch grids.
///
/// Implementations are immutable after construction and scoring is
/// deterministic, so a detector can be shared across threads.
pub trait Detector: Send + Sync {
    fn kind(&self) -> DetectorKind;

    fn score_map(&self, set: &PatchGridSet) -> Result<AnomalyMap, DetectorError>;

    /// Image-level score: the maximum of [`Detector::score_map`].
    fn score(&self, set: &PatchGridSet) -> Result<f64, DetectorError> {
        score_from_map(&self.score_map(set)?)
    }

    /// Normal-state text feature, for detectors that have one.
    fn normal_feature(&self) -> Option<&TextFeature> {
        None
    }
}

/// Image-level anomaly score: the maximum map entry.
pub fn score_from_map(map: &AnomalyMap) -> Result<f64, DetectorError> {
    if map.scores().is_empty() {
        return Err(MapError::Empty.into());
    }
    Ok(map.max())
}
