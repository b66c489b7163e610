//! Normality-addition evaluation protocol.
//!
//! Each anomaly group of a class is in turn declared normal: its images are
//! relabeled 0 alongside the `good` images, the remaining anomaly types stay
//! 1, and `combined` images are dropped. A base detector and its suppressed
//! counterpart are scored on the relabeled split and compared by image-level
//! AUROC.

mod auroc;
mod dataset;
mod report;
mod scenario;

pub use auroc::auroc;
pub use dataset::{
    index_dataset, AnomalyGroup, ClassEntry, DatasetIndex, GroupTable, ImageRef, Split, COMBINED, GOOD,
};
pub use report::{
    aggregate_report, format_cell, render_text, round_one_decimal, ClassSummary, EvalReport, ImageScore, Summary,
};
pub use scenario::{build_scenario, LabeledImage, Scenario};

use std::path::PathBuf;

use rayon::prelude::*;
use thiserror::Error;

use crate::detectors::Detector;
use crate::embedding::EncoderClient;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("dataset root {0} does not exist")]
    MissingRoot(PathBuf),
    #[error("no class directories under {0}")]
    NoClasses(PathBuf),
    #[error("class {0} has an empty test split")]
    EmptyTestSplit(String),
    #[error("class {class}: anomaly type {anomaly_type} is in no group")]
    UngroupedType { class: String, anomaly_type: String },
    #[error("group table: {0}")]
    GroupTable(String),
    #[error("unknown class {0}")]
    UnknownClass(String),
    #[error("unknown group {group} for class {class}")]
    UnknownGroup { class: String, group: String },
    #[error("all-normal test set: adding group {group} of class {class} leaves no abnormal images")]
    AllNormal { class: String, group: String },
    #[error("all-abnormal test set: class {class} with group {group} has no normal images")]
    AllAbnormal { class: String, group: String },
    #[error("labels contain a single class")]
    SingleClassLabels,
    #[error("{scores} scores but {labels} labels")]
    LengthMismatch { scores: usize, labels: usize },
    #[error("score {0} is NaN")]
    NanScore(usize),
    #[error("label {0} is not 0 or 1")]
    InvalidLabel(u8),
    #[error("no reports to aggregate")]
    EmptyReports,
    #[error("scoring {image} failed: {message}")]
    Scoring { image: String, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Scores every scenario image with both detectors and reports AUROC before
/// and after. Images are scored in parallel; results keep scenario order.
pub fn run_before_after(
    base: &dyn Detector,
    suppressed: &dyn Detector,
    scenario: &Scenario,
    encoder: &dyn EncoderClient,
) -> Result<EvalReport, EvalError> {
    let scores = scenario
        .items
        .par_iter()
        .map(|item| {
            let id = item.image.id();
            let fail = |message: String| EvalError::Scoring {
                image: id.clone(),
                message,
            };
            let set = encoder.encode_image(&id).map_err(|e| fail(e.to_string()))?;
            let before = base.score(&set).map_err(|e| fail(e.to_string()))?;
            let after = suppressed.score(&set).map_err(|e| fail(e.to_string()))?;
            Ok(ImageScore {
                image_id: id.clone(),
                label: item.label,
                before,
                after,
            })
        })
        .collect::<Result<Vec<_>, EvalError>>()?;
    let labels: Vec<u8> = scores.iter().map(|s| s.label).collect();
    let before: Vec<f64> = scores.iter().map(|s| s.before).collect();
    let after: Vec<f64> = scores.iter().map(|s| s.after).collect();
    Ok(EvalReport::new(
        &scenario.class,
        &scenario.added_group,
        auroc(&before, &labels)?,
        auroc(&after, &labels)?,
        scores,
    ))
}
