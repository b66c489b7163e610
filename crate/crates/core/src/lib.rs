//! Normality addition for already-trained image anomaly detectors.
//!
//! A text description of a pattern that should from now on count as normal is
//! turned into a prompt ensemble, embedded, and compared against the patch
//! embeddings of a query image. The resulting suppression map attenuates the
//! anomaly map of any base detector: `A_final = A ⊙ (1 − A_sup)`.
//!
//! Module layout:
//!
//! - [`embedding`]: vector algebra, patch grids, the `NAEB` file format, the
//!   deterministic stub encoder and the encoder client contract.
//! - [`prompt`]: prompt ensembles, text features, phrase generation and
//!   zero-shot classification.
//! - [`map`]: anomaly maps, bilinear resizing, smoothing and the `NAAM` format.
//! - [`detectors`]: the zero-shot text detector, the feature-bank detector and
//!   externally scored maps.
//! - [`nand`]: suppression maps and suppressed detectors.
//! - [`eval`]: dataset indexing, anomaly-group scenarios, AUROC and reports.
//! - [`synthetic`]: planted-defect fixtures built on the stub encoder.

pub mod binio;
pub mod detectors;
pub mod embedding;
pub mod eval;
pub mod map;
pub mod nand;
pub mod prompt;
pub mod synthetic;

pub use detectors::{score_from_map, Detector, DetectorError, DetectorKind};
pub use embedding::{
    cosine_similarity, softmax_over, Embedding, EmbeddingError, EncoderClient, EncoderError,
    PatchGrid, PatchGridSet,
};
pub use map::AnomalyMap;
pub use nand::{add_normality, apply_suppression, suppression_map, SuppressedDetector, SuppressionMap};
pub use prompt::{NormalitySpec, PromptSet, TextFeature, TextRole};
