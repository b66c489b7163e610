//! Embedding vectors, patch grids and the similarity primitives built on them.
//!
//! Payloads are stored as `f32`; every reduction (dot products, norms,
//! softmax) is carried out in `f64`.

mod encoder;
mod format;
mod grid;
mod stub;

pub use encoder::{embedding_path, EncoderClient, EncoderError, FileCacheEncoder, TextSource, TextTable};
pub use format::{decode_embedding_file, encode_embedding_file, read_embedding_file, write_embedding_file};
pub use grid::{PatchGrid, PatchGridSet};
pub use stub::{stub_encode, stub_text_embedding, GridLayout, Region, RegionBias, StubEncoder};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EmbeddingError {
    #[error("embedding is empty")]
    Empty,
    #[error("non-finite entry at index {0}")]
    NonFinite(usize),
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("zero-norm embedding")]
    ZeroNorm,
    #[error("feature list is empty")]
    EmptyFeatureList,
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
}

/// A dense embedding vector with at least one finite entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f32>", into = "Vec<f32>")]
pub struct Embedding(Vec<f32>);

impl Embedding {
    pub fn new(values: Vec<f32>) -> Result<Self, EmbeddingError> {
        if values.is_empty() {
            return Err(EmbeddingError::Empty);
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(EmbeddingError::NonFinite(i));
        }
        Ok(Self(values))
    }

    /// Narrows `f64` values to the storage precision.
    pub fn from_f64(values: &[f64]) -> Result<Self, EmbeddingError> {
        Self::new(values.iter().map(|&v| v as f32).collect())
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f32> {
        self.0
    }

    pub fn norm(&self) -> f64 {
        norm(&self.0)
    }

    /// Unit-length copy. Fails on a zero vector.
    pub fn normalized(&self) -> Result<Self, EmbeddingError> {
        let n = self.norm();
        if n == 0.0 {
            return Err(EmbeddingError::ZeroNorm);
        }
        Self::from_f64(&self.0.iter().map(|&v| v as f64 / n).collect::<Vec<_>>())
    }
}

impl AsRef<[f32]> for Embedding {
    fn as_ref(&self) -> &[f32] {
        &self.0
    }
}

impl TryFrom<Vec<f32>> for Embedding {
    type Error = EmbeddingError;

    fn try_from(values: Vec<f32>) -> Result<Self, Self::Error> {
        Self::new(values)
    }
}

impl From<Embedding> for Vec<f32> {
    fn from(e: Embedding) -> Self {
        e.0
    }
}

pub(crate) fn dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| x as f64 * y as f64).sum()
}

pub(crate) fn norm(a: &[f32]) -> f64 {
    dot(a, a).sqrt()
}

fn check_dims(expected: usize, found: usize) -> Result<(), EmbeddingError> {
    if expected != found {
        return Err(EmbeddingError::DimensionMismatch { expected, found });
    }
    Ok(())
}

/// Cosine similarity `a·b / (‖a‖‖b‖)`, clamped to `[-1, 1]` against rounding.
pub fn cosine_similarity(a: impl AsRef<[f32]>, b: impl AsRef<[f32]>) -> Result<f64, EmbeddingError> {
    let (a, b) = (a.as_ref(), b.as_ref());
    check_dims(a.len(), b.len())?;
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 || nb == 0.0 {
        return Err(EmbeddingError::ZeroNorm);
    }
    Ok((dot(a, b) / (na * nb)).clamp(-1.0, 1.0))
}

/// Softmax over cosine similarities between `g` and each of `features`.
///
/// Entry `i` is `exp(sim(g, f_i)) / Σ_j exp(sim(g, f_j))`.
pub fn softmax_over<F: AsRef<[f32]>>(
    g: impl AsRef<[f32]>,
    features: &[F],
) -> Result<Vec<f64>, EmbeddingError> {
    SimilarityHead::new(features)?.probabilities(g.as_ref())
}

/// A fixed list of reference features with cached norms, so that many query
/// vectors can be scored against it without recomputing the feature side.
#[derive(Debug, Clone)]
pub struct SimilarityHead {
    features: Vec<Vec<f32>>,
    norms: Vec<f64>,
    dim: usize,
}

impl SimilarityHead {
    pub fn new<F: AsRef<[f32]>>(features: &[F]) -> Result<Self, EmbeddingError> {
        let first = features.first().ok_or(EmbeddingError::EmptyFeatureList)?;
        let dim = first.as_ref().len();
        if dim == 0 {
            return Err(EmbeddingError::Empty);
        }
        let mut norms = Vec::with_capacity(features.len());
        for f in features {
            let f = f.as_ref();
            check_dims(dim, f.len())?;
            let n = norm(f);
            if n == 0.0 {
                return Err(EmbeddingError::ZeroNorm);
            }
            norms.push(n);
        }
        Ok(Self {
            features: features.iter().map(|f| f.as_ref().to_vec()).collect(),
            norms,
            dim,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn similarities(&self, g: &[f32]) -> Result<Vec<f64>, EmbeddingError> {
        check_dims(self.dim, g.len())?;
        let ng = norm(g);
        if ng == 0.0 {
            return Err(EmbeddingError::ZeroNorm);
        }
        Ok(self
            .features
            .iter()
            .zip(&self.norms)
            .map(|(f, nf)| (dot(g, f) / (ng * nf)).clamp(-1.0, 1.0))
            .collect())
    }

    pub fn probabilities(&self, g: &[f32]) -> Result<Vec<f64>, EmbeddingError> {
        let sims = self.similarities(g)?;
        let max = sims.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = sims.iter().map(|s| (s - max).exp()).collect();
        let total: f64 = exps.iter().sum();
        Ok(exps.into_iter().map(|e| e / total).collect())
    }

    /// Probability mass on feature `index`.
    pub fn probability_of(&self, g: &[f32], index: usize) -> Result<f64, EmbeddingError> {
        Ok(self.probabilities(g)?[index])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn emb(v: &[f32]) -> Embedding {
        Embedding::new(v.to_vec()).unwrap()
    }

    #[test]
    fn cosine_known_values() {
        let u = emb(&[0.6, 0.8]);
        assert!((cosine_similarity(&u, &u).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(cosine_similarity(emb(&[1.0, 0.0]), emb(&[0.0, 1.0])).unwrap(), 0.0);
        let c = cosine_similarity(emb(&[1.0, 0.0]), emb(&[1.0, 1.0])).unwrap();
        assert!((c - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-7);
    }

    #[test]
    fn cosine_rejects_bad_input() {
        assert_eq!(
            cosine_similarity(emb(&[1.0, 0.0]), emb(&[1.0, 0.0, 0.0])),
            Err(EmbeddingError::DimensionMismatch { expected: 2, found: 3 })
        );
        assert_eq!(
            cosine_similarity(emb(&[0.0, 0.0]), emb(&[1.0, 0.0])),
            Err(EmbeddingError::ZeroNorm)
        );
    }

    #[test]
    fn softmax_examples() {
        let f = emb(&[0.3, -0.2, 0.9]);
        let g = emb(&[1.0, 2.0, 3.0]);
        let p = softmax_over(&g, &[f.clone(), f.clone()]).unwrap();
        assert!((p[0] - 0.5).abs() < 1e-15 && (p[1] - 0.5).abs() < 1e-15);

        // sim(g, f1) = 1, sim(g, f2) = 0; e/(e+1) = 0.7310585786300049
        let p = softmax_over(emb(&[1.0, 0.0]), &[emb(&[2.0, 0.0]), emb(&[0.0, 1.0])]).unwrap();
        assert!((p[0] - 0.73106).abs() < 1e-4);
        assert!((p[1] - 0.26894).abs() < 1e-4);

        assert_eq!(softmax_over(&g, &[f]).unwrap(), vec![1.0]);
    }

    #[test]
    fn softmax_errors() {
        let empty: [Embedding; 0] = [];
        assert_eq!(softmax_over(emb(&[1.0]), &empty), Err(EmbeddingError::EmptyFeatureList));
        assert!(matches!(
            softmax_over(emb(&[1.0, 0.0]), &[emb(&[1.0])]),
            Err(EmbeddingError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn embedding_validation() {
        assert_eq!(Embedding::new(vec![]), Err(EmbeddingError::Empty));
        assert_eq!(Embedding::new(vec![1.0, f32::NAN]), Err(EmbeddingError::NonFinite(1)));
    }
}
