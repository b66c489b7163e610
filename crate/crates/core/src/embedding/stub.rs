//! Deterministic stand-in encoder for tests and synthetic fixtures.
//!
//! Frozen construction (changing any step invalidates golden files):
//!
//! 1. Key: SHA-256 over the domain tag `b"nand-stub-image/v1"`, then
//!    `len(image_id)` as u64 LE, the UTF-8 `image_id`, `seed` as u64 LE, and
//!    `layer`, `row`, `col` each as u32 LE. Text vectors use the tag
//!    `b"nand-stub-text/v1"`, then `len(text)` as u64 LE, the text, `seed` as
//!    u64 LE and `dim` as u32 LE.
//! 2. The 32-byte digest seeds a `ChaCha8Rng`.
//! 3. Components are standard normals drawn pairwise by Box–Muller from
//!    successive `next_u64` outputs: `u1 = ((x >> 11) + 1)·2⁻⁵³`,
//!    `u2 = (y >> 11)·2⁻⁵³`, `r = sqrt(−2 ln u1)`, giving `r·cos(2πu2)` then
//!    `r·sin(2πu2)`.
//! 4. The vector is normalized in `f64` and narrowed to `f32`.
//!
//! A planted region bias is added to the unit random vector before a second
//! normalization.

use std::collections::HashMap;

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};
use sha2::{Digest, Sha256};

use super::{Embedding, EmbeddingError, EncoderClient, EncoderError, PatchGrid, PatchGridSet};

const IMAGE_TAG: &[u8] = b"nand-stub-image/v1";
const TEXT_TAG: &[u8] = b"nand-stub-text/v1";

/// Declared shape of one stub layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GridLayout {
    pub height: usize,
    pub width: usize,
    pub dim: usize,
}

impl GridLayout {
    pub fn new(height: usize, width: usize, dim: usize) -> Self {
        Self { height, width, dim }
    }
}

/// Rectangle in fractional image coordinates (`0.0..=1.0`), so one region
/// addresses the same image area on layers of different resolution. A patch
/// belongs to the region when its center lies in `[top, bottom) × [left, right)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Region {
    pub top: f64,
    pub left: f64,
    pub bottom: f64,
    pub right: f64,
}

impl Region {
    pub fn new(top: f64, left: f64, bottom: f64, right: f64) -> Self {
        Self { top, left, bottom, right }
    }

    pub fn contains(&self, row: usize, col: usize, height: usize, width: usize) -> bool {
        let y = (row as f64 + 0.5) / height as f64;
        let x = (col as f64 + 0.5) / width as f64;
        y >= self.top && y < self.bottom && x >= self.left && x < self.right
    }
}

/// Additive bias for patches inside `region`. Applied to every layer whose
/// dim equals the bias dim; its norm sets the strength relative to the unit
/// random vector.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionBias {
    pub region: Region,
    pub vector: Embedding,
}

fn key(tag: &[u8], text: &str, seed: u64, tail: &[u32]) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(tag);
    h.update((text.len() as u64).to_le_bytes());
    h.update(text.as_bytes());
    h.update(seed.to_le_bytes());
    for t in tail {
        h.update(t.to_le_bytes());
    }
    h.finalize().into()
}

fn gaussian_unit(key: [u8; 32], dim: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::from_seed(key);
    let scale = 1.0 / (1u64 << 53) as f64;
    let mut v = Vec::with_capacity(dim + 1);
    while v.len() < dim {
        let u1 = ((rng.next_u64() >> 11) + 1) as f64 * scale;
        let u2 = (rng.next_u64() >> 11) as f64 * scale;
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = 2.0 * std::f64::consts::PI * u2;
        v.push(r * theta.cos());
        v.push(r * theta.sin());
    }
    v.truncate(dim);
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter_mut().for_each(|x| *x /= n);
    v
}

fn unit_f32(v: &[f64]) -> Vec<f32> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter().map(|x| (x / n) as f32).collect()
}

/// Pseudo-random unit patch embeddings keyed by `(image_id, seed, layer, row, col)`,
/// with optional planted region biases.
pub fn stub_encode(
    image_id: &str,
    seed: u64,
    layout: &[GridLayout],
    biases: &[RegionBias],
) -> Result<PatchGridSet, EmbeddingError> {
    if layout.is_empty() {
        return Err(EmbeddingError::InvalidGrid("stub layout is empty".into()));
    }
    for b in biases {
        if !layout.iter().any(|l| l.dim == b.vector.dim()) {
            return Err(EmbeddingError::DimensionMismatch {
                expected: layout[0].dim,
                found: b.vector.dim(),
            });
        }
    }
    let mut layers = Vec::with_capacity(layout.len());
    for (li, l) in layout.iter().enumerate() {
        let mut data = Vec::with_capacity(l.height * l.width * l.dim);
        for row in 0..l.height {
            for col in 0..l.width {
                let k = key(IMAGE_TAG, image_id, seed, &[li as u32, row as u32, col as u32]);
                let mut v = gaussian_unit(k, l.dim);
                let mut biased = false;
                for b in biases {
                    if b.vector.dim() == l.dim && b.region.contains(row, col, l.height, l.width) {
                        for (x, &bv) in v.iter_mut().zip(b.vector.as_slice()) {
                            *x += bv as f64;
                        }
                        biased = true;
                    }
                }
                if biased && v.iter().all(|x| *x == 0.0) {
                    return Err(EmbeddingError::ZeroNorm);
                }
                data.extend(unit_f32(&v));
            }
        }
        layers.push(PatchGrid::new(l.height, l.width, l.dim, data)?);
    }
    PatchGridSet::new(image_id, layers, None)
}

/// Unit text vector keyed by `(text, seed, dim)`.
pub fn stub_text_embedding(text: &str, seed: u64, dim: usize) -> Result<Embedding, EmbeddingError> {
    if dim == 0 {
        return Err(EmbeddingError::Empty);
    }
    let v = gaussian_unit(key(TEXT_TAG, text, seed, &[dim as u32]), dim);
    Embedding::new(unit_f32(&v))
}

/// [`EncoderClient`] backed by [`stub_encode`] and [`stub_text_embedding`].
#[derive(Debug, Clone)]
pub struct StubEncoder {
    seed: u64,
    layout: Vec<GridLayout>,
    text_dim: usize,
    plants: HashMap<String, Vec<RegionBias>>,
}

impl StubEncoder {
    pub fn new(seed: u64, layout: Vec<GridLayout>, text_dim: usize) -> Self {
        Self {
            seed,
            layout,
            text_dim,
            plants: HashMap::new(),
        }
    }

    /// Registers region biases for one image id.
    pub fn plant(&mut self, image_id: impl Into<String>, biases: Vec<RegionBias>) {
        self.plants.insert(image_id.into(), biases);
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn layout(&self) -> &[GridLayout] {
        &self.layout
    }

    pub fn text_dim(&self) -> usize {
        self.text_dim
    }
}

impl EncoderClient for StubEncoder {
    fn encode_image(&self, image_id: &str) -> Result<PatchGridSet, EncoderError> {
        let biases = self.plants.get(image_id).map(Vec::as_slice).unwrap_or(&[]);
        Ok(stub_encode(image_id, self.seed, &self.layout, biases)?)
    }

    fn encode_text(&self, prompt: &str) -> Result<Embedding, EncoderError> {
        Ok(stub_text_embedding(prompt, self.seed, self.text_dim)?)
    }
}
