//! Score grids, resizing, smoothing and the `NAAM` map file.
//!
//! Resizing is bilinear with corner-aligned sampling: output pixel `i` of `n`
//! samples source coordinate `i·(m−1)/(n−1)`, so the four corners of input
//! and output coincide. A one-pixel output axis samples source coordinate 0.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::binio::{checked_u16, put_f32s, put_u16, FormatError, Reader};

pub const MAGIC: &[u8; 4] = b"NAAM";
pub const VERSION: u16 = 1;

#[derive(Debug, Error)]
pub enum MapError {
    #[error("map has zero extent")]
    Empty,
    #[error("{height}x{width} map needs {expected} scores, got {found}")]
    Shape {
        height: usize,
        width: usize,
        expected: usize,
        found: usize,
    },
    #[error("score {value} at index {index} is negative or non-finite")]
    InvalidScore { index: usize, value: f64 },
    #[error(transparent)]
    Format(#[from] FormatError),
}

/// Row-major grid of non-negative finite scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnomalyMap {
    height: usize,
    width: usize,
    scores: Vec<f64>,
    origin: String,
}

impl AnomalyMap {
    pub fn new(height: usize, width: usize, scores: Vec<f64>, origin: impl Into<String>) -> Result<Self, MapError> {
        let g = Grid::new(height, width, scores)?;
        if let Some((index, &value)) = g.values.iter().enumerate().find(|(_, v)| **v < 0.0 || !v.is_finite()) {
            return Err(MapError::InvalidScore { index, value });
        }
        Ok(Self {
            height,
            width,
            scores: g.values,
            origin: origin.into(),
        })
    }

    pub fn zeros(height: usize, width: usize, origin: impl Into<String>) -> Result<Self, MapError> {
        Self::new(height, width, vec![0.0; height * width], origin)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn size(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.scores[row * self.width + col]
    }

    pub fn origin(&self) -> &str {
        &self.origin
    }

    pub fn with_origin(mut self, origin: impl Into<String>) -> Self {
        self.origin = origin.into();
        self
    }

    pub fn max(&self) -> f64 {
        self.scores.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.scores.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Bilinear resize to `(height, width)`. Non-negativity is preserved since
    /// every output is a convex combination of inputs.
    pub fn resized(&self, height: usize, width: usize) -> Result<Self, MapError> {
        let values = resize_bilinear(&self.scores, self.height, self.width, height, width)?;
        Self::new(height, width, values, self.origin.clone())
    }

    pub fn smoothed(&self, sigma: f64) -> Result<Self, MapError> {
        let values = gaussian_smooth(&self.scores, self.height, self.width, sigma);
        Self::new(self.height, self.width, values, self.origin.clone())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>, FormatError> {
        let mut out = Vec::with_capacity(10 + self.scores.len() * 4);
        out.extend_from_slice(MAGIC);
        put_u16(&mut out, VERSION);
        put_u16(&mut out, checked_u16(self.height, "height")?);
        put_u16(&mut out, checked_u16(self.width, "width")?);
        let f: Vec<f32> = self.scores.iter().map(|&v| v as f32).collect();
        put_f32s(&mut out, &f);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8], origin: impl Into<String>) -> Result<Self, MapError> {
        let mut r = Reader::new(bytes);
        r.magic(MAGIC)?;
        r.version(VERSION)?;
        let h = r.u16("height")? as usize;
        let w = r.u16("width")? as usize;
        if h == 0 || w == 0 {
            return Err(FormatError::DimensionMismatch(format!("zero extent {h}x{w}")).into());
        }
        let values = r.f32s(h * w, "scores")?;
        r.finish()?;
        Self::new(h, w, values.into_iter().map(f64::from).collect(), origin)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), MapError> {
        fs::write(path, self.to_bytes()?).map_err(FormatError::from)?;
        Ok(())
    }
}

/// Reads a map written in the `NAAM` format, e.g. by a third-party detector.
pub fn load_external_map(path: impl AsRef<Path>) -> Result<AnomalyMap, MapError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(FormatError::from)?;
    AnomalyMap::from_bytes(&bytes, format!("external:{}", path.display()))
}

/// Plain shape-checked grid, shared by anomaly and suppression maps.
pub(crate) struct Grid {
    pub values: Vec<f64>,
}

impl Grid {
    pub fn new(height: usize, width: usize, values: Vec<f64>) -> Result<Self, MapError> {
        if height == 0 || width == 0 {
            return Err(MapError::Empty);
        }
        if values.len() != height * width {
            return Err(MapError::Shape {
                height,
                width,
                expected: height * width,
                found: values.len(),
            });
        }
        Ok(Self { values })
    }
}

fn axis_samples(from: usize, to: usize) -> Vec<(usize, usize, f64)> {
    (0..to)
        .map(|i| {
            let src = if to == 1 || from == 1 {
                0.0
            } else {
                i as f64 * (from - 1) as f64 / (to - 1) as f64
            };
            let lo = (src.floor() as usize).min(from - 1);
            let hi = (lo + 1).min(from - 1);
            (lo, hi, src - lo as f64)
        })
        .collect()
}

/// Corner-aligned bilinear resampling of a row-major grid.
pub fn resize_bilinear(
    values: &[f64],
    height: usize,
    width: usize,
    out_height: usize,
    out_width: usize,
) -> Result<Vec<f64>, MapError> {
    Grid::new(height, width, values.to_vec())?;
    if out_height == 0 || out_width == 0 {
        return Err(MapError::Empty);
    }
    if (height, width) == (out_height, out_width) {
        return Ok(values.to_vec());
    }
    let rows = axis_samples(height, out_height);
    let cols = axis_samples(width, out_width);
    let mut out = Vec::with_capacity(out_height * out_width);
    for &(r0, r1, fy) in &rows {
        for &(c0, c1, fx) in &cols {
            let top = values[r0 * width + c0] * (1.0 - fx) + values[r0 * width + c1] * fx;
            let bottom = values[r1 * width + c0] * (1.0 - fx) + values[r1 * width + c1] * fx;
            out.push(top * (1.0 - fy) + bottom * fy);
        }
    }
    Ok(out)
}

/// Separable Gaussian blur with kernel radius `ceil(3σ)` and clamped borders.
/// `σ = 0` returns the input unchanged.
pub fn gaussian_smooth(values: &[f64], height: usize, width: usize, sigma: f64) -> Vec<f64> {
    if sigma <= 0.0 {
        return values.to_vec();
    }
    let radius = (3.0 * sigma).ceil() as isize;
    let kernel: Vec<f64> = (-radius..=radius)
        .map(|k| (-(k * k) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = kernel.iter().sum();
    let kernel: Vec<f64> = kernel.into_iter().map(|k| k / total).collect();
    let clamp = |i: isize, n: usize| i.clamp(0, n as isize - 1) as usize;

    let mut tmp = vec![0.0; values.len()];
    for r in 0..height {
        for c in 0..width {
            tmp[r * width + c] = kernel
                .iter()
                .enumerate()
                .map(|(k, w)| w * values[r * width + clamp(c as isize + k as isize - radius, width)])
                .sum();
        }
    }
    let mut out = vec![0.0; values.len()];
    for r in 0..height {
        for c in 0..width {
            out[r * width + c] = kernel
                .iter()
                .enumerate()
                .map(|(k, w)| w * tmp[clamp(r as isize + k as isize - radius, height) * width + c])
                .sum();
        }
    }
    out
}
