use std::io::Cursor;

use base64::Engine;
use image::{GrayImage, ImageFormat};
use serde::{Deserialize, Serialize};

/// A map as an 8-bit grayscale PNG plus the value range it was scaled from.
/// Level `k` stands for `min + k / 255 · (max − min)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RenderedMap {
    /// Base64 PNG bytes.
    pub png: String,
    pub min: f64,
    pub max: f64,
    pub height: usize,
    pub width: usize,
}

impl RenderedMap {
    pub fn png_bytes(&self) -> Result<Vec<u8>, base64::DecodeError> {
        base64::engine::general_purpose::STANDARD.decode(&self.png)
    }
}

/// Scales `values` to 0..=255 between their min and max; a constant map
/// renders as all zeros.
pub fn to_levels(values: &[f64]) -> (Vec<u8>, f64, f64) {
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = max - min;
    let levels = values
        .iter()
        .map(|&v| {
            if span > 0.0 {
                ((v - min) / span * 255.0).round().clamp(0.0, 255.0) as u8
            } else {
                0
            }
        })
        .collect();
    (levels, min, max)
}

pub fn render_map(height: usize, width: usize, values: &[f64]) -> anyhow::Result<RenderedMap> {
    let (levels, min, max) = to_levels(values);
    let img = GrayImage::from_raw(width as u32, height as u32, levels)
        .ok_or_else(|| anyhow::anyhow!("{height}x{width} map has {} values", values.len()))?;
    let mut buf = Cursor::new(Vec::new());
    img.write_to(&mut buf, ImageFormat::Png)?;
    Ok(RenderedMap {
        png: base64::engine::general_purpose::STANDARD.encode(buf.into_inner()),
        min,
        max,
        height,
        width,
    })
}
