//! Per-layer affine projection of patch embeddings into the text space.
//!
//! `NAPJ` file layout (little-endian, packed):
//!
//! ```text
//! magic     "NAPJ"
//! version   u16 = 1
//! n_layers  u8
//! per layer in_dim u16, out_dim u16, matrix out_dim×in_dim f32 (row-major),
//!           offset out_dim f32
//! ```
//!
//! A layer with `in_dim = out_dim = 0` carries no payload and means identity.

use std::borrow::Cow;
use std::fs;
use std::path::Path;

use crate::binio::{checked_u16, put_f32s, put_u16, FormatError, Reader};
use crate::embedding::EmbeddingError;

pub const MAGIC: &[u8; 4] = b"NAPJ";
pub const VERSION: u16 = 1;

/// `y = M·x + b` with `M` stored row-major as `out_dim × in_dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct Affine {
    in_dim: usize,
    out_dim: usize,
    matrix: Vec<f32>,
    offset: Vec<f32>,
}

impl Affine {
    pub fn new(in_dim: usize, out_dim: usize, matrix: Vec<f32>, offset: Vec<f32>) -> Result<Self, EmbeddingError> {
        if in_dim == 0 || out_dim == 0 {
            return Err(EmbeddingError::InvalidGrid("projection with zero dim".into()));
        }
        if matrix.len() != in_dim * out_dim {
            return Err(EmbeddingError::DimensionMismatch {
                expected: in_dim * out_dim,
                found: matrix.len(),
            });
        }
        if offset.len() != out_dim {
            return Err(EmbeddingError::DimensionMismatch {
                expected: out_dim,
                found: offset.len(),
            });
        }
        if let Some(i) = matrix.iter().chain(&offset).position(|v| !v.is_finite()) {
            return Err(EmbeddingError::NonFinite(i));
        }
        Ok(Self { in_dim, out_dim, matrix, offset })
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    pub fn apply(&self, x: &[f32]) -> Result<Vec<f32>, EmbeddingError> {
        if x.len() != self.in_dim {
            return Err(EmbeddingError::DimensionMismatch {
                expected: self.in_dim,
                found: x.len(),
            });
        }
        Ok(self
            .matrix
            .chunks_exact(self.in_dim)
            .zip(&self.offset)
            .map(|(row, &b)| (crate::embedding::dot(row, x) + b as f64) as f32)
            .collect())
    }
}

/// Optional affine map per layer; layers without one (or beyond the list)
/// pass through unchanged.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ProjectionSpec {
    layers: Vec<Option<Affine>>,
}

impl ProjectionSpec {
    pub fn identity() -> Self {
        Self::default()
    }

    pub fn new(layers: Vec<Option<Affine>>) -> Self {
        Self { layers }
    }

    pub fn layers(&self) -> &[Option<Affine>] {
        &self.layers
    }

    pub fn for_layer(&self, layer: usize) -> Option<&Affine> {
        self.layers.get(layer).and_then(Option::as_ref)
    }

    /// Output dim for a layer of input dim `dim`.
    pub fn output_dim(&self, layer: usize, dim: usize) -> usize {
        self.for_layer(layer).map_or(dim, Affine::out_dim)
    }

    pub fn project<'a>(&self, layer: usize, x: &'a [f32]) -> Result<Cow<'a, [f32]>, EmbeddingError> {
        match self.for_layer(layer) {
            Some(a) => Ok(Cow::Owned(a.apply(x)?)),
            None => Ok(Cow::Borrowed(x)),
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>, FormatError> {
        let n = u8::try_from(self.layers.len())
            .map_err(|_| FormatError::Invalid(format!("{} layers exceed u8", self.layers.len())))?;
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        put_u16(&mut out, VERSION);
        out.push(n);
        for layer in &self.layers {
            match layer {
                Some(a) => {
                    put_u16(&mut out, checked_u16(a.in_dim, "in_dim")?);
                    put_u16(&mut out, checked_u16(a.out_dim, "out_dim")?);
                    put_f32s(&mut out, &a.matrix);
                    put_f32s(&mut out, &a.offset);
                }
                None => {
                    put_u16(&mut out, 0);
                    put_u16(&mut out, 0);
                }
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, FormatError> {
        let mut r = Reader::new(bytes);
        r.magic(MAGIC)?;
        r.version(VERSION)?;
        let n = r.u8("layer count")? as usize;
        let mut layers = Vec::with_capacity(n);
        for _ in 0..n {
            let in_dim = r.u16("layer header")? as usize;
            let out_dim = r.u16("layer header")? as usize;
            match (in_dim, out_dim) {
                (0, 0) => layers.push(None),
                (0, _) | (_, 0) => {
                    return Err(FormatError::DimensionMismatch(format!(
                        "projection {in_dim} -> {out_dim} has a zero side"
                    )))
                }
                _ => {
                    let matrix = r.f32s(in_dim * out_dim, "projection matrix")?;
                    let offset = r.f32s(out_dim, "projection offset")?;
                    let a = Affine::new(in_dim, out_dim, matrix, offset)
                        .map_err(|e| FormatError::Invalid(e.to_string()))?;
                    layers.push(Some(a));
                }
            }
        }
        r.finish()?;
        Ok(Self { layers })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, FormatError> {
        Self::from_bytes(&fs::read(path)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), FormatError> {
        fs::write(path, self.to_bytes()?)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec() -> ProjectionSpec {
        let a = Affine::new(3, 2, vec![1.0, 0.0, 0.0, 0.0, 2.0, -1.0], vec![0.5, 0.0]).unwrap();
        ProjectionSpec::new(vec![None, Some(a)])
    }

    #[test]
    fn apply_affine() {
        let s = spec();
        assert_eq!(&*s.project(0, &[1.0, 2.0, 3.0]).unwrap(), &[1.0, 2.0, 3.0]);
        assert_eq!(&*s.project(1, &[1.0, 2.0, 3.0]).unwrap(), &[1.5, 1.0]);
        assert_eq!(&*s.project(7, &[4.0]).unwrap(), &[4.0]);
        assert!(s.project(1, &[1.0]).is_err());
        assert_eq!(s.output_dim(1, 3), 2);
    }

    #[test]
    fn napj_roundtrip_and_errors() {
        let s = spec();
        let bytes = s.to_bytes().unwrap();
        assert_eq!(ProjectionSpec::from_bytes(&bytes).unwrap(), s);
        assert_eq!(ProjectionSpec::from_bytes(&bytes).unwrap().to_bytes().unwrap(), bytes);

        assert!(matches!(
            ProjectionSpec::from_bytes(&bytes[..bytes.len() - 2]),
            Err(FormatError::Truncated { .. })
        ));
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(matches!(ProjectionSpec::from_bytes(&extra), Err(FormatError::DimensionMismatch(_))));
        let mut magic = bytes;
        magic[3] = b'X';
        assert!(matches!(ProjectionSpec::from_bytes(&magic), Err(FormatError::BadMagic { .. })));
    }
}
