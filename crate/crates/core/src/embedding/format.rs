//! `NAEB` embedding files.
//!
//! ```text
//! magic      "NAEB"
//! version    u16 = 1
//! image_id   u16 byte length + UTF-8 bytes
//! n_layers   u8
//! per layer  height u16, width u16, dim u16
//! has_global u8 (0 or 1)
//! [global dim u16]
//! payload    each layer's grid as row-major f32, then the global vector
//! ```
//!
//! All integers and floats are little-endian, with no padding.

use std::fs;
use std::path::Path;

use super::{Embedding, PatchGrid, PatchGridSet};
use crate::binio::{checked_u16, put_f32s, put_u16, FormatError, Reader};

pub const MAGIC: &[u8; 4] = b"NAEB";
pub const VERSION: u16 = 1;

pub fn encode_embedding_file(set: &PatchGridSet) -> Result<Vec<u8>, FormatError> {
    let id = set.image_id().as_bytes();
    let n_layers = u8::try_from(set.layers().len())
        .map_err(|_| FormatError::Invalid(format!("{} layers exceed u8", set.layers().len())))?;
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    put_u16(&mut out, VERSION);
    put_u16(&mut out, checked_u16(id.len(), "image_id length")?);
    out.extend_from_slice(id);
    out.push(n_layers);
    for layer in set.layers() {
        put_u16(&mut out, checked_u16(layer.height(), "height")?);
        put_u16(&mut out, checked_u16(layer.width(), "width")?);
        put_u16(&mut out, checked_u16(layer.dim(), "dim")?);
    }
    match set.global() {
        Some(g) => {
            out.push(1);
            put_u16(&mut out, checked_u16(g.dim(), "global dim")?);
        }
        None => out.push(0),
    }
    for layer in set.layers() {
        put_f32s(&mut out, layer.as_slice());
    }
    if let Some(g) = set.global() {
        put_f32s(&mut out, g.as_slice());
    }
    Ok(out)
}

pub fn decode_embedding_file(bytes: &[u8]) -> Result<PatchGridSet, FormatError> {
    let mut r = Reader::new(bytes);
    r.magic(MAGIC)?;
    r.version(VERSION)?;
    let id_len = r.u16("image_id length")? as usize;
    let image_id = std::str::from_utf8(r.take(id_len, "image_id")?)
        .map_err(|e| FormatError::Invalid(format!("image_id is not UTF-8: {e}")))?
        .to_owned();
    let n_layers = r.u8("layer count")? as usize;
    if n_layers == 0 {
        return Err(FormatError::Invalid("layer count must be at least 1".into()));
    }
    let mut shapes = Vec::with_capacity(n_layers);
    for _ in 0..n_layers {
        let h = r.u16("layer header")? as usize;
        let w = r.u16("layer header")? as usize;
        let d = r.u16("layer header")? as usize;
        if h == 0 || w == 0 || d == 0 {
            return Err(FormatError::DimensionMismatch(format!("zero extent {h}x{w}x{d}")));
        }
        shapes.push((h, w, d));
    }
    let global_dim = match r.u8("global flag")? {
        0 => None,
        1 => match r.u16("global dim")? as usize {
            0 => return Err(FormatError::DimensionMismatch("zero global dim".into())),
            d => Some(d),
        },
        other => return Err(FormatError::Invalid(format!("global flag {other} is not 0/1"))),
    };

    let declared: usize = shapes.iter().map(|(h, w, d)| h * w * d).sum::<usize>() + global_dim.unwrap_or(0);
    if r.remaining() < declared * 4 {
        return Err(FormatError::Truncated {
            context: "payload",
            needed: declared * 4,
            available: r.remaining(),
        });
    }
    let mut layers = Vec::with_capacity(n_layers);
    for (h, w, d) in shapes {
        let data = r.f32s(h * w * d, "layer payload")?;
        layers.push(PatchGrid::new(h, w, d, data).map_err(|e| FormatError::Invalid(e.to_string()))?);
    }
    let global = match global_dim {
        Some(d) => Some(
            Embedding::new(r.f32s(d, "global payload")?).map_err(|e| FormatError::Invalid(e.to_string()))?,
        ),
        None => None,
    };
    r.finish()?;
    PatchGridSet::new(image_id, layers, global).map_err(|e| FormatError::Invalid(e.to_string()))
}

pub fn write_embedding_file(set: &PatchGridSet, path: impl AsRef<Path>) -> Result<(), FormatError> {
    fs::write(path, encode_embedding_file(set)?)?;
    Ok(())
}

pub fn read_embedding_file(path: impl AsRef<Path>) -> Result<PatchGridSet, FormatError> {
    decode_embedding_file(&fs::read(path)?)
}
