//! Little-endian helpers shared by the `NAEB`, `NAAM` and `NAPJ` formats.

use thiserror::Error;

/// Failure while decoding or encoding one of the binary formats.
///
/// The four data categories are kept apart so callers (and the golden-file
/// tests) can tell a foreign file from a cut-off one from an inconsistent one.
#[derive(Debug, Error)]
pub enum FormatError {
    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: Vec<u8> },
    #[error("unsupported version {found} (expected {expected})")]
    VersionMismatch { expected: u16, found: u16 },
    #[error("truncated payload: {context} needs {needed} bytes, {available} available")]
    Truncated {
        context: &'static str,
        needed: usize,
        available: usize,
    },
    #[error("dimension header inconsistent with payload: {0}")]
    DimensionMismatch(String),
    #[error("invalid content: {0}")]
    Invalid(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub(crate) struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    pub fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    pub fn take(&mut self, n: usize, context: &'static str) -> Result<&'a [u8], FormatError> {
        if self.remaining() < n {
            return Err(FormatError::Truncated {
                context,
                needed: n,
                available: self.remaining(),
            });
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    pub fn magic(&mut self, expected: &[u8; 4]) -> Result<(), FormatError> {
        let n = self.remaining().min(4);
        let found = &self.buf[self.pos..self.pos + n];
        if found != expected {
            return Err(FormatError::BadMagic {
                expected: *expected,
                found: found.to_vec(),
            });
        }
        self.pos += 4;
        Ok(())
    }

    pub fn version(&mut self, expected: u16) -> Result<(), FormatError> {
        let found = self.u16("version")?;
        if found != expected {
            return Err(FormatError::VersionMismatch { expected, found });
        }
        Ok(())
    }

    pub fn u8(&mut self, context: &'static str) -> Result<u8, FormatError> {
        Ok(self.take(1, context)?[0])
    }

    pub fn u16(&mut self, context: &'static str) -> Result<u16, FormatError> {
        let b = self.take(2, context)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    /// Reads `n` finite f32 values.
    pub fn f32s(&mut self, n: usize, context: &'static str) -> Result<Vec<f32>, FormatError> {
        let bytes = self.take(n * 4, context)?;
        let mut out = Vec::with_capacity(n);
        for chunk in bytes.chunks_exact(4) {
            let v = f32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]);
            if !v.is_finite() {
                return Err(FormatError::Invalid(format!("non-finite value in {context}")));
            }
            out.push(v);
        }
        Ok(out)
    }

    /// Payload must be consumed exactly; trailing bytes mean the header
    /// under-declares the payload.
    pub fn finish(&self) -> Result<(), FormatError> {
        if self.remaining() != 0 {
            return Err(FormatError::DimensionMismatch(format!(
                "{} trailing bytes after declared payload",
                self.remaining()
            )));
        }
        Ok(())
    }
}

pub(crate) fn put_u16(out: &mut Vec<u8>, v: u16) {
    out.extend_from_slice(&v.to_le_bytes());
}

pub(crate) fn put_f32s(out: &mut Vec<u8>, values: &[f32]) {
    out.reserve(values.len() * 4);
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

pub(crate) fn checked_u16(value: usize, what: &str) -> Result<u16, FormatError> {
    u16::try_from(value)
        .map_err(|_| FormatError::Invalid(format!("{what} = {value} does not fit in u16")))
}
