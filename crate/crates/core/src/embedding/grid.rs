use super::{Embedding, EmbeddingError};

/// One layer of patch embeddings, stored row-major as `height × width × dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchGrid {
    height: usize,
    width: usize,
    dim: usize,
    data: Vec<f32>,
}

impl PatchGrid {
    pub fn new(height: usize, width: usize, dim: usize, data: Vec<f32>) -> Result<Self, EmbeddingError> {
        if height == 0 || width == 0 || dim == 0 {
            return Err(EmbeddingError::InvalidGrid(format!(
                "zero extent in {height}x{width}x{dim}"
            )));
        }
        let expected = height * width * dim;
        if data.len() != expected {
            return Err(EmbeddingError::InvalidGrid(format!(
                "{height}x{width}x{dim} grid needs {expected} values, got {}",
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(EmbeddingError::NonFinite(i));
        }
        Ok(Self { height, width, dim, data })
    }

    /// Builds a grid from per-patch vectors in row-major order.
    pub fn from_patches(height: usize, width: usize, patches: &[Embedding]) -> Result<Self, EmbeddingError> {
        let dim = patches.first().map(Embedding::dim).unwrap_or(0);
        let mut data = Vec::with_capacity(height * width * dim);
        for p in patches {
            if p.dim() != dim {
                return Err(EmbeddingError::DimensionMismatch { expected: dim, found: p.dim() });
            }
            data.extend_from_slice(p.as_slice());
        }
        Self::new(height, width, dim, data)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    pub fn patch(&self, row: usize, col: usize) -> &[f32] {
        let start = (row * self.width + col) * self.dim;
        &self.data[start..start + self.dim]
    }

    /// Patches in row-major order.
    pub fn patches(&self) -> impl ExactSizeIterator<Item = &[f32]> + '_ {
        self.data.chunks_exact(self.dim)
    }
}

/// Per-image patch grids for one or more encoder layers plus an optional
/// global image vector.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchGridSet {
    image_id: String,
    layers: Vec<PatchGrid>,
    global: Option<Embedding>,
}

impl PatchGridSet {
    pub fn new(
        image_id: impl Into<String>,
        layers: Vec<PatchGrid>,
        global: Option<Embedding>,
    ) -> Result<Self, EmbeddingError> {
        if layers.is_empty() {
            return Err(EmbeddingError::InvalidGrid("layer count must be at least 1".into()));
        }
        Ok(Self {
            image_id: image_id.into(),
            layers,
            global,
        })
    }

    pub fn image_id(&self) -> &str {
        &self.image_id
    }

    pub fn layers(&self) -> &[PatchGrid] {
        &self.layers
    }

    pub fn layer(&self, index: usize) -> Option<&PatchGrid> {
        self.layers.get(index)
    }

    pub fn global(&self) -> Option<&Embedding> {
        self.global.as_ref()
    }
}
