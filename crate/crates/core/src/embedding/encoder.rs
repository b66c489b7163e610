use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

use super::format::{read_embedding_file, write_embedding_file};
use super::{stub_text_embedding, Embedding, EmbeddingError, PatchGrid, PatchGridSet};
use crate::binio::FormatError;

#[derive(Debug, Error)]
pub enum EncoderError {
    #[error("no embedding available for image {0:?}")]
    UnknownImage(String),
    #[error("no embedding available for prompt {0:?}")]
    UnknownPrompt(String),
    #[error("{path}: {source}")]
    Format {
        path: PathBuf,
        #[source]
        source: FormatError,
    },
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
    #[error("{0}")]
    Other(String),
}

/// Resolves images to patch grids and prompts to text embeddings.
///
/// Implementations must be deterministic: the same input under the same
/// configuration yields bit-identical output.
pub trait EncoderClient: Send + Sync {
    fn encode_image(&self, image_id: &str) -> Result<PatchGridSet, EncoderError>;
    fn encode_text(&self, prompt: &str) -> Result<Embedding, EncoderError>;
}

impl<T: EncoderClient + ?Sized> EncoderClient for std::sync::Arc<T> {
    fn encode_image(&self, image_id: &str) -> Result<PatchGridSet, EncoderError> {
        (**self).encode_image(image_id)
    }

    fn encode_text(&self, prompt: &str) -> Result<Embedding, EncoderError> {
        (**self).encode_text(prompt)
    }
}

/// Prompt embeddings exported by an external text encoder.
///
/// Stored as a pair of files: `<stem>.naeb`, a single-layer `NAEB` file of
/// shape `N × 1 × dim` (row `i` is prompt `i`), and `<stem>.txt` holding the
/// `N` prompts one per line in the same order.
#[derive(Debug, Clone, Default)]
pub struct TextTable {
    prompts: Vec<String>,
    vectors: Vec<Embedding>,
    lookup: HashMap<String, usize>,
}

impl TextTable {
    pub fn new(prompts: Vec<String>, vectors: Vec<Embedding>) -> Result<Self, EncoderError> {
        if prompts.len() != vectors.len() {
            return Err(EncoderError::Other(format!(
                "{} prompts but {} vectors",
                prompts.len(),
                vectors.len()
            )));
        }
        let lookup = prompts.iter().enumerate().map(|(i, p)| (p.clone(), i)).collect();
        Ok(Self { prompts, vectors, lookup })
    }

    pub fn prompts(&self) -> &[String] {
        &self.prompts
    }

    pub fn vectors(&self) -> &[Embedding] {
        &self.vectors
    }

    pub fn get(&self, prompt: &str) -> Option<&Embedding> {
        self.lookup.get(prompt).map(|&i| &self.vectors[i])
    }

    pub fn load(stem: impl AsRef<Path>) -> Result<Self, EncoderError> {
        let stem = stem.as_ref();
        let naeb = stem.with_extension("naeb");
        let txt = stem.with_extension("txt");
        let set = read_embedding_file(&naeb).map_err(|source| EncoderError::Format { path: naeb.clone(), source })?;
        let text = fs::read_to_string(&txt).map_err(|e| EncoderError::Format {
            path: txt.clone(),
            source: e.into(),
        })?;
        let prompts: Vec<String> = text.lines().map(str::to_owned).collect();
        let grid = &set.layers()[0];
        if set.layers().len() != 1 || grid.width() != 1 {
            return Err(EncoderError::Format {
                path: naeb,
                source: FormatError::DimensionMismatch("text table must be one N x 1 layer".into()),
            });
        }
        let vectors = grid
            .patches()
            .map(|p| Embedding::new(p.to_vec()))
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(prompts, vectors)
    }

    pub fn save(&self, stem: impl AsRef<Path>) -> Result<(), EncoderError> {
        let stem = stem.as_ref();
        let naeb = stem.with_extension("naeb");
        let dim = self.vectors.first().map(Embedding::dim).ok_or(EmbeddingError::EmptyFeatureList)?;
        let grid = PatchGrid::from_patches(self.vectors.len(), 1, &self.vectors)?;
        debug_assert_eq!(grid.dim(), dim);
        let set = PatchGridSet::new("prompts", vec![grid], None)?;
        write_embedding_file(&set, &naeb).map_err(|source| EncoderError::Format { path: naeb, source })?;
        let mut text = self.prompts.join("\n");
        text.push('\n');
        fs::write(stem.with_extension("txt"), text).map_err(|e| EncoderError::Format {
            path: stem.with_extension("txt"),
            source: e.into(),
        })?;
        Ok(())
    }
}

/// Where a [`FileCacheEncoder`] gets its text embeddings from.
#[derive(Debug, Clone)]
pub enum TextSource {
    /// Exported prompt table; unknown prompts are an error.
    Table(TextTable),
    /// Stub text encoder with the given seed and dim.
    Stub { seed: u64, dim: usize },
}

/// Reads pre-computed `NAEB` files from `<root>/<image_id>.naeb`.
#[derive(Debug, Clone)]
pub struct FileCacheEncoder {
    root: PathBuf,
    text: TextSource,
}

impl FileCacheEncoder {
    pub fn new(root: impl Into<PathBuf>, text: TextSource) -> Self {
        Self { root: root.into(), text }
    }

    pub fn path_for(&self, image_id: &str) -> PathBuf {
        embedding_path(&self.root, image_id)
    }
}

/// Cache location of an image's embedding file.
pub fn embedding_path(root: &Path, image_id: &str) -> PathBuf {
    root.join(format!("{image_id}.naeb"))
}

impl EncoderClient for FileCacheEncoder {
    fn encode_image(&self, image_id: &str) -> Result<PatchGridSet, EncoderError> {
        let path = self.path_for(image_id);
        if !path.is_file() {
            return Err(EncoderError::UnknownImage(image_id.to_owned()));
        }
        read_embedding_file(&path).map_err(|source| EncoderError::Format { path, source })
    }

    fn encode_text(&self, prompt: &str) -> Result<Embedding, EncoderError> {
        match &self.text {
            TextSource::Table(t) => t
                .get(prompt)
                .cloned()
                .ok_or_else(|| EncoderError::UnknownPrompt(prompt.to_owned())),
            TextSource::Stub { seed, dim } => Ok(stub_text_embedding(prompt, *seed, *dim)?),
        }
    }
}
