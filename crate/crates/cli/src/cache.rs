//! On-disk cache: embedding files, feature banks, an optional projection
//! file and a manifest of their SHA-256 hashes.
//!
//! ```text
//! <cache>/manifest.json
//! <cache>/embeddings/<class>/<split>/<type>/<file>.naeb
//! <cache>/banks/<class>.naeb
//! <cache>/projection.napj        (optional)
//! <cache>/.lock                  (present while a writer runs)
//! ```
//!
//! Writers (`ingest`, `encode-stub`, `build-bank`) hold the lock file for
//! their whole run. Readers refuse to start while it exists.

use std::collections::BTreeMap;
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use log::{info, warn};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use nand_core::detectors::{build_bank, collect_patches, FeatureBank};
use nand_core::embedding::{embedding_path, read_embedding_file, write_embedding_file, EncoderClient, GridLayout, StubEncoder};
use nand_core::eval::DatasetIndex;
use nand_core::prompt::PromptAssets;
use nand_core::synthetic::{plant_defects, PlantParams};

use crate::config::{Config, EncoderKind};

pub const MANIFEST: &str = "manifest.json";
pub const LOCK: &str = ".lock";
pub const EMBEDDINGS: &str = "embeddings";
pub const BANKS: &str = "banks";
pub const PROJECTION: &str = "projection.napj";
/// Planting parameters for stub encoding, read from the dataset root.
pub const PLANTS: &str = "plants.json";

#[derive(Debug, Error)]
pub enum CacheError {
    #[error("cache {0} is locked by another writer (remove the lock file if no writer is running)")]
    Locked(PathBuf),
    #[error("no manifest in {0}; run `nand ingest` first")]
    MissingManifest(PathBuf),
    #[error("manifest {path}: {message}")]
    Manifest { path: PathBuf, message: String },
    #[error("cache entries out of date, run `nand ingest`: {0}")]
    Stale(String),
    #[error("cannot encode {count} image(s), first: {first}")]
    Unencodable { count: usize, first: String },
    #[error("no embeddings for the train split of class {0}")]
    NoTrainImages(String),
    #[error("{path}: {message}")]
    File { path: PathBuf, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn file_err(path: &Path, e: impl std::fmt::Display) -> CacheError {
    CacheError::File {
        path: path.to_owned(),
        message: e.to_string(),
    }
}

pub fn sha256_file(path: &Path) -> Result<String, CacheError> {
    let bytes = fs::read(path).map_err(|e| file_err(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileEntry {
    /// Relative to the cache directory, `/`-separated.
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BankEntry {
    pub path: String,
    pub sha256: String,
    pub fraction: f64,
    pub layer: usize,
    pub source_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheManifest {
    pub version: u32,
    /// Description of the encoder that produced the embeddings; a change
    /// invalidates every entry.
    pub encoder: serde_json::Value,
    pub images: BTreeMap<String, FileEntry>,
    #[serde(default)]
    pub banks: BTreeMap<String, BankEntry>,
    #[serde(default)]
    pub projection: Option<FileEntry>,
}

impl CacheManifest {
    pub fn new(encoder: serde_json::Value) -> Self {
        Self {
            version: 1,
            encoder,
            images: BTreeMap::new(),
            banks: BTreeMap::new(),
            projection: None,
        }
    }

    pub fn load(dir: &Path) -> Result<Option<Self>, CacheError> {
        let path = dir.join(MANIFEST);
        if !path.exists() {
            return Ok(None);
        }
        let text = fs::read_to_string(&path)?;
        serde_json::from_str(&text).map(Some).map_err(|e| CacheError::Manifest {
            path,
            message: e.to_string(),
        })
    }

    pub fn require(dir: &Path) -> Result<Self, CacheError> {
        Self::load(dir)?.ok_or_else(|| CacheError::MissingManifest(dir.to_owned()))
    }

    /// Writes through a temporary file and a rename.
    pub fn save(&self, dir: &Path) -> Result<(), CacheError> {
        fs::create_dir_all(dir)?;
        let tmp = dir.join(format!("{MANIFEST}.tmp"));
        let text = serde_json::to_string_pretty(self).map_err(|e| file_err(&tmp, e))?;
        fs::write(&tmp, text + "\n")?;
        fs::rename(&tmp, dir.join(MANIFEST))?;
        Ok(())
    }

    /// Checks every recorded hash; reports the first few mismatches.
    pub fn verify(&self, dir: &Path) -> Result<(), CacheError> {
        let mut bad = Vec::new();
        let entries = self
            .images
            .values()
            .cloned()
            .chain(self.banks.values().map(|b| FileEntry {
                path: b.path.clone(),
                sha256: b.sha256.clone(),
            }))
            .chain(self.projection.clone());
        for e in entries {
            let p = dir.join(&e.path);
            match sha256_file(&p) {
                Ok(h) if h == e.sha256 => {}
                Ok(_) => bad.push(format!("{} (hash mismatch)", e.path)),
                Err(_) => bad.push(format!("{} (missing)", e.path)),
            }
        }
        if bad.is_empty() {
            Ok(())
        } else {
            let n = bad.len();
            bad.truncate(3);
            Err(CacheError::Stale(format!("{n} entries, e.g. {}", bad.join(", "))))
        }
    }
}

/// Exclusive writer lock; removed on drop.
#[derive(Debug)]
pub struct CacheLock {
    path: PathBuf,
}

impl CacheLock {
    pub fn acquire(dir: &Path) -> Result<Self, CacheError> {
        fs::create_dir_all(dir)?;
        let path = dir.join(LOCK);
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                writeln!(f, "{}", std::process::id())?;
                Ok(Self { path })
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(CacheError::Locked(path)),
            Err(e) => Err(e.into()),
        }
    }
}

impl Drop for CacheLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

/// Fails when a writer currently holds the cache.
pub fn ensure_unlocked(dir: &Path) -> Result<(), CacheError> {
    let path = dir.join(LOCK);
    if path.exists() {
        Err(CacheError::Locked(path))
    } else {
        Ok(())
    }
}

fn rel(path: &str) -> String {
    path.replace('\\', "/")
}

pub fn embedding_rel_path(image_id: &str) -> String {
    rel(&format!("{EMBEDDINGS}/{image_id}.naeb"))
}

pub fn stub_layout(config: &Config) -> Vec<GridLayout> {
    config
        .encoder
        .layers
        .iter()
        .map(|&[h, w, d]| GridLayout::new(h, w, d))
        .collect()
}

pub fn load_plants(config: &Config) -> Result<Option<PlantParams>, CacheError> {
    let path = config.dataset.root.join(PLANTS);
    if !path.is_file() {
        return Ok(None);
    }
    let text = fs::read_to_string(&path)?;
    serde_json::from_str(&text).map(Some).map_err(|e| file_err(&path, e))
}

/// Encoder identity recorded in the manifest.
pub fn encoder_descriptor(config: &Config, plants: Option<&PlantParams>) -> serde_json::Value {
    match config.encoder.kind {
        EncoderKind::Stub => serde_json::json!({
            "kind": "stub",
            "seed": config.encoder.seed,
            "layers": config.encoder.layers,
            "text_dim": config.encoder.text_dim,
            "plants": plants,
        }),
        EncoderKind::Files => serde_json::json!({ "kind": "files" }),
    }
}

/// Stub encoder for `config`, with defects planted when the dataset root
/// carries a plants file.
pub fn stub_encoder(
    config: &Config,
    index: &DatasetIndex,
    assets: &PromptAssets,
    plants: Option<&PlantParams>,
) -> anyhow::Result<StubEncoder> {
    let mut enc = StubEncoder::new(config.encoder.seed, stub_layout(config), config.encoder.text_dim);
    if let Some(p) = plants {
        plant_defects(&mut enc, index, assets, p)?;
    }
    Ok(enc)
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct IngestStats {
    /// Entries whose file matched the recorded hash.
    pub hits: usize,
    /// Files written because no entry existed.
    pub encoded: usize,
    /// Files rewritten because they were missing or corrupted.
    pub rebuilt: usize,
    /// Existing files recorded for the first time.
    pub adopted: usize,
}

/// Brings the cache in line with the dataset. With `force` every embedding
/// is re-encoded. The caller must hold the [`CacheLock`].
pub fn ingest(
    config: &Config,
    index: &DatasetIndex,
    encoder: Option<&dyn EncoderClient>,
    descriptor: serde_json::Value,
    force: bool,
    _lock: &CacheLock,
) -> Result<(CacheManifest, IngestStats), CacheError> {
    let dir = &config.cache.dir;
    let previous = CacheManifest::load(dir)?;
    let reuse = previous.as_ref().is_some_and(|m| m.encoder == descriptor) && !force;
    if previous.is_some() && !reuse {
        info!("encoder changed or re-encode forced; rebuilding all embeddings");
    }
    let mut manifest = CacheManifest::new(descriptor);
    if let (true, Some(prev)) = (reuse, &previous) {
        manifest.banks = prev.banks.clone();
    }
    let mut stats = IngestStats::default();
    let mut failures = Vec::new();
    let emb_root = dir.join(EMBEDDINGS);

    for image in index.all_images() {
        let id = image.id();
        let rel_path = embedding_rel_path(&id);
        let path = embedding_path(&emb_root, &id);
        let old = previous.as_ref().filter(|_| reuse).and_then(|m| m.images.get(&id));
        let state = match old {
            Some(e) if path.is_file() => match sha256_file(&path) {
                Ok(h) if h == e.sha256 => Some(h),
                _ => {
                    warn!("{rel_path}: hash mismatch, rebuilding");
                    None
                }
            },
            Some(_) => {
                info!("{rel_path}: missing, regenerating");
                None
            }
            None => None,
        };
        if let Some(h) = state {
            stats.hits += 1;
            manifest.images.insert(id, FileEntry { path: rel_path, sha256: h });
            continue;
        }
        match encoder {
            Some(enc) => {
                let set = match enc.encode_image(&id) {
                    Ok(s) => s,
                    Err(e) => {
                        failures.push(format!("{id}: {e}"));
                        continue;
                    }
                };
                if let Some(parent) = path.parent() {
                    fs::create_dir_all(parent)?;
                }
                write_embedding_file(&set, &path).map_err(|e| file_err(&path, e))?;
                if old.is_some() {
                    stats.rebuilt += 1;
                } else {
                    stats.encoded += 1;
                }
            }
            None => {
                // files mode: adopt what an external encoder wrote
                if !path.is_file() {
                    failures.push(format!("{id}: no embedding file at {}", path.display()));
                    continue;
                }
                if let Err(e) = read_embedding_file(&path) {
                    failures.push(format!("{id}: {e}"));
                    continue;
                }
                stats.adopted += 1;
            }
        }
        let h = sha256_file(&path)?;
        manifest.images.insert(id, FileEntry { path: rel_path, sha256: h });
    }

    manifest.banks.retain(|_, b| sha256_file(&dir.join(&b.path)).is_ok_and(|h| h == b.sha256));
    let proj = dir.join(PROJECTION);
    if proj.is_file() {
        nand_core::detectors::ProjectionSpec::load(&proj).map_err(|e| file_err(&proj, e))?;
        manifest.projection = Some(FileEntry {
            path: PROJECTION.to_owned(),
            sha256: sha256_file(&proj)?,
        });
    }
    if !failures.is_empty() {
        return Err(CacheError::Unencodable {
            count: failures.len(),
            first: failures.swap_remove(0),
        });
    }
    manifest.save(dir)?;
    Ok((manifest, stats))
}

/// Builds and stores the feature bank of `class` from its cached train
/// embeddings. The caller must hold the [`CacheLock`].
pub fn build_class_bank(
    config: &Config,
    index: &DatasetIndex,
    class: &str,
    fraction: f64,
    _lock: &CacheLock,
) -> anyhow::Result<(FeatureBank, BankEntry)> {
    let dir = &config.cache.dir;
    let mut manifest = CacheManifest::require(dir)?;
    let entry = index
        .class(class)
        .ok_or_else(|| anyhow::anyhow!("unknown class {class}"))?;
    if entry.train.is_empty() {
        return Err(CacheError::NoTrainImages(class.to_owned()).into());
    }
    let emb_root = dir.join(EMBEDDINGS);
    let mut sets = Vec::with_capacity(entry.train.len());
    for image in &entry.train {
        let id = image.id();
        let recorded = manifest
            .images
            .get(&id)
            .ok_or_else(|| CacheError::Stale(format!("{id} not ingested")))?;
        let path = embedding_path(&emb_root, &id);
        if sha256_file(&path)? != recorded.sha256 {
            return Err(CacheError::Stale(format!("{id} changed since ingest")).into());
        }
        sets.push(read_embedding_file(&path).map_err(|e| file_err(&path, e))?);
    }
    let layer = config.detector.bank_layer;
    let patches = collect_patches(&sets, layer)?;
    let bank = build_bank(&patches, fraction)?;
    let rel_path = format!("{BANKS}/{class}.naeb");
    let path = dir.join(&rel_path);
    fs::create_dir_all(path.parent().unwrap_or(dir))?;
    bank.save(&path)?;
    let be = BankEntry {
        path: rel_path,
        sha256: sha256_file(&path)?,
        fraction,
        layer,
        source_count: patches.len(),
    };
    manifest.banks.insert(class.to_owned(), be.clone());
    manifest.save(dir)?;
    Ok((bank, be))
}
