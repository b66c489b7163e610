//! TOML configuration with `NAND_` environment overrides.
//!
//! Every key may be overridden by an environment variable named after its
//! dotted path: `detector.coreset_fraction` becomes
//! `NAND_DETECTOR_CORESET_FRACTION`. Override values are parsed as TOML
//! values when possible (`0.25`, `[0, 1]`, `true`) and as plain strings
//! otherwise.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;
use toml::{Table, Value};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("reading {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("parsing {path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("environment override {var}: {message}")]
    Override { var: String, message: String },
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum DetectorChoice {
    Zs,
    Bank,
    External,
}

impl DetectorChoice {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Zs => "zs",
            Self::Bank => "bank",
            Self::External => "external",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncoderKind {
    /// Deterministic stub embeddings computed from image ids.
    Stub,
    /// Embedding files written by an external encoder; nothing is computed.
    Files,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub root: PathBuf,
    /// Group table file; the built-in MVTec AD grouping when absent.
    pub groups: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CacheConfig {
    pub dir: PathBuf,
}

impl Default for CacheConfig {
    fn default() -> Self {
        Self { dir: PathBuf::from("cache") }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderConfig {
    pub kind: EncoderKind,
    pub seed: u64,
    /// Stub grid layout as `[height, width, dim]` per layer.
    pub layers: Vec<[usize; 3]>,
    pub text_dim: usize,
    /// Prompt table stem (`<stem>.naeb` + `<stem>.txt`) for `files` mode.
    pub text_table: Option<PathBuf>,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            kind: EncoderKind::Stub,
            seed: 42,
            layers: vec![[8, 8, 512], [8, 8, 512]],
            text_dim: 512,
            text_table: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectorConfig {
    pub kind: DetectorChoice,
    /// Layers used by the zero-shot detector and for suppression; all when
    /// absent.
    pub layers: Option<Vec<usize>>,
    pub coreset_fraction: f64,
    pub smoothing_sigma: f64,
    pub bank_layer: usize,
    /// Anomaly map size `[height, width]`.
    pub map_size: [usize; 2],
    /// Directory of `NAAM` maps for the external detector.
    pub external_dir: Option<PathBuf>,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            kind: DetectorChoice::Zs,
            layers: None,
            coreset_fraction: 0.1,
            smoothing_sigma: 0.0,
            bank_layer: 0,
            map_size: [64, 64],
            external_dir: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SuppressionConfig {
    pub size: [usize; 2],
}

impl Default for SuppressionConfig {
    fn default() -> Self {
        Self { size: [256, 256] }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PromptConfig {
    pub templates: Option<PathBuf>,
    pub normal_states: Option<PathBuf>,
    pub abnormal_states: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorConfig {
    /// HTTP endpoint receiving the instruction as a POST body.
    pub url: Option<String>,
    /// Local program reading the instruction on stdin.
    pub command: Option<Vec<String>>,
    pub timeout_secs: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceConfig {
    pub port: u16,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self { port: 8080 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub dataset: DatasetConfig,
    #[serde(default)]
    pub cache: CacheConfig,
    #[serde(default)]
    pub encoder: EncoderConfig,
    #[serde(default)]
    pub detector: DetectorConfig,
    #[serde(default)]
    pub suppression: SuppressionConfig,
    #[serde(default)]
    pub prompts: PromptConfig,
    #[serde(default)]
    pub phrase_generator: GeneratorConfig,
    #[serde(default)]
    pub service: ServiceConfig,
}

/// Every overridable key, as dotted paths.
pub const KEYS: &[&str] = &[
    "dataset.root",
    "dataset.groups",
    "cache.dir",
    "encoder.kind",
    "encoder.seed",
    "encoder.layers",
    "encoder.text_dim",
    "encoder.text_table",
    "detector.kind",
    "detector.layers",
    "detector.coreset_fraction",
    "detector.smoothing_sigma",
    "detector.bank_layer",
    "detector.map_size",
    "detector.external_dir",
    "suppression.size",
    "prompts.templates",
    "prompts.normal_states",
    "prompts.abnormal_states",
    "phrase_generator.url",
    "phrase_generator.command",
    "phrase_generator.timeout_secs",
    "service.port",
];

pub fn env_var_for(key: &str) -> String {
    format!("NAND_{}", key.replace('.', "_").to_uppercase())
}

fn parse_override(raw: &str) -> Value {
    match format!("v = {raw}").parse::<Table>() {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| Value::String(raw.to_owned())),
        Err(_) => Value::String(raw.to_owned()),
    }
}

fn set_path(table: &mut Table, key: &str, value: Value) -> Result<(), String> {
    let (section, field) = key.split_once('.').ok_or_else(|| format!("bad key {key}"))?;
    let entry = table
        .entry(section.to_owned())
        .or_insert_with(|| Value::Table(Table::new()));
    match entry {
        Value::Table(t) => {
            t.insert(field.to_owned(), value);
            Ok(())
        }
        _ => Err(format!("{section} is not a table")),
    }
}

impl Config {
    /// Parses `text` and applies overrides from `env`. Relative paths are
    /// resolved against `base`.
    pub fn from_parts(
        text: &str,
        origin: &Path,
        base: &Path,
        env: impl Fn(&str) -> Option<String>,
    ) -> Result<Self, ConfigError> {
        let mut table: Table = text.parse().map_err(|e: toml::de::Error| ConfigError::Parse {
            path: origin.to_owned(),
            message: e.message().to_owned(),
        })?;
        for key in KEYS {
            let var = env_var_for(key);
            if let Some(raw) = env(&var) {
                let value = match *key {
                    // paths and urls stay strings even if they parse as TOML
                    k if k.ends_with(".root")
                        || k.ends_with(".dir")
                        || k.ends_with("_dir")
                        || k.ends_with(".url")
                        || k.starts_with("prompts.")
                        || k == "dataset.groups"
                        || k == "encoder.text_table" =>
                    {
                        Value::String(raw)
                    }
                    _ => parse_override(&raw),
                };
                set_path(&mut table, key, value).map_err(|message| ConfigError::Override { var, message })?;
            }
        }
        let mut config: Config = Value::Table(table).try_into().map_err(|e: toml::de::Error| ConfigError::Parse {
            path: origin.to_owned(),
            message: e.message().to_owned(),
        })?;
        config.resolve_paths(base);
        Ok(config)
    }

    /// Reads `path` (or starts from an empty document when `None`) and
    /// applies the process environment.
    pub fn load(path: Option<&Path>) -> Result<Self, ConfigError> {
        let (text, origin, base) = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|source| ConfigError::Read {
                    path: p.to_owned(),
                    source,
                })?;
                let base = p.parent().map(Path::to_owned).unwrap_or_default();
                (text, p.to_owned(), base)
            }
            None => (String::new(), PathBuf::from("<environment>"), PathBuf::new()),
        };
        Self::from_parts(&text, &origin, &base, |v| std::env::var(v).ok())
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() && !base.as_os_str().is_empty() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.dataset.root);
        fix(&mut self.cache.dir);
        for p in [
            &mut self.dataset.groups,
            &mut self.encoder.text_table,
            &mut self.detector.external_dir,
            &mut self.prompts.templates,
            &mut self.prompts.normal_states,
            &mut self.prompts.abnormal_states,
        ]
        .into_iter()
        .flatten()
        {
            fix(p);
        }
    }

    /// Range checks and existence of every input path.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        let f = self.detector.coreset_fraction;
        if !(f > 0.0 && f <= 1.0) {
            return bad(format!("detector.coreset_fraction {f} outside (0, 1]"));
        }
        let s = self.detector.smoothing_sigma;
        if !(s >= 0.0 && s.is_finite()) {
            return bad(format!("detector.smoothing_sigma {s} must be >= 0"));
        }
        if self.detector.map_size.contains(&0) || self.suppression.size.contains(&0) {
            return bad("map sizes must be positive".into());
        }
        if self.encoder.layers.is_empty() || self.encoder.layers.iter().any(|l| l.contains(&0)) {
            return bad("encoder.layers needs at least one layer with positive extents".into());
        }
        if self.encoder.text_dim == 0 {
            return bad("encoder.text_dim must be positive".into());
        }
        if !self.dataset.root.is_dir() {
            return bad(format!("dataset.root {} is not a directory", self.dataset.root.display()));
        }
        for (key, p) in [
            ("dataset.groups", &self.dataset.groups),
            ("prompts.templates", &self.prompts.templates),
            ("prompts.normal_states", &self.prompts.normal_states),
            ("prompts.abnormal_states", &self.prompts.abnormal_states),
        ] {
            if let Some(p) = p {
                if !p.is_file() {
                    return bad(format!("{key} {} does not exist", p.display()));
                }
            }
        }
        if self.encoder.kind == EncoderKind::Files && self.encoder.text_table.is_none() {
            return bad("encoder.kind = \"files\" needs encoder.text_table".into());
        }
        if matches!(&self.phrase_generator.command, Some(c) if c.is_empty()) {
            return bad("phrase_generator.command is empty".into());
        }
        Ok(())
    }

    pub fn map_size(&self) -> (usize, usize) {
        (self.detector.map_size[0], self.detector.map_size[1])
    }

    pub fn suppression_size(&self) -> (usize, usize) {
        (self.suppression.size[0], self.suppression.size[1])
    }

    pub fn external_dir(&self) -> PathBuf {
        self.detector
            .external_dir
            .clone()
            .unwrap_or_else(|| self.cache.dir.join("external"))
    }
}
