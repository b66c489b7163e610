//! Read-only view of a built cache: dataset index, encoder, detectors.
//!
//! A [`Runtime`] is assembled once and never mutated afterwards, so the
//! service can share it across requests behind an `Arc`.

use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use nand_core::detectors::{ExternalMapDetector, FeatureBank, FeatureBankDetector, ProjectionSpec, ZeroShotDetector};
use nand_core::embedding::{EncoderClient, FileCacheEncoder, TextSource, TextTable};
use nand_core::eval::{build_scenario, index_dataset, run_before_after, DatasetIndex, EvalError, EvalReport, GroupTable};
use nand_core::nand::{add_normality_with, NandConfig, SuppressedDetector};
use nand_core::prompt::{
    encode_feature, generate_phrases, CommandPhraseGenerator, HttpPhraseGenerator, PhraseGenerator, PromptAssets, TextRole,
};
use nand_core::{Detector, NormalitySpec};

use crate::cache::{ensure_unlocked, CacheManifest, BANKS, EMBEDDINGS, PROJECTION};
use crate::config::{Config, DetectorChoice, EncoderKind};
use crate::render::{render_map, RenderedMap};

#[derive(Debug, Error)]
pub enum RuntimeError {
    #[error("{0}")]
    NotFound(String),
    #[error("{0}")]
    BadRequest(String),
    /// The evaluation protocol cannot be applied, e.g. an all-normal split.
    #[error("{0}")]
    Protocol(String),
    #[error("{0}")]
    Internal(String),
}

fn internal(e: impl std::fmt::Display) -> RuntimeError {
    RuntimeError::Internal(e.to_string())
}

impl From<EvalError> for RuntimeError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::UnknownClass(_) | EvalError::UnknownGroup { .. } => Self::NotFound(e.to_string()),
            EvalError::AllNormal { .. } | EvalError::AllAbnormal { .. } | EvalError::SingleClassLabels => {
                Self::Protocol(e.to_string())
            }
            other => Self::Internal(other.to_string()),
        }
    }
}

pub fn load_assets(config: &Config) -> anyhow::Result<PromptAssets> {
    let p = &config.prompts;
    Ok(PromptAssets::load(
        p.templates.as_deref(),
        p.normal_states.as_deref(),
        p.abnormal_states.as_deref(),
    )?)
}

pub fn load_group_table(config: &Config) -> anyhow::Result<GroupTable> {
    Ok(match &config.dataset.groups {
        Some(p) => GroupTable::load(p)?,
        None => GroupTable::mvtec(),
    })
}

pub fn index(config: &Config) -> anyhow::Result<DatasetIndex> {
    Ok(index_dataset(&config.dataset.root, &load_group_table(config)?)?)
}

pub fn phrase_generator(config: &Config) -> Option<Arc<dyn PhraseGenerator>> {
    let g = &config.phrase_generator;
    let timeout = g.timeout_secs.map(Duration::from_secs);
    if let Some(url) = &g.url {
        let mut h = HttpPhraseGenerator::new(url.clone());
        if let Some(t) = timeout {
            h = h.with_timeout(t);
        }
        return Some(Arc::new(h));
    }
    if let Some([program, args @ ..]) = g.command.as_deref() {
        let mut c = CommandPhraseGenerator::new(program.clone(), args.to_vec());
        if let Some(t) = timeout {
            c = c.with_timeout(t);
        }
        return Some(Arc::new(c));
    }
    None
}

/// Scores and maps for one image before and after adding a normality.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Preview {
    pub class: String,
    pub image_id: String,
    pub normality_text: String,
    pub phrases: Vec<String>,
    pub detector: DetectorChoice,
    pub score_before: f64,
    pub score_after: f64,
    pub map_before: RenderedMap,
    pub map_sup: RenderedMap,
    pub map_after: RenderedMap,
}

pub struct Runtime {
    pub config: Config,
    pub index: DatasetIndex,
    pub assets: PromptAssets,
    pub encoder: Arc<dyn EncoderClient>,
    pub projection: ProjectionSpec,
    pub generator: Option<Arc<dyn PhraseGenerator>>,
    banks: BTreeMap<String, Arc<FeatureBank>>,
}

impl std::fmt::Debug for Runtime {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Runtime")
            .field("dataset", &self.config.dataset.root)
            .field("cache", &self.config.cache.dir)
            .field("classes", &self.index.class_names())
            .field("banks", &self.banks.keys().collect::<Vec<_>>())
            .finish_non_exhaustive()
    }
}

impl Runtime {
    /// Validates the config, checks the manifest hashes and loads banks and
    /// the projection. Fails while a writer holds the cache.
    pub fn open(config: Config) -> anyhow::Result<Self> {
        config.validate()?;
        let dir = config.cache.dir.clone();
        ensure_unlocked(&dir)?;
        let manifest = CacheManifest::require(&dir)?;
        manifest.verify(&dir)?;
        let index = index(&config)?;
        let assets = load_assets(&config)?;
        let text = match config.encoder.kind {
            EncoderKind::Stub => TextSource::Stub {
                seed: config.encoder.seed,
                dim: config.encoder.text_dim,
            },
            EncoderKind::Files => {
                let stem = config.encoder.text_table.as_ref().expect("validated");
                TextSource::Table(TextTable::load(stem)?)
            }
        };
        let encoder: Arc<dyn EncoderClient> = Arc::new(FileCacheEncoder::new(dir.join(EMBEDDINGS), text));
        let projection = match &manifest.projection {
            Some(_) => ProjectionSpec::load(dir.join(PROJECTION))?,
            None => ProjectionSpec::identity(),
        };
        let mut banks = BTreeMap::new();
        for class in manifest.banks.keys() {
            banks.insert(class.clone(), Arc::new(FeatureBank::load(dir.join(BANKS).join(format!("{class}.naeb")))?));
        }
        Ok(Self {
            generator: phrase_generator(&config),
            config,
            index,
            assets,
            encoder,
            projection,
            banks,
        })
    }

    fn check_class(&self, class: &str) -> Result<(), RuntimeError> {
        match self.index.class(class) {
            Some(_) => Ok(()),
            None => Err(RuntimeError::NotFound(format!("unknown class {class}"))),
        }
    }

    pub fn detector(&self, class: &str, choice: DetectorChoice) -> Result<Arc<dyn Detector>, RuntimeError> {
        self.check_class(class)?;
        let cfg = &self.config.detector;
        let out = self.config.map_size();
        Ok(match choice {
            DetectorChoice::Zs => {
                let nor = self.assets.normal_prompts(class).map_err(internal)?;
                let abn = self.assets.abnormal_prompts(class).map_err(internal)?;
                let f_nor = encode_feature(self.encoder.as_ref(), &nor, TextRole::Normal).map_err(internal)?;
                let f_abn = encode_feature(self.encoder.as_ref(), &abn, TextRole::Abnormal).map_err(internal)?;
                Arc::new(
                    ZeroShotDetector::new(f_nor, f_abn, self.projection.clone(), out)
                        .with_layers(cfg.layers.clone())
                        .with_smoothing(cfg.smoothing_sigma),
                )
            }
            DetectorChoice::Bank => {
                let bank = self.banks.get(class).ok_or_else(|| {
                    RuntimeError::NotFound(format!("no feature bank for {class}; run `nand build-bank --class {class}`"))
                })?;
                Arc::new(
                    FeatureBankDetector::new((**bank).clone(), cfg.bank_layer, out).with_smoothing(cfg.smoothing_sigma),
                )
            }
            DetectorChoice::External => Arc::new(ExternalMapDetector::new(self.config.external_dir())),
        })
    }

    pub fn suppressed(
        &self,
        base: Arc<dyn Detector>,
        class: &str,
        normality_text: &str,
    ) -> Result<SuppressedDetector, RuntimeError> {
        if normality_text.trim().is_empty() {
            return Err(RuntimeError::BadRequest("normality text is empty".into()));
        }
        let spec = generate_phrases(NormalitySpec::new(class, normality_text), self.generator.as_deref())
            .map_err(|e| RuntimeError::BadRequest(e.to_string()))?;
        let cfg = NandConfig {
            assets: self.assets.clone(),
            out_size: self.config.suppression_size(),
            layers: self.config.detector.layers.clone(),
        };
        add_normality_with(base, &spec, self.encoder.as_ref(), self.projection.clone(), &cfg).map_err(internal)
    }

    /// One anomaly group of `class` added as a normality, scored before and
    /// after.
    pub fn evaluate_group(&self, class: &str, group: &str, choice: DetectorChoice) -> Result<EvalReport, RuntimeError> {
        let scenario = build_scenario(&self.index, class, group)?;
        let base = self.detector(class, choice)?;
        let sup = self.suppressed(base.clone(), class, group)?;
        Ok(run_before_after(base.as_ref(), &sup, &scenario, self.encoder.as_ref())?)
    }

    /// Groups to evaluate: `group` alone or every group of the class.
    pub fn groups_of(&self, class: &str, group: Option<&str>) -> Result<Vec<String>, RuntimeError> {
        let entry = self
            .index
            .class(class)
            .ok_or_else(|| RuntimeError::NotFound(format!("unknown class {class}")))?;
        match group {
            Some(g) if entry.group(g).is_some() => Ok(vec![g.to_owned()]),
            Some(g) => Err(RuntimeError::NotFound(format!("unknown group {g} for class {class}"))),
            None => Ok(entry.groups.iter().map(|g| g.name.clone()).collect()),
        }
    }

    /// `relative_id` is the image path inside the class, e.g.
    /// `test/scuff/003.png`.
    pub fn preview(
        &self,
        class: &str,
        relative_id: &str,
        normality_text: &str,
        choice: DetectorChoice,
    ) -> Result<Preview, RuntimeError> {
        self.check_class(class)?;
        let image = self
            .index
            .image(class, relative_id)
            .ok_or_else(|| RuntimeError::NotFound(format!("unknown image {class}/{relative_id}")))?;
        let base = self.detector(class, choice)?;
        let sup = self.suppressed(base, class, normality_text)?;
        let set = self.encoder.encode_image(&image.id()).map_err(internal)?;
        let (before, s, after) = sup.explain(&set).map_err(internal)?;
        let render = |h, w, v: &[f64]| render_map(h, w, v).map_err(internal);
        Ok(Preview {
            class: class.to_owned(),
            image_id: relative_id.to_owned(),
            normality_text: normality_text.to_owned(),
            phrases: sup.spec().phrases.clone(),
            detector: choice,
            score_before: before.max(),
            score_after: after.max(),
            map_before: render(before.height(), before.width(), before.scores())?,
            map_sup: render(s.height(), s.width(), s.values())?,
            map_after: render(after.height(), after.width(), after.scores())?,
        })
    }
}
