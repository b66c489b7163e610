//! Normality addition by normality detection.
//!
//! The added normality's text feature `f_add` takes the place of the
//! abnormal feature in the zero-shot map, giving a suppression map that marks
//! where the new normal pattern appears. Any base detector's map is then
//! attenuated as `A_final = A ⊙ (1 − A_sup)`.
//!
//! Unlike the zero-shot anomaly map, layer maps are averaged rather than
//! summed here, which keeps `A_sup` in `[0, 1]` for any layer count and makes
//! `1 − A_sup` a valid attenuation factor. Maps are applied raw: no
//! normalization of `A` is performed, and since the image score is a max,
//! rankings within one base detector are unaffected by a positive rescaling
//! of `A`.

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::detectors::{layer_affinity_maps, Detector, DetectorError, DetectorKind, ProjectionSpec};
use crate::embedding::{EncoderClient, PatchGridSet, SimilarityHead};
use crate::map::{resize_bilinear, AnomalyMap, Grid, MapError};
use crate::prompt::{encode_feature, NormalitySpec, PromptAssets, PromptError, TextFeature, TextRole};

/// Output size of suppression maps unless configured otherwise.
pub const DEFAULT_SUPPRESSION_SIZE: (usize, usize) = (256, 256);

#[derive(Debug, Error)]
pub enum NandError {
    #[error("suppression value {value} at index {index} outside [0, 1]")]
    OutOfRange { index: usize, value: f64 },
    #[error("normality spec has no phrases; generate them first")]
    EmptyPhrases,
    #[error("suppression maps differ in size: {0:?} vs {1:?}")]
    SizeMismatch((usize, usize), (usize, usize)),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Detector(#[from] DetectorError),
    #[error(transparent)]
    Map(#[from] MapError),
}

/// `[0, 1]`-valued grid marking regions of an added normality.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuppressionMap {
    height: usize,
    width: usize,
    values: Vec<f64>,
    normality: Option<NormalitySpec>,
}

impl SuppressionMap {
    pub fn new(
        height: usize,
        width: usize,
        values: Vec<f64>,
        normality: Option<NormalitySpec>,
    ) -> Result<Self, NandError> {
        let g = Grid::new(height, width, values)?;
        check_unit_range(&g.values)?;
        Ok(Self {
            height,
            width,
            values: g.values,
            normality,
        })
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

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn normality(&self) -> Option<&NormalitySpec> {
        self.normality.as_ref()
    }

    pub fn resized(&self, height: usize, width: usize) -> Result<Self, NandError> {
        let values = resize_bilinear(&self.values, self.height, self.width, height, width)?;
        // bilinear weights are convex; clamp only absorbs rounding
        let values = values.into_iter().map(|v| v.clamp(0.0, 1.0)).collect();
        Self::new(height, width, values, self.normality.clone())
    }

    /// Single map equivalent to applying `self` and then `other`:
    /// `1 − (1 − s₁)(1 − s₂)`. Sizes must agree.
    pub fn combine(&self, other: &Self) -> Result<Self, NandError> {
        if self.size() != other.size() {
            return Err(NandError::SizeMismatch(self.size(), other.size()));
        }
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (1.0 - (1.0 - a) * (1.0 - b)).clamp(0.0, 1.0))
            .collect();
        Self::new(self.height, self.width, values, None)
    }

    /// The map viewed as an [`AnomalyMap`], e.g. for `NAAM` export.
    pub fn to_anomaly_map(&self) -> Result<AnomalyMap, NandError> {
        Ok(AnomalyMap::new(self.height, self.width, self.values.clone(), "suppression")?)
    }
}

fn check_unit_range(values: &[f64]) -> Result<(), NandError> {
    match values.iter().enumerate().find(|(_, v)| !(0.0..=1.0).contains(*v)) {
        Some((index, &value)) => Err(NandError::OutOfRange { index, value }),
        None => Ok(()),
    }
}

/// Suppression map over all layers of `set`: per patch
/// `softmax(patch, {f_add, f_nor})[addition]`, resized to `out_size` and
/// averaged across layers.
pub fn suppression_map(
    set: &PatchGridSet,
    f_add: &TextFeature,
    f_nor: &TextFeature,
    projection: &ProjectionSpec,
    out_size: (usize, usize),
) -> Result<SuppressionMap, NandError> {
    let layers: Vec<usize> = (0..set.layers().len()).collect();
    suppression_map_layers(set, f_add, f_nor, projection, &layers, out_size)
}

/// [`suppression_map`] restricted to the given layers.
pub fn suppression_map_layers(
    set: &PatchGridSet,
    f_add: &TextFeature,
    f_nor: &TextFeature,
    projection: &ProjectionSpec,
    layers: &[usize],
    out_size: (usize, usize),
) -> Result<SuppressionMap, NandError> {
    let head = SimilarityHead::new(&[f_add.vector.as_slice(), f_nor.vector.as_slice()])
        .map_err(DetectorError::from)?;
    let maps = layer_affinity_maps(set, &head, 0, projection, layers, out_size)?;
    let n = maps.len() as f64;
    let mut mean = vec![0.0; out_size.0 * out_size.1];
    for m in &maps {
        for (s, v) in mean.iter_mut().zip(m) {
            *s += v;
        }
    }
    let values = mean.into_iter().map(|s| (s / n).clamp(0.0, 1.0)).collect();
    SuppressionMap::new(out_size.0, out_size.1, values, None)
}

/// `A ⊙ (1 − A_sup)`, resizing the suppression map to the anomaly map's
/// lattice first.
pub fn apply_suppression(a: &AnomalyMap, s: &SuppressionMap) -> Result<AnomalyMap, NandError> {
    check_unit_range(s.values())?;
    let s = if s.size() == a.size() {
        s.clone()
    } else {
        s.resized(a.height(), a.width())?
    };
    let values = a
        .scores()
        .iter()
        .zip(s.values())
        .map(|(&x, &v)| x * (1.0 - v))
        .collect();
    Ok(AnomalyMap::new(a.height(), a.width(), values, a.origin())?)
}

/// Knobs for [`add_normality_with`].
#[derive(Debug, Clone)]
pub struct NandConfig {
    pub assets: PromptAssets,
    pub out_size: (usize, usize),
    /// Layers used for normality detection; `None` means all present.
    pub layers: Option<Vec<usize>>,
}

impl Default for NandConfig {
    fn default() -> Self {
        Self {
            assets: PromptAssets::default(),
            out_size: DEFAULT_SUPPRESSION_SIZE,
            layers: None,
        }
    }
}

/// A base detector whose maps are attenuated by one added normality.
#[derive(Clone)]
pub struct SuppressedDetector {
    base: Arc<dyn Detector>,
    spec: NormalitySpec,
    f_add: TextFeature,
    f_nor: TextFeature,
    projection: ProjectionSpec,
    layers: Option<Vec<usize>>,
    out_size: (usize, usize),
}

impl std::fmt::Debug for SuppressedDetector {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SuppressedDetector")
            .field("base", &self.base.kind())
            .field("spec", &self.spec)
            .field("out_size", &self.out_size)
            .finish_non_exhaustive()
    }
}

impl SuppressedDetector {
    pub fn base(&self) -> &Arc<dyn Detector> {
        &self.base
    }

    pub fn spec(&self) -> &NormalitySpec {
        &self.spec
    }

    pub fn addition_feature(&self) -> &TextFeature {
        &self.f_add
    }

    pub fn normal_text_feature(&self) -> &TextFeature {
        &self.f_nor
    }

    pub fn suppression_for(&self, set: &PatchGridSet) -> Result<SuppressionMap, NandError> {
        let all: Vec<usize>;
        let layers = match &self.layers {
            Some(l) => l.as_slice(),
            None => {
                all = (0..set.layers().len()).collect();
                &all
            }
        };
        let mut s = suppression_map_layers(set, &self.f_add, &self.f_nor, &self.projection, layers, self.out_size)?;
        s.normality = Some(self.spec.clone());
        Ok(s)
    }

    /// Base map, suppression map and final map for one image.
    pub fn explain(&self, set: &PatchGridSet) -> Result<(AnomalyMap, SuppressionMap, AnomalyMap), NandError> {
        let before = self.base.score_map(set)?;
        let sup = self.suppression_for(set)?;
        let after = apply_suppression(&before, &sup)?;
        Ok((before, sup, after))
    }
}

impl Detector for SuppressedDetector {
    fn kind(&self) -> DetectorKind {
        DetectorKind::Suppressed
    }

    fn score_map(&self, set: &PatchGridSet) -> Result<AnomalyMap, DetectorError> {
        let (_, _, after) = self.explain(set).map_err(|e| match e {
            NandError::Detector(d) => d,
            other => DetectorError::InvalidParameter(other.to_string()),
        })?;
        Ok(after)
    }

    fn normal_feature(&self) -> Option<&TextFeature> {
        self.base.normal_feature()
    }
}

/// Adds `spec` as a normality to `base` using default prompt assets and a
/// 256×256 suppression map over all layers.
pub fn add_normality(
    base: Arc<dyn Detector>,
    spec: &NormalitySpec,
    text_encoder: &dyn EncoderClient,
    projection: ProjectionSpec,
) -> Result<SuppressedDetector, NandError> {
    add_normality_with(base, spec, text_encoder, projection, &NandConfig::default())
}

/// Builds `S_add` from the spec's phrases and the template list, embeds it
/// into `f_add`, and wraps `base`. `f_nor` is the base detector's own normal
/// feature when it has one, otherwise the default normal ensemble for the
/// spec's class.
pub fn add_normality_with(
    base: Arc<dyn Detector>,
    spec: &NormalitySpec,
    text_encoder: &dyn EncoderClient,
    projection: ProjectionSpec,
    config: &NandConfig,
) -> Result<SuppressedDetector, NandError> {
    if spec.phrases.is_empty() {
        return Err(NandError::EmptyPhrases);
    }
    let add_prompts = config.assets.addition_prompts(&spec.phrases)?;
    let f_add = encode_feature(text_encoder, &add_prompts, TextRole::Addition)?;
    let f_nor = match base.normal_feature() {
        Some(f) => f.clone(),
        None => encode_feature(text_encoder, &config.assets.normal_prompts(&spec.class_name)?, TextRole::Normal)?,
    };
    Ok(SuppressedDetector {
        base,
        spec: spec.clone(),
        f_add,
        f_nor,
        projection,
        layers: config.layers.clone(),
        out_size: config.out_size,
    })
}
