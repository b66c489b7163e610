use super::{Detector, DetectorError, DetectorKind, ProjectionSpec};
use crate::embedding::{PatchGridSet, SimilarityHead};
use crate::map::{resize_bilinear, AnomalyMap};
use crate::prompt::TextFeature;

/// For each selected layer, the softmax mass on feature `target` of `head`
/// at every patch (after projection), resized to `out_size`.
pub(crate) fn layer_affinity_maps(
    set: &PatchGridSet,
    head: &SimilarityHead,
    target: usize,
    projection: &ProjectionSpec,
    layers: &[usize],
    out_size: (usize, usize),
) -> Result<Vec<Vec<f64>>, DetectorError> {
    if layers.is_empty() {
        return Err(DetectorError::EmptyLayers);
    }
    if out_size.0 == 0 || out_size.1 == 0 {
        return Err(DetectorError::InvalidParameter(format!("output size {out_size:?}")));
    }
    let mut maps = Vec::with_capacity(layers.len());
    for &li in layers {
        let grid = set.layer(li).ok_or(DetectorError::LayerOutOfRange {
            index: li,
            count: set.layers().len(),
        })?;
        let mut values = Vec::with_capacity(grid.height() * grid.width());
        for patch in grid.patches() {
            let projected = projection.project(li, patch)?;
            values.push(head.probability_of(&projected, target)?);
        }
        maps.push(resize_bilinear(&values, grid.height(), grid.width(), out_size.0, out_size.1)?);
    }
    Ok(maps)
}

fn all_layers(set: &PatchGridSet) -> Vec<usize> {
    (0..set.layers().len()).collect()
}

/// Zero-shot anomaly map over all layers of `set`.
///
/// Per layer and patch the entry is `softmax(patch, {f_abn, f_nor})[abnormal]`;
/// layer maps are resized to `out_size` and then summed, so entries lie in
/// `[0, L]` for `L` layers.
pub fn zs_anomaly_map(
    set: &PatchGridSet,
    f_nor: &TextFeature,
    f_abn: &TextFeature,
    projection: &ProjectionSpec,
    out_size: (usize, usize),
) -> Result<AnomalyMap, DetectorError> {
    zs_anomaly_map_layers(set, f_nor, f_abn, projection, &all_layers(set), out_size)
}

/// [`zs_anomaly_map`] restricted to the given layer indices.
pub fn zs_anomaly_map_layers(
    set: &PatchGridSet,
    f_nor: &TextFeature,
    f_abn: &TextFeature,
    projection: &ProjectionSpec,
    layers: &[usize],
    out_size: (usize, usize),
) -> Result<AnomalyMap, DetectorError> {
    let head = SimilarityHead::new(&[f_abn.vector.as_slice(), f_nor.vector.as_slice()])?;
    let maps = layer_affinity_maps(set, &head, 0, projection, layers, out_size)?;
    let mut sum = vec![0.0; out_size.0 * out_size.1];
    for m in &maps {
        for (s, v) in sum.iter_mut().zip(m) {
            *s += v;
        }
    }
    Ok(AnomalyMap::new(out_size.0, out_size.1, sum, "zero_shot_text")?)
}

/// Text-feature detector comparing projected patches against normal and
/// abnormal prompt ensembles.
#[derive(Debug, Clone)]
pub struct ZeroShotDetector {
    f_nor: TextFeature,
    f_abn: TextFeature,
    projection: ProjectionSpec,
    layers: Option<Vec<usize>>,
    out_size: (usize, usize),
    smoothing_sigma: f64,
}

impl ZeroShotDetector {
    pub fn new(f_nor: TextFeature, f_abn: TextFeature, projection: ProjectionSpec, out_size: (usize, usize)) -> Self {
        Self {
            f_nor,
            f_abn,
            projection,
            layers: None,
            out_size,
            smoothing_sigma: 0.0,
        }
    }

    /// Restricts scoring to these layers; `None` uses every layer present.
    pub fn with_layers(mut self, layers: Option<Vec<usize>>) -> Self {
        self.layers = layers;
        self
    }

    pub fn with_smoothing(mut self, sigma: f64) -> Self {
        self.smoothing_sigma = sigma;
        self
    }

    pub fn abnormal_feature(&self) -> &TextFeature {
        &self.f_abn
    }

    pub fn projection(&self) -> &ProjectionSpec {
        &self.projection
    }

    pub fn layers(&self) -> Option<&[usize]> {
        self.layers.as_deref()
    }
}

impl Detector for ZeroShotDetector {
    fn kind(&self) -> DetectorKind {
        DetectorKind::ZeroShotText
    }

    fn score_map(&self, set: &PatchGridSet) -> Result<AnomalyMap, DetectorError> {
        let layers = self.layers.clone().unwrap_or_else(|| all_layers(set));
        let map = zs_anomaly_map_layers(set, &self.f_nor, &self.f_abn, &self.projection, &layers, self.out_size)?;
        Ok(if self.smoothing_sigma > 0.0 {
            map.smoothed(self.smoothing_sigma)?
        } else {
            map
        })
    }

    fn normal_feature(&self) -> Option<&TextFeature> {
        Some(&self.f_nor)
    }
}
