//! Feature-bank detector: distance from each query patch to its nearest
//! stored normal patch.
//!
//! Subsampling uses greedy k-center (farthest point first) under Euclidean
//! distance. The first center is input index 0; each further center is the
//! point with the largest distance to the already chosen set, ties going to
//! the lowest index. The selection is therefore a pure function of input
//! order.

use std::path::Path;

use super::{Detector, DetectorError, DetectorKind};
use crate::embedding::{read_embedding_file, write_embedding_file, Embedding, EmbeddingError, PatchGrid, PatchGridSet};
use crate::map::{resize_bilinear, AnomalyMap};

fn sq_dist(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum()
}

/// `ceil(fraction · n)`, at least 1. A 1e-9 slack absorbs products such as
/// `0.7 · 10 = 7.000000000000001`.
pub fn coreset_size(fraction: f64, n: usize) -> usize {
    (((fraction * n as f64) - 1e-9).ceil() as usize).clamp(1, n.max(1))
}

/// Indices of `k` greedy k-center picks, in selection order.
pub fn greedy_k_center<P: AsRef<[f32]>>(points: &[P], k: usize) -> Vec<usize> {
    let n = points.len();
    let k = k.min(n);
    if k == 0 {
        return Vec::new();
    }
    let mut selected = Vec::with_capacity(k);
    let mut taken = vec![false; n];
    selected.push(0);
    taken[0] = true;
    let mut min_dist: Vec<f64> = points.iter().map(|p| sq_dist(p.as_ref(), points[0].as_ref())).collect();
    while selected.len() < k {
        // duplicates leave unpicked points at distance 0, so skip taken ones
        let mut best = 0;
        let mut best_d = f64::NEG_INFINITY;
        for (i, &d) in min_dist.iter().enumerate() {
            if !taken[i] && d > best_d {
                best = i;
                best_d = d;
            }
        }
        selected.push(best);
        taken[best] = true;
        let c = points[best].as_ref();
        for (i, p) in points.iter().enumerate() {
            let d = sq_dist(p.as_ref(), c);
            if d < min_dist[i] {
                min_dist[i] = d;
            }
        }
    }
    selected
}

/// Immutable set of normal patch embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureBank {
    dim: usize,
    data: Vec<f32>,
    coreset_fraction: f64,
    source_count: usize,
}

impl FeatureBank {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn coreset_fraction(&self) -> f64 {
        self.coreset_fraction
    }

    pub fn source_count(&self) -> usize {
        self.source_count
    }

    pub fn entries(&self) -> impl ExactSizeIterator<Item = &[f32]> + '_ {
        self.data.chunks_exact(self.dim)
    }

    /// Euclidean distance from `query` to its nearest entry (exact scan).
    pub fn nearest_distance(&self, query: &[f32]) -> Result<f64, DetectorError> {
        if query.len() != self.dim {
            return Err(EmbeddingError::DimensionMismatch {
                expected: self.dim,
                found: query.len(),
            }
            .into());
        }
        Ok(self
            .entries()
            .map(|e| sq_dist(query, e))
            .fold(f64::INFINITY, f64::min)
            .sqrt())
    }

    fn header_id(&self) -> String {
        format!("feature-bank fraction={} source={}", self.coreset_fraction, self.source_count)
    }

    /// Stores the bank as a one-layer `NAEB` file of shape `N × 1 × dim`; the
    /// fraction and source count ride in the image id field.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), DetectorError> {
        let grid = PatchGrid::new(self.len(), 1, self.dim, self.data.clone())?;
        let set = PatchGridSet::new(self.header_id(), vec![grid], None)?;
        Ok(write_embedding_file(&set, path)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, DetectorError> {
        let set = read_embedding_file(path)?;
        let bad = |m: &str| DetectorError::InvalidParameter(format!("not a feature bank file: {m}"));
        let mut fraction = None;
        let mut source = None;
        let mut words = set.image_id().split(' ');
        if words.next() != Some("feature-bank") {
            return Err(bad("missing tag"));
        }
        for w in words {
            match w.split_once('=') {
                Some(("fraction", v)) => fraction = v.parse::<f64>().ok(),
                Some(("source", v)) => source = v.parse::<usize>().ok(),
                _ => return Err(bad(w)),
            }
        }
        let grid = &set.layers()[0];
        if set.layers().len() != 1 || grid.width() != 1 {
            return Err(bad("expected one N x 1 layer"));
        }
        Ok(Self {
            dim: grid.dim(),
            data: grid.as_slice().to_vec(),
            coreset_fraction: fraction.ok_or_else(|| bad("fraction"))?,
            source_count: source.ok_or_else(|| bad("source"))?,
        })
    }
}

/// Bank of all `normal_patches` when `coreset_fraction = 1`, otherwise a
/// greedy k-center subsample of `ceil(fraction · n)` entries.
pub fn build_bank<P: AsRef<[f32]>>(normal_patches: &[P], coreset_fraction: f64) -> Result<FeatureBank, DetectorError> {
    if normal_patches.is_empty() {
        return Err(DetectorError::InvalidParameter("feature bank needs at least one patch".into()));
    }
    if !(coreset_fraction > 0.0 && coreset_fraction <= 1.0) {
        return Err(DetectorError::InvalidParameter(format!(
            "coreset fraction {coreset_fraction} outside (0, 1]"
        )));
    }
    let dim = normal_patches[0].as_ref().len();
    if dim == 0 {
        return Err(EmbeddingError::Empty.into());
    }
    for p in normal_patches {
        let p = p.as_ref();
        if p.len() != dim {
            return Err(EmbeddingError::DimensionMismatch { expected: dim, found: p.len() }.into());
        }
        if let Some(i) = p.iter().position(|v| !v.is_finite()) {
            return Err(EmbeddingError::NonFinite(i).into());
        }
    }
    let n = normal_patches.len();
    let chosen: Vec<usize> = if coreset_fraction >= 1.0 {
        (0..n).collect()
    } else {
        greedy_k_center(normal_patches, coreset_size(coreset_fraction, n))
    };
    let mut data = Vec::with_capacity(chosen.len() * dim);
    for i in chosen {
        data.extend_from_slice(normal_patches[i].as_ref());
    }
    Ok(FeatureBank {
        dim,
        data,
        coreset_fraction,
        source_count: n,
    })
}

/// Nearest-neighbor distance map for one layer, resized to `out_size`.
pub fn bank_anomaly_map(
    set: &PatchGridSet,
    bank: &FeatureBank,
    layer_index: usize,
    out_size: (usize, usize),
) -> Result<AnomalyMap, DetectorError> {
    let grid = set.layer(layer_index).ok_or(DetectorError::LayerOutOfRange {
        index: layer_index,
        count: set.layers().len(),
    })?;
    if grid.dim() != bank.dim() {
        return Err(EmbeddingError::DimensionMismatch {
            expected: bank.dim(),
            found: grid.dim(),
        }
        .into());
    }
    let values = grid
        .patches()
        .map(|p| bank.nearest_distance(p))
        .collect::<Result<Vec<_>, _>>()?;
    let resized = resize_bilinear(&values, grid.height(), grid.width(), out_size.0, out_size.1)?;
    Ok(AnomalyMap::new(out_size.0, out_size.1, resized, "feature_bank")?)
}

/// Collects every patch of `layer_index` across `sets`, in order.
pub fn collect_patches(sets: &[PatchGridSet], layer_index: usize) -> Result<Vec<Embedding>, DetectorError> {
    let mut out = Vec::new();
    for s in sets {
        let grid = s.layer(layer_index).ok_or(DetectorError::LayerOutOfRange {
            index: layer_index,
            count: s.layers().len(),
        })?;
        for p in grid.patches() {
            out.push(Embedding::new(p.to_vec())?);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct FeatureBankDetector {
    bank: FeatureBank,
    layer_index: usize,
    out_size: (usize, usize),
    smoothing_sigma: f64,
}

impl FeatureBankDetector {
    pub fn new(bank: FeatureBank, layer_index: usize, out_size: (usize, usize)) -> Self {
        Self {
            bank,
            layer_index,
            out_size,
            smoothing_sigma: 0.0,
        }
    }

    pub fn with_smoothing(mut self, sigma: f64) -> Self {
        self.smoothing_sigma = sigma;
        self
    }

    pub fn bank(&self) -> &FeatureBank {
        &self.bank
    }
}

impl Detector for FeatureBankDetector {
    fn kind(&self) -> DetectorKind {
        DetectorKind::FeatureBank
    }

    fn score_map(&self, set: &PatchGridSet) -> Result<AnomalyMap, DetectorError> {
        let map = bank_anomaly_map(set, &self.bank, self.layer_index, self.out_size)?;
        Ok(if self.smoothing_sigma > 0.0 {
            map.smoothed(self.smoothing_sigma)?
        } else {
            map
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(n: usize) -> Vec<Vec<f32>> {
        (0..n).map(|i| vec![i as f32, 0.0]).collect()
    }

    #[test]
    fn full_fraction_keeps_everything() {
        let pts: Vec<Vec<f32>> = (0..50).map(|i| vec![i as f32, (i * i) as f32]).collect();
        let bank = build_bank(&pts, 1.0).unwrap();
        assert_eq!(bank.len(), 50);
        assert_eq!(bank.source_count(), 50);
    }

    #[test]
    fn line_picks_far_end_first() {
        // start at 0, farthest is 9
        assert_eq!(greedy_k_center(&line(10), 2), vec![0, 9]);
        let bank = build_bank(&line(10), 0.2).unwrap();
        assert_eq!(bank.entries().collect::<Vec<_>>(), vec![&[0.0, 0.0][..], &[9.0, 0.0][..]]);
        // third pick splits the gap; tie between 4 and 5 goes to the lower index
        assert_eq!(greedy_k_center(&line(10), 3), vec![0, 9, 4]);
    }

    #[test]
    fn coreset_size_rounding() {
        assert_eq!(coreset_size(0.2, 10), 2);
        assert_eq!(coreset_size(0.7, 10), 7);
        assert_eq!(coreset_size(0.25, 10), 3);
        assert_eq!(coreset_size(1e-6, 10), 1);
    }

    #[test]
    fn invalid_parameters() {
        assert!(build_bank(&line(3), 0.0).is_err());
        assert!(build_bank(&line(3), 1.5).is_err());
        let empty: Vec<Vec<f32>> = vec![];
        assert!(build_bank(&empty, 0.5).is_err());
    }

    #[test]
    fn self_query_gives_zero_map() {
        let grid = PatchGrid::new(2, 3, 2, (0..12).map(|v| v as f32).collect()).unwrap();
        let set = PatchGridSet::new("x", vec![grid.clone()], None).unwrap();
        let bank = build_bank(&grid.patches().collect::<Vec<_>>(), 1.0).unwrap();
        let map = bank_anomaly_map(&set, &bank, 0, (4, 4)).unwrap();
        assert!(map.scores().iter().all(|&v| v == 0.0));
        assert!(matches!(
            bank_anomaly_map(&set, &bank, 1, (4, 4)),
            Err(DetectorError::LayerOutOfRange { .. })
        ));
    }

    #[test]
    fn bank_file_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let bank = build_bank(&line(10), 0.3).unwrap();
        bank.save(dir.path().join("b.naeb")).unwrap();
        assert_eq!(FeatureBank::load(dir.path().join("b.naeb")).unwrap(), bank);
    }
}
