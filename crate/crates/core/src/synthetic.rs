//! Planted-defect fixtures on top of the stub encoder.
//!
//! Every test image of an anomaly type gets one square region whose patches
//! are pulled toward `a·û_abn + b·û_group`, where `û_abn` is the unit
//! abnormal text feature of the class and `û_group` the unit text feature
//! that [`crate::nand::add_normality`] would build for the group name with
//! fallback phrases. The zero-shot detector therefore sees the defect, and
//! adding the group's name as a normality finds the same region.

use std::collections::BTreeMap;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::embedding::{Embedding, EncoderClient, GridLayout, Region, RegionBias, StubEncoder};
use crate::eval::{AnomalyGroup, ClassEntry, DatasetIndex, ImageRef, Split, COMBINED, GOOD};
use crate::prompt::{encode_feature, generate_phrases, NormalitySpec, PromptAssets, PromptError, TextFeature, TextRole};

/// One synthetic class: its groups and how many images of each kind.
#[derive(Debug, Clone)]
pub struct SyntheticClass {
    pub name: String,
    pub groups: Vec<AnomalyGroup>,
    pub train: usize,
    pub good: usize,
    pub per_type: usize,
    pub combined: usize,
}

impl SyntheticClass {
    pub fn new(name: impl Into<String>, groups: &[(&str, &[&str])]) -> Self {
        Self {
            name: name.into(),
            groups: groups
                .iter()
                .map(|(g, types)| AnomalyGroup {
                    name: g.to_string(),
                    types: types.iter().map(|t| t.to_string()).collect(),
                })
                .collect(),
            train: 8,
            good: 10,
            per_type: 10,
            combined: 0,
        }
    }

    pub fn with_counts(mut self, train: usize, good: usize, per_type: usize) -> Self {
        self.train = train;
        self.good = good;
        self.per_type = per_type;
        self
    }

    pub fn with_combined(mut self, combined: usize) -> Self {
        self.combined = combined;
        self
    }
}

fn refs(class: &str, split: Split, anomaly_type: &str, n: usize) -> Vec<ImageRef> {
    (0..n)
        .map(|i| ImageRef {
            class: class.to_owned(),
            split,
            anomaly_type: anomaly_type.to_owned(),
            file_name: format!("{i:03}.png"),
        })
        .collect()
}

/// In-memory index matching what [`crate::eval::index_dataset`] would
/// produce for the same tree.
pub fn synthetic_index(root: impl Into<PathBuf>, classes: &[SyntheticClass]) -> DatasetIndex {
    let mut out: Vec<ClassEntry> = classes
        .iter()
        .map(|c| {
            let mut types: Vec<&str> = c.groups.iter().flat_map(|g| g.types.iter().map(String::as_str)).collect();
            types.push(GOOD);
            if c.combined > 0 {
                types.push(COMBINED);
            }
            types.sort_unstable();
            let test = types
                .iter()
                .flat_map(|t| {
                    let n = match *t {
                        GOOD => c.good,
                        COMBINED => c.combined,
                        _ => c.per_type,
                    };
                    refs(&c.name, Split::Test, t, n)
                })
                .collect();
            let mut groups = c.groups.clone();
            groups.sort_by(|a, b| a.name.cmp(&b.name));
            ClassEntry {
                name: c.name.clone(),
                train: refs(&c.name, Split::Train, GOOD, c.train),
                test,
                groups,
            }
        })
        .collect();
    out.sort_by(|a, b| a.name.cmp(&b.name));
    DatasetIndex {
        root: root.into(),
        classes: out,
    }
}

/// Planting strength for one group.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Strength {
    /// Weight on the unit abnormal feature.
    pub abnormal: f64,
    /// Weight on the unit group feature.
    pub identity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantParams {
    pub default: Strength,
    /// Overrides keyed by `"<class>/<group>"`.
    #[serde(default)]
    pub overrides: BTreeMap<String, Strength>,
    /// Side of the planted square as a fraction of the image.
    pub region_side: f64,
}

impl Default for PlantParams {
    fn default() -> Self {
        Self {
            default: Strength {
                abnormal: 3.0,
                identity: 3.0,
            },
            overrides: BTreeMap::new(),
            region_side: 0.375,
        }
    }
}

impl PlantParams {
    pub fn strength(&self, class: &str, group: &str) -> Strength {
        self.overrides
            .get(&format!("{class}/{group}"))
            .copied()
            .unwrap_or(self.default)
    }
}

/// Square region placed by hashing the image id.
pub fn region_for(image_id: &str, side: f64) -> Region {
    let digest = Sha256::digest(format!("nand-synthetic-region/v1\0{image_id}").as_bytes());
    let unit = |b: &[u8]| u16::from_le_bytes([b[0], b[1]]) as f64 / u16::MAX as f64;
    let top = unit(&digest[0..2]) * (1.0 - side);
    let left = unit(&digest[2..4]) * (1.0 - side);
    Region::new(top, left, top + side, left + side)
}

/// Unit direction of the feature `add_normality` builds for `group`.
pub fn group_feature(
    encoder: &dyn EncoderClient,
    assets: &PromptAssets,
    class: &str,
    group: &str,
) -> Result<TextFeature, PromptError> {
    let spec = generate_phrases(NormalitySpec::new(class, group), None)?;
    encode_feature(encoder, &assets.addition_prompts(&spec.phrases)?, TextRole::Addition)
}

fn unit(f: &TextFeature) -> Result<Vec<f64>, PromptError> {
    let n = f.vector.normalized()?;
    Ok(n.as_slice().iter().map(|&v| v as f64).collect())
}

/// Registers planted regions on `encoder` for every anomalous test image in
/// `index`. `combined` images get the mean of all their class's group
/// directions.
pub fn plant_defects(
    encoder: &mut StubEncoder,
    index: &DatasetIndex,
    assets: &PromptAssets,
    params: &PlantParams,
) -> Result<(), PromptError> {
    for class in &index.classes {
        let abn = unit(&encode_feature(&*encoder, &assets.abnormal_prompts(&class.name)?, TextRole::Abnormal)?)?;
        let mut dirs: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
        for g in &class.groups {
            dirs.insert(&g.name, unit(&group_feature(&*encoder, assets, &class.name, &g.name)?)?);
        }
        for image in &class.test {
            let (strength, dir) = if image.anomaly_type == GOOD {
                continue;
            } else if image.anomaly_type == COMBINED {
                let n = dirs.len().max(1) as f64;
                let mut mean = vec![0.0; abn.len()];
                for d in dirs.values() {
                    mean.iter_mut().zip(d).for_each(|(m, v)| *m += v / n);
                }
                (params.default, mean)
            } else {
                let Some(g) = class.groups.iter().find(|g| g.types.contains(&image.anomaly_type)) else {
                    continue;
                };
                (params.strength(&class.name, &g.name), dirs[g.name.as_str()].clone())
            };
            let bias: Vec<f64> = abn
                .iter()
                .zip(&dir)
                .map(|(a, d)| strength.abnormal * a + strength.identity * d)
                .collect();
            let id = image.id();
            encoder.plant(
                id.clone(),
                vec![RegionBias {
                    region: region_for(&id, params.region_side),
                    vector: Embedding::from_f64(&bias)?,
                }],
            );
        }
    }
    Ok(())
}

/// The two-group class used by end-to-end checks and the demo fixture.
///
/// `scuff` defects sit between the abnormal direction and their own name
/// and outscore `dent` defects, which lean less on the abnormal direction.
/// Before any normality is added, `scuff` images therefore rank above
/// `dent` images.
#[derive(Debug, Clone)]
pub struct TwoGroupFixture {
    pub class: String,
    /// Group whose name is added as a normality.
    pub target: String,
    pub other: String,
    pub index: DatasetIndex,
    pub params: PlantParams,
    pub encoder: StubEncoder,
}

pub const FIXTURE_CLASS: &str = "widget";
pub const FIXTURE_DIM: usize = 512;

pub fn fixture_layout() -> Vec<GridLayout> {
    vec![GridLayout::new(8, 8, FIXTURE_DIM), GridLayout::new(8, 8, FIXTURE_DIM)]
}

pub fn fixture_params() -> PlantParams {
    let mut params = PlantParams::default();
    params.overrides.insert(
        format!("{FIXTURE_CLASS}/scuff"),
        Strength {
            abnormal: 10.0,
            identity: 10.0,
        },
    );
    params.overrides.insert(
        format!("{FIXTURE_CLASS}/dent"),
        Strength {
            abnormal: 6.0,
            identity: 8.0,
        },
    );
    params
}

pub fn fixture_class() -> SyntheticClass {
    SyntheticClass::new(FIXTURE_CLASS, &[("scuff", &["scuff"]), ("dent", &["dent"])]).with_counts(4, 20, 20)
}

pub fn two_group_fixture(seed: u64, root: impl Into<PathBuf>) -> Result<TwoGroupFixture, PromptError> {
    let index = synthetic_index(root, &[fixture_class()]);
    let params = fixture_params();
    let mut encoder = StubEncoder::new(seed, fixture_layout(), FIXTURE_DIM);
    plant_defects(&mut encoder, &index, &PromptAssets::default(), &params)?;
    Ok(TwoGroupFixture {
        class: FIXTURE_CLASS.to_owned(),
        target: "scuff".to_owned(),
        other: "dent".to_owned(),
        index,
        params,
        encoder,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn index_shape() {
        let c = SyntheticClass::new("widget", &[("scuff", &["scuff"]), ("dent", &["dent", "ding"])])
            .with_counts(2, 3, 4)
            .with_combined(1);
        let idx = synthetic_index("/tmp/x", &[c]);
        let w = idx.class("widget").unwrap();
        assert_eq!(w.train.len(), 2);
        assert_eq!(w.test.len(), 3 + 3 * 4 + 1);
        assert_eq!(w.groups[0].name, "dent");
        assert_eq!(w.anomaly_types(), vec!["combined", "dent", "ding", "good", "scuff"]);
    }

    #[test]
    fn regions_fit_inside_image() {
        for i in 0..50 {
            let r = region_for(&format!("img{i}"), 0.375);
            assert!(r.top >= 0.0 && r.bottom <= 1.0 + 1e-12 && r.left >= 0.0 && r.right <= 1.0 + 1e-12);
        }
    }

    #[test]
    fn planted_images_differ_only_when_anomalous() {
        let c = SyntheticClass::new("widget", &[("scuff", &["scuff"])]).with_counts(1, 1, 1);
        let idx = synthetic_index("/tmp/x", &[c]);
        let layout = vec![GridLayout::new(4, 4, 16)];
        let plain = StubEncoder::new(5, layout.clone(), 16);
        let mut planted = plain.clone();
        plant_defects(&mut planted, &idx, &PromptAssets::default(), &PlantParams::default()).unwrap();
        let good = "widget/test/good/000.png";
        let bad = "widget/test/scuff/000.png";
        assert_eq!(plain.encode_image(good).unwrap(), planted.encode_image(good).unwrap());
        assert_ne!(plain.encode_image(bad).unwrap(), planted.encode_image(bad).unwrap());
    }
}
