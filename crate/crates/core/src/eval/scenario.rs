use serde::{Deserialize, Serialize};

use super::dataset::{DatasetIndex, ImageRef, COMBINED, GOOD};
use super::EvalError;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledImage {
    pub image: ImageRef,
    /// 0 normal, 1 abnormal.
    pub label: u8,
}

/// Test split of one class relabeled for one added anomaly group.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Scenario {
    pub class: String,
    pub added_group: String,
    pub items: Vec<LabeledImage>,
    pub excluded: Vec<ImageRef>,
}

impl Scenario {
    pub fn labels(&self) -> Vec<u8> {
        self.items.iter().map(|i| i.label).collect()
    }

    pub fn count(&self, label: u8) -> usize {
        self.items.iter().filter(|i| i.label == label).count()
    }
}

/// Relabels `class`'s test split so `group`'s anomaly types count as normal.
///
/// `good` images stay 0, types of the group become 0, every other type stays
/// 1, and `combined` images are dropped.
pub fn build_scenario(index: &DatasetIndex, class: &str, group: &str) -> Result<Scenario, EvalError> {
    let entry = index.class(class).ok_or_else(|| EvalError::UnknownClass(class.to_owned()))?;
    let g = entry.group(group).ok_or_else(|| EvalError::UnknownGroup {
        class: class.to_owned(),
        group: group.to_owned(),
    })?;
    let mut items = Vec::with_capacity(entry.test.len());
    let mut excluded = Vec::new();
    for image in &entry.test {
        if image.anomaly_type == COMBINED {
            excluded.push(image.clone());
            continue;
        }
        let normal = image.anomaly_type == GOOD || g.types.contains(&image.anomaly_type);
        items.push(LabeledImage {
            image: image.clone(),
            label: u8::from(!normal),
        });
    }
    let scenario = Scenario {
        class: class.to_owned(),
        added_group: group.to_owned(),
        items,
        excluded,
    };
    if scenario.count(1) == 0 {
        return Err(EvalError::AllNormal {
            class: class.to_owned(),
            group: group.to_owned(),
        });
    }
    if scenario.count(0) == 0 {
        return Err(EvalError::AllAbnormal {
            class: class.to_owned(),
            group: group.to_owned(),
        });
    }
    Ok(scenario)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::dataset::{index_dataset, GroupTable};
    use std::fs;
    use std::path::Path;

    fn touch(root: &Path, rel: &str) {
        let p = root.join(rel);
        fs::create_dir_all(p.parent().unwrap()).unwrap();
        fs::write(p, b"x").unwrap();
    }

    #[test]
    fn carpet_thread_relabels_thread_only() {
        let dir = tempfile::tempdir().unwrap();
        for t in ["good", "thread", "hole", "cut", "color", "metal_contamination"] {
            touch(dir.path(), &format!("carpet/test/{t}/000.png"));
        }
        let idx = index_dataset(dir.path(), &GroupTable::mvtec()).unwrap();
        let s = build_scenario(&idx, "carpet", "thread").unwrap();
        let label = |t: &str| s.items.iter().find(|i| i.image.anomaly_type == t).unwrap().label;
        assert_eq!(label("thread"), 0);
        assert_eq!(label("good"), 0);
        assert_eq!(label("hole"), 1);
        let cut = build_scenario(&idx, "carpet", "cut").unwrap();
        assert_eq!(cut.count(0), 3);
        assert!(matches!(build_scenario(&idx, "carpet", "nope"), Err(EvalError::UnknownGroup { .. })));
        assert!(matches!(build_scenario(&idx, "rug", "cut"), Err(EvalError::UnknownClass(_))));
    }

    #[test]
    fn single_type_class_is_all_normal() {
        let dir = tempfile::tempdir().unwrap();
        touch(dir.path(), "toothbrush/test/good/000.png");
        touch(dir.path(), "toothbrush/test/defective/000.png");
        let idx = index_dataset(dir.path(), &GroupTable::mvtec()).unwrap();
        let err = build_scenario(&idx, "toothbrush", "defective").unwrap_err();
        assert!(err.to_string().contains("all-normal test set"), "{err}");
    }

    #[test]
    fn combined_is_excluded() {
        let dir = tempfile::tempdir().unwrap();
        for t in ["good", "bent_wire", "cable_swap", "combined"] {
            touch(dir.path(), &format!("cable/test/{t}/000.png"));
        }
        let idx = index_dataset(dir.path(), &GroupTable::mvtec()).unwrap();
        let s = build_scenario(&idx, "cable", "bent_wire").unwrap();
        assert!(s.items.iter().all(|i| i.image.anomaly_type != "combined"));
        assert_eq!(s.excluded.len(), 1);
    }
}
