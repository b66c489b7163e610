//! MVTec-style dataset indexing and anomaly-group tables.
//!
//! Layout: `<root>/<class>/train/good/*` and `<root>/<class>/test/<type>/*`.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::EvalError;

pub const GOOD: &str = "good";
pub const COMBINED: &str = "combined";

const MVTEC_GROUPS: &str = include_str!("../../assets/mvtec_groups.txt");

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnomalyGroup {
    pub name: String,
    pub types: Vec<String>,
}

/// Class → anomaly groups, parsed from lines of
/// `<class> <group> <type> [<type> ...]`.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct GroupTable {
    classes: BTreeMap<String, Vec<AnomalyGroup>>,
}

impl GroupTable {
    pub fn parse(text: &str) -> Result<Self, EvalError> {
        let mut classes: BTreeMap<String, Vec<AnomalyGroup>> = BTreeMap::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.len() < 3 {
                return Err(EvalError::GroupTable(format!("line {}: expected class, group and types", n + 1)));
            }
            let types: Vec<String> = fields[2..].iter().map(|s| s.to_string()).collect();
            if types.iter().any(|t| t == GOOD || t == COMBINED) {
                return Err(EvalError::GroupTable(format!("line {}: {GOOD:?}/{COMBINED:?} cannot be grouped", n + 1)));
            }
            let groups = classes.entry(fields[0].to_owned()).or_default();
            if groups.iter().any(|g| g.name == fields[1]) {
                return Err(EvalError::GroupTable(format!("line {}: duplicate group {}", n + 1, fields[1])));
            }
            for t in &types {
                if groups.iter().any(|g| g.types.contains(t)) {
                    return Err(EvalError::GroupTable(format!("line {}: type {t} already grouped", n + 1)));
                }
            }
            groups.push(AnomalyGroup {
                name: fields[1].to_owned(),
                types,
            });
        }
        Ok(Self { classes })
    }

    /// The shipped MVTec AD grouping.
    pub fn mvtec() -> Self {
        Self::parse(MVTEC_GROUPS).expect("shipped group table parses")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, EvalError> {
        Self::parse(&fs::read_to_string(path)?)
    }

    pub fn groups(&self, class: &str) -> Option<&[AnomalyGroup]> {
        self.classes.get(class).map(Vec::as_slice)
    }

    pub fn classes(&self) -> impl Iterator<Item = &str> {
        self.classes.keys().map(String::as_str)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
        })
    }
}

/// One image file in the dataset.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ImageRef {
    pub class: String,
    pub split: Split,
    pub anomaly_type: String,
    pub file_name: String,
}

impl ImageRef {
    /// `<class>/<split>/<type>/<file>`; also the embedding image id.
    pub fn id(&self) -> String {
        format!("{}/{}", self.class, self.class_relative_id())
    }

    /// `<split>/<type>/<file>`.
    pub fn class_relative_id(&self) -> String {
        format!("{}/{}/{}", self.split, self.anomaly_type, self.file_name)
    }

    pub fn path(&self, root: &Path) -> PathBuf {
        root.join(&self.class)
            .join(self.split.to_string())
            .join(&self.anomaly_type)
            .join(&self.file_name)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassEntry {
    pub name: String,
    pub train: Vec<ImageRef>,
    pub test: Vec<ImageRef>,
    /// Sorted by group name.
    pub groups: Vec<AnomalyGroup>,
}

impl ClassEntry {
    pub fn group(&self, name: &str) -> Option<&AnomalyGroup> {
        self.groups.iter().find(|g| g.name == name)
    }

    /// Distinct test anomaly types, `good` included, sorted.
    pub fn anomaly_types(&self) -> Vec<&str> {
        let mut t: Vec<&str> = self.test.iter().map(|i| i.anomaly_type.as_str()).collect();
        t.sort_unstable();
        t.dedup();
        t
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetIndex {
    pub root: PathBuf,
    pub classes: Vec<ClassEntry>,
}

impl DatasetIndex {
    pub fn class(&self, name: &str) -> Option<&ClassEntry> {
        self.classes.iter().find(|c| c.name == name)
    }

    pub fn class_names(&self) -> Vec<&str> {
        self.classes.iter().map(|c| c.name.as_str()).collect()
    }

    pub fn all_images(&self) -> impl Iterator<Item = &ImageRef> {
        self.classes.iter().flat_map(|c| c.train.iter().chain(&c.test))
    }

    /// Looks up an image by its class-relative id.
    pub fn image(&self, class: &str, relative_id: &str) -> Option<&ImageRef> {
        let c = self.class(class)?;
        c.train.iter().chain(&c.test).find(|i| i.class_relative_id() == relative_id)
    }
}

fn sorted_entries(dir: &Path, want_dirs: bool) -> Result<Vec<String>, EvalError> {
    let mut names = Vec::new();
    for entry in fs::read_dir(dir)? {
        let entry = entry?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if name.starts_with('.') {
            continue;
        }
        let ft = entry.file_type()?;
        if (want_dirs && ft.is_dir()) || (!want_dirs && ft.is_file()) {
            names.push(name);
        }
    }
    names.sort();
    Ok(names)
}

fn images_in(root: &Path, class: &str, split: Split) -> Result<Vec<ImageRef>, EvalError> {
    let split_dir = root.join(class).join(split.to_string());
    if !split_dir.is_dir() {
        return Ok(Vec::new());
    }
    let mut out = Vec::new();
    for anomaly_type in sorted_entries(&split_dir, true)? {
        for file_name in sorted_entries(&split_dir.join(&anomaly_type), false)? {
            out.push(ImageRef {
                class: class.to_owned(),
                split,
                anomaly_type: anomaly_type.clone(),
                file_name,
            });
        }
    }
    Ok(out)
}

fn groups_for(class: &str, test: &[ImageRef], table: &GroupTable) -> Result<Vec<AnomalyGroup>, EvalError> {
    let mut types: Vec<&str> = test
        .iter()
        .map(|i| i.anomaly_type.as_str())
        .filter(|t| *t != GOOD && *t != COMBINED)
        .collect();
    types.sort_unstable();
    types.dedup();
    let mut groups = match table.groups(class) {
        Some(g) => g.to_vec(),
        None => types
            .iter()
            .map(|t| AnomalyGroup {
                name: t.to_string(),
                types: vec![t.to_string()],
            })
            .collect(),
    };
    let owner: HashMap<&str, &str> = groups
        .iter()
        .flat_map(|g| g.types.iter().map(move |t| (t.as_str(), g.name.as_str())))
        .collect();
    if let Some(t) = types.iter().find(|t| !owner.contains_key(*t)) {
        return Err(EvalError::UngroupedType {
            class: class.to_owned(),
            anomaly_type: t.to_string(),
        });
    }
    groups.sort_by(|a, b| a.name.cmp(&b.name));
    Ok(groups)
}

/// Walks `root` and builds a deterministic, lexicographically ordered index.
/// Classes listed in `table` take their groups from it; other classes get
/// one group per anomaly type.
pub fn index_dataset(root: impl AsRef<Path>, table: &GroupTable) -> Result<DatasetIndex, EvalError> {
    let root = root.as_ref();
    if !root.is_dir() {
        return Err(EvalError::MissingRoot(root.to_path_buf()));
    }
    let class_names = sorted_entries(root, true)?;
    if class_names.is_empty() {
        return Err(EvalError::NoClasses(root.to_path_buf()));
    }
    let mut classes = Vec::with_capacity(class_names.len());
    for name in class_names {
        let train = images_in(root, &name, Split::Train)?;
        let test = images_in(root, &name, Split::Test)?;
        if test.is_empty() {
            return Err(EvalError::EmptyTestSplit(name));
        }
        let groups = groups_for(&name, &test, table)?;
        classes.push(ClassEntry {
            name,
            train,
            test,
            groups,
        });
    }
    Ok(DatasetIndex {
        root: root.to_path_buf(),
        classes,
    })
}
