use std::path::PathBuf;

use super::{Detector, DetectorError, DetectorKind};
use crate::embedding::PatchGridSet;
use crate::map::{load_external_map, AnomalyMap};

/// Third-party detector whose maps were scored offline and stored as `NAAM`
/// files at `<dir>/<image_id>.naam`.
#[derive(Debug, Clone)]
pub struct ExternalMapDetector {
    dir: PathBuf,
}

impl ExternalMapDetector {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }

    pub fn path_for(&self, image_id: &str) -> PathBuf {
        self.dir.join(format!("{image_id}.naam"))
    }
}

impl Detector for ExternalMapDetector {
    fn kind(&self) -> DetectorKind {
        DetectorKind::ExternalMapFile
    }

    fn score_map(&self, set: &PatchGridSet) -> Result<AnomalyMap, DetectorError> {
        let path = self.path_for(set.image_id());
        if !path.is_file() {
            return Err(DetectorError::MissingExternalMap(set.image_id().to_owned()));
        }
        Ok(load_external_map(path)?)
    }
}
