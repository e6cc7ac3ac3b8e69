use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::resample::Interpolation;
use crate::container::{read_file, write_file};
use crate::error::{ensure, Error, Result};

/// Resolution-class count of synthetic (known-scale) datasets: HR plus ×2, ×3, ×4.
pub const SYNTHETIC_RESOLUTION_CLASSES: u32 = 4;
/// Resolution-class count of real datasets labelled by pixel-count binning.
pub const REAL_RESOLUTION_CLASSES: u32 = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Synthetic,
    Real,
}

/// One stored image.
///
/// `width`, `height` and `pixel_count` describe the original file, never the
/// network input size. Degraded copies share the original's `path` and carry
/// their `degradation_scale`; the degradation is applied when pixels are
/// loaded.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub image_id: String,
    pub identity: u32,
    pub camera: u32,
    pub width: u32,
    pub height: u32,
    pub pixel_count: u64,
    pub resolution_label: u32,
    pub degradation_scale: u32,
    pub path: String,
}

impl ImageRecord {
    /// An untouched original.
    pub fn original(image_id: impl Into<String>, identity: u32, camera: u32, width: u32, height: u32, path: impl Into<String>) -> Self {
        ImageRecord {
            image_id: image_id.into(),
            identity,
            camera,
            width,
            height,
            pixel_count: u64::from(width) * u64::from(height),
            resolution_label: 0,
            degradation_scale: 1,
            path: path.into(),
        }
    }

    pub fn is_original(&self) -> bool {
        self.degradation_scale == 1
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub records: Vec<ImageRecord>,
    pub resolution_class_count: u32,
    pub identity_count: u32,
    pub provenance: Provenance,
    pub interpolation: Interpolation,
}

impl DatasetManifest {
    /// Build a manifest, filling `identity_count` from the records.
    pub fn new(records: Vec<ImageRecord>, provenance: Provenance, interpolation: Interpolation) -> Self {
        let resolution_class_count = match provenance {
            Provenance::Synthetic => SYNTHETIC_RESOLUTION_CLASSES,
            Provenance::Real => REAL_RESOLUTION_CLASSES,
        };
        let mut m = DatasetManifest {
            records,
            resolution_class_count,
            identity_count: 0,
            provenance,
            interpolation,
        };
        m.identity_count = m.identities().len() as u32;
        m
    }

    /// Same dataset properties, different records.
    pub fn with_records(&self, records: Vec<ImageRecord>) -> Self {
        let mut m = DatasetManifest {
            records,
            ..self.clone()
        };
        m.identity_count = m.identities().len() as u32;
        m
    }

    pub fn identities(&self) -> BTreeSet<u32> {
        self.records.iter().map(|r| r.identity).collect()
    }

    pub fn by_identity(&self) -> BTreeMap<u32, Vec<&ImageRecord>> {
        let mut map: BTreeMap<u32, Vec<&ImageRecord>> = BTreeMap::new();
        for r in &self.records {
            map.entry(r.identity).or_default().push(r);
        }
        map
    }

    /// Concatenate two manifests of the same dataset.
    pub fn merge(&self, other: &DatasetManifest) -> Result<Self> {
        ensure!(
            self.provenance == other.provenance
                && self.interpolation == other.interpolation
                && self.resolution_class_count == other.resolution_class_count,
            "cannot merge manifests with different dataset properties"
        );
        let mut records = self.records.clone();
        records.extend(other.records.iter().cloned());
        let merged = self.with_records(records);
        merged.validate()?;
        Ok(merged)
    }

    /// Check the structural invariants.
    pub fn validate(&self) -> Result<()> {
        let expected_r = match self.provenance {
            Provenance::Synthetic => SYNTHETIC_RESOLUTION_CLASSES,
            Provenance::Real => REAL_RESOLUTION_CLASSES,
        };
        ensure!(
            self.resolution_class_count == expected_r,
            "{:?} manifests declare {expected_r} resolution classes, found {}",
            self.provenance,
            self.resolution_class_count
        );
        let mut seen = HashSet::new();
        for r in &self.records {
            if !seen.insert(r.image_id.as_str()) {
                return Err(Error::DuplicateId(r.image_id.clone()));
            }
            ensure!(
                r.resolution_label < self.resolution_class_count,
                "record {} has resolution label {} >= {}",
                r.image_id,
                r.resolution_label,
                self.resolution_class_count
            );
            ensure!(
                (1..=4).contains(&r.degradation_scale),
                "record {} has degradation scale {} outside 1..=4",
                r.image_id,
                r.degradation_scale
            );
            ensure!(
                r.pixel_count == u64::from(r.width) * u64::from(r.height),
                "record {} pixel count {} != {}x{}",
                r.image_id,
                r.pixel_count,
                r.width,
                r.height
            );
        }
        ensure!(
            self.identity_count as usize == self.identities().len(),
            "identity_count {} does not match the {} identities present",
            self.identity_count,
            self.identities().len()
        );
        Ok(())
    }

    /// Additional requirement for training sets: every identity needs a positive.
    pub fn validate_for_training(&self) -> Result<()> {
        self.validate()?;
        for (id, recs) in self.by_identity() {
            ensure!(recs.len() >= 2, "identity {id} has a single record; triplet mining needs two");
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<Vec<u8>> {
        let mut bytes = serde_json::to_vec_pretty(self)?;
        bytes.push(b'\n');
        Ok(bytes)
    }

    pub fn from_json(bytes: &[u8]) -> Result<Self> {
        let m: DatasetManifest = serde_json::from_slice(bytes)?;
        m.validate()?;
        Ok(m)
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_json(&read_file(path)?)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_file(path, &self.to_json()?)
    }
}
