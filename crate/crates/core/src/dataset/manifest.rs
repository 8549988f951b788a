use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{load_recording, DatasetError, Label, SubjectBundle};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestRecording {
    pub muscle: usize,
    pub movement: usize,
    pub trial: usize,
    /// Relative to the dataset root.
    pub path: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub subject_id: String,
    pub label: Label,
    pub recordings: Vec<ManifestRecording>,
}

/// Subject listing stored at `<root>/manifest.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub version: u32,
    /// Free-form provenance, e.g. the generator configuration.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<serde_json::Value>,
    pub subjects: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn new(subjects: Vec<ManifestEntry>) -> Self {
        Manifest { version: MANIFEST_VERSION, provenance: None, subjects }
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self, DatasetError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| DatasetError::io(path, e))?;
        let manifest: Manifest = serde_json::from_str(&text)
            .map_err(|e| DatasetError::Manifest { path: path.to_path_buf(), message: e.to_string() })?;
        if manifest.version != MANIFEST_VERSION {
            return Err(DatasetError::Manifest {
                path: path.to_path_buf(),
                message: format!("unsupported manifest version {} (expected {MANIFEST_VERSION})", manifest.version),
            });
        }
        Ok(manifest)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<(), DatasetError> {
        let path = path.as_ref();
        let mut text = serde_json::to_string_pretty(self).expect("manifest serializes");
        text.push('\n');
        fs::write(path, text).map_err(|e| DatasetError::io(path, e))
    }

    pub fn labels(&self) -> Vec<(String, Label)> {
        self.subjects.iter().map(|s| (s.subject_id.clone(), s.label)).collect()
    }
}

/// Load every subject listed in `<root>/manifest.json`.
pub fn load_dataset(root: impl AsRef<Path>) -> Result<(Manifest, Vec<SubjectBundle>), DatasetError> {
    let root = root.as_ref();
    let manifest = Manifest::read(root.join(MANIFEST_FILE))?;
    let bundles = manifest
        .subjects
        .iter()
        .map(|entry| load_subject(root, entry))
        .collect::<Result<Vec<_>, _>>()?;
    Ok((manifest, bundles))
}

fn load_subject(root: &Path, entry: &ManifestEntry) -> Result<SubjectBundle, DatasetError> {
    let mut recordings = Vec::with_capacity(entry.recordings.len());
    for item in &entry.recordings {
        let path: PathBuf = root.join(&item.path);
        let mut rec = load_recording(&path)?;
        if rec.key() != (item.muscle, item.movement, item.trial) {
            return Err(DatasetError::Manifest {
                path: path.clone(),
                message: format!(
                    "manifest lists m{}_a{}_t{} but file name says m{}_a{}_t{}",
                    item.muscle, item.movement, item.trial, rec.muscle, rec.movement, rec.trial
                ),
            });
        }
        rec.subject_id = entry.subject_id.clone();
        recordings.push(rec);
    }
    SubjectBundle::new(entry.subject_id.clone(), entry.label, recordings)
}
