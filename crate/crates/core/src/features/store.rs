//! Feature store: one CSV matrix per dataset part plus a JSON descriptor.
//!
//! Columns are `subject_id`, `label`, `trial_choice`, the 2646 feature
//! columns `<family>_<muscle>_<movement>_<feature>` in family-major order,
//! then 252 mask columns `mask_<family>_<muscle>_<movement>` (1 = missing).
//! Missing feature values are written as empty fields.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{feature_names, FeatureConfig, FeatureSample, FAMILIES, FAMILY_DEPTHS, FAMILY_NAMES, SAMPLE_VALUES};
use crate::dataset::{Label, Part, MOVEMENTS, MUSCLES};

pub const FEATURE_SCHEMA_VERSION: u32 = 1;
pub const STORE_META_FILE: &str = "features.json";

const CELLS: usize = MUSCLES * MOVEMENTS;
const LEADING: usize = 3;

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
    #[error("feature store schema version {found} is not supported (expected {expected})")]
    Version { found: u32, expected: u32 },
}

/// Descriptor written next to the part matrices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StoreMeta {
    pub schema_version: u32,
    pub fingerprint: String,
    pub config: FeatureConfig,
    /// Samples per part, in train / validation / test order.
    pub rows: Vec<(Part, usize)>,
}

impl StoreMeta {
    pub fn read(dir: impl AsRef<Path>) -> Result<Self, StoreError> {
        let path = dir.as_ref().join(STORE_META_FILE);
        let text = fs::read_to_string(&path).map_err(|source| StoreError::Io { path: path.clone(), source })?;
        let meta: StoreMeta = serde_json::from_str(&text)
            .map_err(|e| StoreError::Format { path: path.clone(), message: e.to_string() })?;
        if meta.schema_version != FEATURE_SCHEMA_VERSION {
            return Err(StoreError::Version { found: meta.schema_version, expected: FEATURE_SCHEMA_VERSION });
        }
        Ok(meta)
    }

    pub fn write(&self, dir: impl AsRef<Path>) -> Result<(), StoreError> {
        let path = dir.as_ref().join(STORE_META_FILE);
        let mut text = serde_json::to_string_pretty(self).expect("store meta serializes");
        text.push('\n');
        fs::write(&path, text).map_err(|source| StoreError::Io { path, source })
    }
}

/// Path of a part's matrix inside a store directory.
pub fn part_path(dir: impl AsRef<Path>, part: Part) -> PathBuf {
    dir.as_ref().join(format!("{}.csv", part.name()))
}

/// Header row of a part matrix.
pub fn header() -> Vec<String> {
    let mut cols = vec!["subject_id".to_string(), "label".to_string(), "trial_choice".to_string()];
    for f in 0..FAMILIES {
        let names = feature_names(f);
        for m in 0..MUSCLES {
            for a in 0..MOVEMENTS {
                for name in &names {
                    cols.push(format!("{}_{m}_{a}_{name}", FAMILY_NAMES[f]));
                }
            }
        }
    }
    for f in 0..FAMILIES {
        for m in 0..MUSCLES {
            for a in 0..MOVEMENTS {
                cols.push(format!("mask_{}_{m}_{a}", FAMILY_NAMES[f]));
            }
        }
    }
    cols
}

pub fn write_samples(path: impl AsRef<Path>, samples: &[FeatureSample]) -> Result<(), StoreError> {
    let path = path.as_ref();
    let csv_err = |source| StoreError::Csv { path: path.to_path_buf(), source };
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(header()).map_err(csv_err)?;
    let mut row: Vec<String> = Vec::with_capacity(LEADING + SAMPLE_VALUES + FAMILIES * CELLS);
    for s in samples {
        row.clear();
        row.push(s.subject_id.clone());
        row.push(s.label.as_index().to_string());
        row.push(s.trial_choice.iter().map(|t| t.to_string()).collect::<Vec<_>>().join("-"));
        for v in s.flat() {
            row.push(if v.is_nan() { String::new() } else { v.to_string() });
        }
        for f in 0..FAMILIES {
            for c in 0..CELLS {
                row.push(if s.missing[f][c] { "1" } else { "0" }.to_string());
            }
        }
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush().map_err(|source| StoreError::Io { path: path.to_path_buf(), source })
}

pub fn read_samples(path: impl AsRef<Path>) -> Result<Vec<FeatureSample>, StoreError> {
    let path = path.as_ref();
    let csv_err = |source| StoreError::Csv { path: path.to_path_buf(), source };
    let format = |message: String| StoreError::Format { path: path.to_path_buf(), message };
    let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
    let expected = header();
    let found: Vec<String> = r.headers().map_err(csv_err)?.iter().map(str::to_string).collect();
    if found != expected {
        return Err(format("header does not match the feature store layout".into()));
    }
    let mut out = Vec::new();
    for (i, record) in r.records().enumerate() {
        let record = record.map_err(csv_err)?;
        let row = i + 2;
        let subject_id = record[0].to_string();
        let label = record[1]
            .parse::<usize>()
            .ok()
            .and_then(Label::from_index)
            .ok_or_else(|| format(format!("row {row}: bad label {:?}", &record[1])))?;
        let choice: Vec<usize> = record[2]
            .split('-')
            .map(|t| t.parse::<usize>())
            .collect::<Result<_, _>>()
            .map_err(|_| format(format!("row {row}: bad trial_choice {:?}", &record[2])))?;
        let trial_choice: [usize; MOVEMENTS] =
            choice.try_into().map_err(|_| format(format!("row {row}: trial_choice needs 7 entries")))?;

        let mut missing = [[false; CELLS]; FAMILIES];
        for f in 0..FAMILIES {
            for c in 0..CELLS {
                missing[f][c] = match &record[LEADING + SAMPLE_VALUES + f * CELLS + c] {
                    "0" => false,
                    "1" => true,
                    other => return Err(format(format!("row {row}: bad mask value {other:?}"))),
                };
            }
        }
        let mut families: [Vec<f64>; FAMILIES] = Default::default();
        let mut col = LEADING;
        for f in 0..FAMILIES {
            let depth = FAMILY_DEPTHS[f];
            let mut values = Vec::with_capacity(CELLS * depth);
            for c in 0..CELLS {
                for _ in 0..depth {
                    let text = &record[col];
                    let v = if missing[f][c] {
                        f64::NAN
                    } else {
                        text.parse::<f64>()
                            .ok()
                            .filter(|v| v.is_finite())
                            .ok_or_else(|| format(format!("row {row}, column {}: bad value {text:?}", col + 1)))?
                    };
                    values.push(v);
                    col += 1;
                }
            }
            families[f] = values;
        }
        out.push(FeatureSample { subject_id, label, trial_choice, families, missing });
    }
    Ok(out)
}
