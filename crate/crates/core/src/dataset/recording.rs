use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, Read};
use std::path::Path;
use std::sync::Arc;

use super::{DatasetError, Label, MOVEMENTS, MUSCLES, TRIALS};

/// One muscle / movement / trial voltage sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct Recording {
    pub subject_id: String,
    pub muscle: usize,
    pub movement: usize,
    pub trial: usize,
    pub samples: Vec<f64>,
}

impl Recording {
    pub fn new(
        subject_id: impl Into<String>,
        muscle: usize,
        movement: usize,
        trial: usize,
        samples: Vec<f64>,
    ) -> Result<Self, DatasetError> {
        if muscle >= MUSCLES || movement >= MOVEMENTS || trial >= TRIALS {
            return Err(DatasetError::IndexOutOfRange { muscle, movement, trial });
        }
        let subject_id = subject_id.into();
        if samples.is_empty() {
            return Err(DatasetError::EmptySignal {
                path: recording_file_name(muscle, movement, trial).into(),
            });
        }
        if let Some(pos) = samples.iter().position(|v| !v.is_finite()) {
            return Err(DatasetError::NonFinite {
                path: recording_file_name(muscle, movement, trial).into(),
                line: pos + 1,
                text: samples[pos].to_string(),
            });
        }
        Ok(Recording { subject_id, muscle, movement, trial, samples })
    }

    pub fn key(&self) -> (usize, usize, usize) {
        (self.muscle, self.movement, self.trial)
    }
}

/// File name of a recording inside its subject directory.
pub fn recording_file_name(muscle: usize, movement: usize, trial: usize) -> String {
    format!("m{muscle}_a{movement}_t{trial}.csv")
}

fn parse_file_name(path: &Path) -> Option<(usize, usize, usize)> {
    let stem = path.file_name()?.to_str()?.strip_suffix(".csv")?;
    let mut parts = stem.split('_');
    let muscle = parts.next()?.strip_prefix('m')?.parse().ok()?;
    let movement = parts.next()?.strip_prefix('a')?.parse().ok()?;
    let trial = parts.next()?.strip_prefix('t')?.parse().ok()?;
    if parts.next().is_some() {
        return None;
    }
    Some((muscle, movement, trial))
}

/// Parse a signal: one real number per line, no header. Blank lines are skipped.
/// `path` is only used for error messages.
pub fn parse_signal<R: Read>(reader: R, path: &Path) -> Result<Vec<f64>, DatasetError> {
    let mut samples = Vec::new();
    for (idx, line) in BufReader::new(reader).lines().enumerate() {
        let line = line.map_err(|e| DatasetError::io(path, e))?;
        let text = line.trim();
        if text.is_empty() {
            continue;
        }
        let value: f64 = text.parse().map_err(|_| DatasetError::Parse {
            path: path.to_path_buf(),
            line: idx + 1,
            text: text.to_string(),
        })?;
        if !value.is_finite() {
            return Err(DatasetError::NonFinite {
                path: path.to_path_buf(),
                line: idx + 1,
                text: text.to_string(),
            });
        }
        samples.push(value);
    }
    if samples.is_empty() {
        return Err(DatasetError::EmptySignal { path: path.to_path_buf() });
    }
    Ok(samples)
}

/// Load `<root>/<subject_id>/m<i>_a<j>_t<k>.csv`. The subject id is the parent
/// directory name.
pub fn load_recording(path: impl AsRef<Path>) -> Result<Recording, DatasetError> {
    let path = path.as_ref();
    let (muscle, movement, trial) =
        parse_file_name(path).ok_or_else(|| DatasetError::BadFileName { path: path.to_path_buf() })?;
    if muscle >= MUSCLES || movement >= MOVEMENTS || trial >= TRIALS {
        return Err(DatasetError::IndexOutOfRange { muscle, movement, trial });
    }
    let subject_id = path
        .parent()
        .and_then(|p| p.file_name())
        .and_then(|s| s.to_str())
        .unwrap_or_default()
        .to_string();
    let file = fs::File::open(path).map_err(|e| DatasetError::io(path, e))?;
    let samples = parse_signal(file, path)?;
    Ok(Recording { subject_id, muscle, movement, trial, samples })
}

/// All recordings of one subject. Immutable once built.
#[derive(Debug, Clone)]
pub struct SubjectBundle {
    subject_id: String,
    label: Label,
    recordings: BTreeMap<(usize, usize, usize), Arc<Recording>>,
}

impl SubjectBundle {
    /// Validate and build. Every movement that appears must have at least one
    /// trial for each of the six muscles.
    pub fn new(
        subject_id: impl Into<String>,
        label: Label,
        recordings: impl IntoIterator<Item = Recording>,
    ) -> Result<Self, DatasetError> {
        let subject_id = subject_id.into();
        let mut map = BTreeMap::new();
        for rec in recordings {
            if rec.subject_id != subject_id {
                return Err(DatasetError::ForeignRecording {
                    subject: subject_id,
                    found: rec.subject_id,
                });
            }
            let (muscle, movement, trial) = rec.key();
            if muscle >= MUSCLES || movement >= MOVEMENTS || trial >= TRIALS {
                return Err(DatasetError::IndexOutOfRange { muscle, movement, trial });
            }
            if map.insert(rec.key(), Arc::new(rec)).is_some() {
                return Err(DatasetError::DuplicateRecording { subject: subject_id, muscle, movement, trial });
            }
        }
        for movement in 0..MOVEMENTS {
            let present = map.keys().any(|&(_, a, _)| a == movement);
            if !present {
                continue;
            }
            for muscle in 0..MUSCLES {
                if !(0..TRIALS).any(|t| map.contains_key(&(muscle, movement, t))) {
                    return Err(DatasetError::MissingMuscle { subject: subject_id, movement, muscle });
                }
            }
        }
        Ok(SubjectBundle { subject_id, label, recordings: map })
    }

    pub fn subject_id(&self) -> &str {
        &self.subject_id
    }

    pub fn label(&self) -> Label {
        self.label
    }

    pub fn len(&self) -> usize {
        self.recordings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.recordings.is_empty()
    }

    pub fn get(&self, muscle: usize, movement: usize, trial: usize) -> Option<&Arc<Recording>> {
        self.recordings.get(&(muscle, movement, trial))
    }

    pub fn recordings(&self) -> impl Iterator<Item = &Arc<Recording>> {
        self.recordings.values()
    }

    /// Trials of `movement` recorded on all six muscles, ascending.
    pub fn complete_trials(&self, movement: usize) -> Vec<usize> {
        (0..TRIALS)
            .filter(|&t| (0..MUSCLES).all(|m| self.recordings.contains_key(&(m, movement, t))))
            .collect()
    }

    /// (muscle, movement, trial) keys with no recording.
    pub fn missing(&self) -> Vec<(usize, usize, usize)> {
        let mut out = Vec::new();
        for muscle in 0..MUSCLES {
            for movement in 0..MOVEMENTS {
                for trial in 0..TRIALS {
                    if !self.recordings.contains_key(&(muscle, movement, trial)) {
                        out.push((muscle, movement, trial));
                    }
                }
            }
        }
        out
    }
}
