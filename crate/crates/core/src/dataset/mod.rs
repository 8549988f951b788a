//! Recordings, subject bundles, sample assembly and subject-exclusive splits.
//!
//! A subject performs seven movements three times each while six neck and
//! shoulder muscles are recorded. One *sample* picks a single trial per
//! movement and lays the resulting 6 x 7 signals out as a grid (rows are
//! muscles, columns are movements).

mod assembly;
mod manifest;
mod recording;
mod split;

pub use assembly::{assemble_samples, AssemblyMode, SampleGrid};
pub use manifest::{load_dataset, Manifest, ManifestEntry, ManifestRecording, MANIFEST_FILE};
pub use recording::{load_recording, parse_signal, recording_file_name, Recording, SubjectBundle};
pub use split::{split_subjects, DatasetSplit, Part};

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

/// Number of recorded muscles (grid rows).
pub const MUSCLES: usize = 6;
/// Number of movements (grid columns).
pub const MOVEMENTS: usize = 7;
/// Repetitions of each movement.
pub const TRIALS: usize = 3;

/// Muscle names in source row order M0..M5.
pub const MUSCLE_NAMES: [&str; MUSCLES] = [
    "left sternocleidomastoid",
    "left upper trapezius",
    "left cervical erector spinae",
    "right cervical erector spinae",
    "right upper trapezius",
    "right sternocleidomastoid",
];

/// Movement names in column order A0..A6.
pub const MOVEMENT_NAMES: [&str; MOVEMENTS] = [
    "bow",
    "head backwards",
    "left flexion",
    "right flexion",
    "left rotation",
    "right rotation",
    "hands up",
];

/// Class label of a subject.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(into = "u8", try_from = "u8")]
pub enum Label {
    Healthy,
    Patient,
}

impl Label {
    pub fn as_index(self) -> usize {
        match self {
            Label::Healthy => 0,
            Label::Patient => 1,
        }
    }

    pub fn from_index(index: usize) -> Option<Label> {
        match index {
            0 => Some(Label::Healthy),
            1 => Some(Label::Patient),
            _ => None,
        }
    }
}

impl From<Label> for u8 {
    fn from(label: Label) -> u8 {
        label.as_index() as u8
    }
}

impl TryFrom<u8> for Label {
    type Error = String;

    fn try_from(value: u8) -> Result<Self, Self::Error> {
        Label::from_index(value as usize).ok_or_else(|| format!("label must be 0 or 1, got {value}"))
    }
}

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: cannot parse {text:?} as a real number")]
    Parse { path: PathBuf, line: usize, text: String },
    #[error("{path}:{line}: non-finite value {text:?}")]
    NonFinite { path: PathBuf, line: usize, text: String },
    #[error("{path}: signal has no samples")]
    EmptySignal { path: PathBuf },
    #[error("{path}: file name does not match m<i>_a<j>_t<k>.csv")]
    BadFileName { path: PathBuf },
    #[error("index out of range: muscle {muscle}, movement {movement}, trial {trial}")]
    IndexOutOfRange { muscle: usize, movement: usize, trial: usize },
    #[error("subject {subject}: duplicate recording m{muscle}_a{movement}_t{trial}")]
    DuplicateRecording { subject: String, muscle: usize, movement: usize, trial: usize },
    #[error("subject {subject}: recording belongs to subject {found}")]
    ForeignRecording { subject: String, found: String },
    #[error("subject {subject}: movement {movement} has no trial for muscle {muscle}")]
    MissingMuscle { subject: String, movement: usize, muscle: usize },
    #[error("subject {subject}: movement {movement} has no trial recorded on all six muscles")]
    IncompleteBundle { subject: String, movement: usize },
    #[error("need at least 5 subjects to split, got {0}")]
    InsufficientSubjects(usize),
    #[error("duplicate subject id {0}")]
    DuplicateSubject(String),
    #[error("manifest {path}: {message}")]
    Manifest { path: PathBuf, message: String },
}

impl DatasetError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        DatasetError::Io { path: path.into(), source }
    }
}
