//! Synthetic cohorts: AR(2) noise whose resonance, bandwidth and amplitude
//! depend on class, muscle and movement.
//!
//! For a healthy subject the cell `(m, a)` resonates near
//! `55 + 9 m + 6 a` Hz. Patient cells shift that frequency down, narrow the
//! resonance and lower the amplitude, all in proportion to `delta`; with
//! `delta = 0` the two classes are drawn from the same distribution.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{
    recording_file_name, DatasetError, Label, Manifest, ManifestEntry, ManifestRecording, Recording, SubjectBundle,
    MANIFEST_FILE, MOVEMENTS, MUSCLES, TRIALS,
};

const BURN_IN: usize = 256;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub subjects_per_class: usize,
    pub signal_length: usize,
    /// Hz.
    pub sample_rate: f64,
    /// Class contrast in `[0, 1]`.
    pub delta: f64,
    /// Probability that a trial is left out.
    pub missingness: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig { subjects_per_class: 20, signal_length: 4096, sample_rate: 1000.0, delta: 1.0, missingness: 0.0, seed: 0 }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum SynthError {
    #[error("invalid synthetic-data configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::Config(m));
        if self.subjects_per_class == 0 {
            return bad("subjects_per_class must be at least 1".into());
        }
        if self.signal_length < 64 {
            return bad(format!("signal_length must be at least 64, got {}", self.signal_length));
        }
        if !(self.sample_rate.is_finite() && self.sample_rate > 0.0) {
            return bad(format!("sample_rate must be positive, got {}", self.sample_rate));
        }
        if !(0.0..=1.0).contains(&self.delta) {
            return bad(format!("delta must lie in [0, 1], got {}", self.delta));
        }
        if !(0.0..=1.0).contains(&self.missingness) {
            return bad(format!("missingness must lie in [0, 1], got {}", self.missingness));
        }
        Ok(())
    }

    /// Identifier and label of every subject, healthy first.
    pub fn subjects(&self) -> Vec<(String, Label)> {
        let n = self.subjects_per_class;
        (0..n)
            .map(|i| (format!("h{i:03}"), Label::Healthy))
            .chain((0..n).map(|i| (format!("p{i:03}"), Label::Patient)))
            .collect()
    }

    /// Seed of the `index`-th subject in [`SynthConfig::subjects`] order.
    pub fn subject_seed(&self, index: usize) -> u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(index as u64 + 1);
        rng.next_u64()
    }
}

/// Generator parameters of one cell before per-subject and per-trial jitter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CellParams {
    /// Resonance frequency in Hz.
    pub frequency: f64,
    pub pole_radius: f64,
    pub amplitude: f64,
}

/// Nominal parameters of cell `(muscle, movement)` for `label`.
pub fn cell_params(label: Label, muscle: usize, movement: usize, delta: f64) -> CellParams {
    let frequency = 55.0 + 9.0 * muscle as f64 + 6.0 * movement as f64;
    let pole_radius = 0.93 + 0.01 * ((muscle + movement) % 4) as f64;
    let amplitude = 1.0 + 0.15 * muscle as f64 + 0.1 * movement as f64;
    if label == Label::Healthy {
        return CellParams { frequency, pole_radius, amplitude };
    }
    // contrast varies between 0.5 and 1 across cells
    let c = delta * (0.5 + 0.125 * ((muscle * 7 + movement) % 5) as f64);
    CellParams { frequency: frequency * (1.0 - 0.3 * c), pole_radius: pole_radius + 0.03 * c, amplitude: amplitude * (1.0 - 0.25 * c) }
}

/// AR(2) series with poles at `radius * exp(+-i theta)`, driven by unit
/// Gaussian noise, after a burn-in.
pub fn ar2_series(rng: &mut impl Rng, phi: (f64, f64), len: usize) -> Vec<f64> {
    let (mut y1, mut y2) = (0.0, 0.0);
    let mut out = Vec::with_capacity(len);
    for t in 0..BURN_IN + len {
        let e: f64 = StandardNormal.sample(rng);
        let y = phi.0 * y1 + phi.1 * y2 + e;
        y2 = y1;
        y1 = y;
        if t >= BURN_IN {
            out.push(y);
        }
    }
    out
}

/// Six-decimal rounding, so that written files read back bit-identically.
fn quantize(v: f64) -> f64 {
    format!("{v:.6}").parse().expect("formatted float parses")
}

fn trial_signal(rng: &mut ChaCha8Rng, p: CellParams, subject_freq: f64, movement: usize, config: &SynthConfig) -> Vec<f64> {
    let freq = p.frequency * subject_freq * rng.random_range(0.97..1.03);
    let radius = p.pole_radius;
    let amp = p.amplitude * rng.random_range(0.9..1.1);
    let theta = 2.0 * std::f64::consts::PI * freq / config.sample_rate;
    let phi = (2.0 * radius * theta.cos(), -radius * radius);
    let noise = ar2_series(rng, phi, config.signal_length);
    let cycles = 1.0 + (movement % 3) as f64;
    let phase: f64 = rng.random_range(0.0..std::f64::consts::TAU);
    let n = config.signal_length as f64;
    noise
        .iter()
        .enumerate()
        .map(|(t, y)| {
            let env = 1.0 + 0.4 * (std::f64::consts::TAU * cycles * t as f64 / n + phase).sin();
            quantize(amp * env * y)
        })
        .collect()
}

/// Trials kept for each movement; at least one survives per movement.
fn kept_trials(rng: &mut ChaCha8Rng, missingness: f64) -> [[bool; TRIALS]; MOVEMENTS] {
    let mut keep = [[true; TRIALS]; MOVEMENTS];
    for row in keep.iter_mut() {
        for k in row.iter_mut() {
            *k = !rng.random_bool(missingness);
        }
        if !row.iter().any(|&k| k) {
            let t = rng.random_range(0..TRIALS);
            row[t] = true;
        }
    }
    keep
}

pub fn generate_subject(subject_id: &str, label: Label, config: &SynthConfig, subject_seed: u64) -> Result<SubjectBundle, SynthError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(subject_seed);
    let subject_freq = rng.random_range(0.96..1.04);
    let mut keep_rng = ChaCha8Rng::seed_from_u64(subject_seed);
    keep_rng.set_stream(1);
    let keep = kept_trials(&mut keep_rng, config.missingness);
    let mut recordings = Vec::new();
    for movement in 0..MOVEMENTS {
        for trial in 0..TRIALS {
            for muscle in 0..MUSCLES {
                // drawn even for dropped trials so the kept ones do not depend on missingness
                let signal = trial_signal(&mut rng, cell_params(label, muscle, movement, config.delta), subject_freq, movement, config);
                if keep[movement][trial] {
                    recordings.push(Recording::new(subject_id, muscle, movement, trial, signal)?);
                }
            }
        }
    }
    Ok(SubjectBundle::new(subject_id, label, recordings)?)
}

/// Every subject of the cohort, in memory.
pub fn generate_cohort(config: &SynthConfig) -> Result<Vec<SubjectBundle>, SynthError> {
    config.validate()?;
    config
        .subjects()
        .into_par_iter()
        .enumerate()
        .map(|(i, (id, label))| generate_subject(&id, label, config, config.subject_seed(i)))
        .collect()
}

fn write_signal(path: &Path, samples: &[f64]) -> Result<(), DatasetError> {
    let file = fs::File::create(path).map_err(|e| DatasetError::io(path, e))?;
    let mut w = BufWriter::new(file);
    for v in samples {
        writeln!(w, "{v:.6}").map_err(|e| DatasetError::io(path, e))?;
    }
    w.flush().map_err(|e| DatasetError::io(path, e))
}

/// Write the cohort as `<root>/<subject>/m<m>_a<a>_t<t>.csv` plus a
/// manifest carrying the configuration.
pub fn generate_dataset(config: &SynthConfig, root: impl AsRef<Path>) -> Result<(Manifest, Vec<SubjectBundle>), SynthError> {
    let root = root.as_ref();
    let bundles = generate_cohort(config)?;
    fs::create_dir_all(root).map_err(|e| DatasetError::io(root, e))?;
    let entries = bundles
        .par_iter()
        .map(|b| {
            let dir = root.join(b.subject_id());
            fs::create_dir_all(&dir).map_err(|e| DatasetError::io(&dir, e))?;
            let mut recs = Vec::with_capacity(b.len());
            for r in b.recordings() {
                let name = recording_file_name(r.muscle, r.movement, r.trial);
                write_signal(&dir.join(&name), &r.samples)?;
                recs.push(ManifestRecording {
                    muscle: r.muscle,
                    movement: r.movement,
                    trial: r.trial,
                    path: format!("{}/{name}", b.subject_id()),
                });
            }
            Ok(ManifestEntry { subject_id: b.subject_id().to_string(), label: b.label(), recordings: recs })
        })
        .collect::<Result<Vec<_>, DatasetError>>()?;
    let mut manifest = Manifest::new(entries);
    manifest.provenance = Some(serde_json::json!({ "generator": "synthetic", "config": config }));
    manifest.write(root.join(MANIFEST_FILE))?;
    Ok((manifest, bundles))
}
