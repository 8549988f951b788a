//! Stage orchestration: generate, split, extract, train, evaluate, predict,
//! plus in-memory synthetic experiments and the channel / filter sweeps.
//!
//! Disk stages write the artifacts the CLI exposes. They refuse to replace
//! existing outputs unless `force` is set.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{load_model, save_model, Checkpoint, CheckpointError};
use crate::dataset::{
    assemble_samples, load_dataset, split_subjects, AssemblyMode, DatasetError, DatasetSplit, Label, Manifest, Part,
    SubjectBundle, MANIFEST_FILE,
};
use crate::features::store::{part_path, read_samples, write_samples, StoreError, StoreMeta, FEATURE_SCHEMA_VERSION};
use crate::features::{FeatureCache, FeatureConfig, FeatureError, FeatureSample, FAMILIES};
use crate::metrics::{evaluate, MetricsError, MetricsReport};
use crate::nn::EasiDeepModel;
use crate::spatial::{fit_scaler, GridSet, ScalerStats, SpatialError};
use crate::synth::{generate_cohort, generate_dataset, SynthConfig, SynthError};
use crate::train::{predict, train_model, Prediction, TrainConfig, TrainError, TrainHistory};

pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const HISTORY_FILE: &str = "history.csv";
pub const SCALER_FILE: &str = "scaler.json";

/// The eight channel combinations of the channel ablation; the time, freq
/// and dwt channels are always on.
pub const CHANNEL_SWEEP: [[bool; FAMILIES]; 8] = [
    [true, true, true, false, false, false],
    [true, true, true, true, false, false],
    [true, true, true, false, true, false],
    [true, true, true, false, false, true],
    [true, true, true, true, true, false],
    [true, true, true, true, false, true],
    [true, true, true, false, true, true],
    [true, true, true, true, true, true],
];

/// Kernel sizes of the filter ablation.
pub const FILTER_SWEEP: [usize; 5] = [6, 5, 4, 3, 2];

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{0} already exists; pass --force to overwrite")]
    Exists(PathBuf),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Spatial(#[from] SpatialError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    /// Dataset directory (manifest plus recordings).
    pub data: PathBuf,
    pub split: PathBuf,
    /// Feature store directory.
    pub features: PathBuf,
    /// Training outputs: checkpoint, history, scaler.
    pub run: PathBuf,
}

impl Default for PathsConfig {
    fn default() -> Self {
        PathsConfig {
            data: "data".into(),
            split: "split.json".into(),
            features: "features".into(),
            run: "run".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Master seed; [`PipelineConfig::with_seed`] copies it into every stage.
    pub seed: u64,
    /// Random grids drawn per subject; 0 draws every combination.
    pub samples_per_subject: usize,
    pub synth: SynthConfig,
    pub features: FeatureConfig,
    pub train: TrainConfig,
    pub paths: PathsConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            seed: 0,
            samples_per_subject: 60,
            synth: SynthConfig::default(),
            features: FeatureConfig::default(),
            train: TrainConfig::default(),
            paths: PathsConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, PipelineError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|source| PipelineError::Io { path: path.into(), source })?;
        let cfg: PipelineConfig =
            serde_json::from_str(&text).map_err(|source| PipelineError::Json { path: path.into(), source })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.synth.seed = seed;
        self.train.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        self.synth.validate()?;
        self.features.validate()?;
        self.train.validate()?;
        if self.features.sample_rate != self.synth.sample_rate {
            log::warn!(
                "feature sample_rate {} differs from the generator's {}",
                self.features.sample_rate,
                self.synth.sample_rate
            );
        }
        Ok(())
    }

    pub fn assembly(&self, subject_index: usize) -> AssemblyMode {
        match self.samples_per_subject {
            0 => AssemblyMode::Exhaustive,
            count => AssemblyMode::Random { count, seed: derive_seed(self.seed, 2, subject_index) },
        }
    }
}

fn derive_seed(seed: u64, stream: u64, index: usize) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (index as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    rng.set_stream(stream);
    rng.next_u64()
}

/// Refuse to replace `path` unless `force`.
pub fn check_output(path: &Path, force: bool) -> Result<(), PipelineError> {
    if path.exists() && !force {
        return Err(PipelineError::Exists(path.to_path_buf()));
    }
    Ok(())
}

fn create_dir(path: &Path) -> Result<(), PipelineError> {
    fs::create_dir_all(path).map_err(|source| PipelineError::Io { path: path.into(), source })
}

fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<(), PipelineError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|source| PipelineError::Json { path: path.into(), source })?;
    text.push('\n');
    fs::write(path, text).map_err(|source| PipelineError::Io { path: path.into(), source })
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, PipelineError> {
    let text = fs::read_to_string(path).map_err(|source| PipelineError::Io { path: path.into(), source })?;
    serde_json::from_str(&text).map_err(|source| PipelineError::Json { path: path.into(), source })
}

/// Feature samples of the three parts, in train / validation / test order.
#[derive(Debug, Clone, Default)]
pub struct PartSamples {
    pub train: Vec<FeatureSample>,
    pub validation: Vec<FeatureSample>,
    pub test: Vec<FeatureSample>,
}

impl PartSamples {
    pub fn part(&self, part: Part) -> &[FeatureSample] {
        match part {
            Part::Train => &self.train,
            Part::Validation => &self.validation,
            Part::Test => &self.test,
        }
    }
}

/// Extract features once per recording, draw grids per subject and sort
/// them into the split's parts. Subjects outside the split are skipped.
pub fn assemble_parts(
    bundles: &[SubjectBundle],
    split: &DatasetSplit,
    config: &PipelineConfig,
) -> Result<PartSamples, PipelineError> {
    let cache = FeatureCache::build(bundles, &config.features);
    let per_subject = bundles
        .par_iter()
        .enumerate()
        .map(|(i, b)| {
            let grids = assemble_samples(b, config.assembly(i))?;
            let samples = grids.iter().map(|g| cache.sample(g)).collect::<Result<Vec<_>, _>>()?;
            Ok((split.part_of(b.subject_id()), samples))
        })
        .collect::<Result<Vec<_>, PipelineError>>()?;
    let mut out = PartSamples::default();
    for (part, samples) in per_subject {
        match part {
            Some(Part::Train) => out.train.extend(samples),
            Some(Part::Validation) => out.validation.extend(samples),
            Some(Part::Test) => out.test.extend(samples),
            None => {}
        }
    }
    Ok(out)
}

/// Scaled grid sets built from training statistics.
#[derive(Debug, Clone)]
pub struct PreparedSets {
    pub scaler: ScalerStats,
    pub train: GridSet,
    pub validation: GridSet,
    pub test: GridSet,
}

pub fn prepare_sets(parts: &PartSamples) -> Result<PreparedSets, PipelineError> {
    let scaler = fit_scaler(&parts.train)?;
    Ok(PreparedSets {
        train: GridSet::from_samples(&parts.train, &scaler)?,
        validation: GridSet::from_samples(&parts.validation, &scaler)?,
        test: GridSet::from_samples(&parts.test, &scaler)?,
        scaler,
    })
}

/// Synthetic cohort, split and scaled sets, all in memory.
pub fn prepare_synthetic(config: &PipelineConfig) -> Result<(DatasetSplit, PreparedSets), PipelineError> {
    config.validate()?;
    let bundles = generate_cohort(&config.synth)?;
    let split = split_subjects(&config.synth.subjects(), config.seed)?;
    let parts = assemble_parts(&bundles, &split, config)?;
    Ok((split, prepare_sets(&parts)?))
}

#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub model: EasiDeepModel,
    pub history: TrainHistory,
    /// Test-set predictions and metrics.
    pub predictions: Vec<Prediction>,
    pub report: MetricsReport,
}

/// Train on prepared sets and score the test set.
pub fn run_experiment(sets: &PreparedSets, train: &TrainConfig) -> Result<ExperimentResult, PipelineError> {
    let (model, history) = train_model(&sets.train, &sets.validation, train)?;
    let predictions = predict(&model, &sets.test)?;
    let report = evaluate(&predictions, &sets.test.labels)?;
    Ok(ExperimentResult { model, history, predictions, report })
}

/// Generate, split, extract, train and test without touching the disk.
pub fn run_synthetic_experiment(config: &PipelineConfig) -> Result<ExperimentResult, PipelineError> {
    let (_, sets) = prepare_synthetic(config)?;
    run_experiment(&sets, &config.train)
}

/// Which ablation to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sweep {
    Channels,
    FilterSize,
}

#[derive(Debug, Clone)]
pub struct SweepRow {
    pub name: String,
    pub config: TrainConfig,
    pub report: MetricsReport,
    pub rounds: usize,
}

/// Training configurations of a sweep, derived from `base`.
pub fn sweep_configs(sweep: Sweep, base: &TrainConfig) -> Vec<(String, TrainConfig)> {
    match sweep {
        Sweep::Channels => CHANNEL_SWEEP
            .iter()
            .enumerate()
            .map(|(i, mask)| {
                let bits: Vec<&str> = mask.iter().map(|&b| if b { "1" } else { "0" }).collect();
                (format!("channels-{i} [{}]", bits.join(",")), TrainConfig { channel_mask: *mask, ..base.clone() })
            })
            .collect(),
        Sweep::FilterSize => FILTER_SWEEP
            .iter()
            .map(|&k| (format!("filter-{k}x{k}"), TrainConfig { filter_size: k, ..base.clone() }))
            .collect(),
    }
}

/// Train and test every configuration of `sweep` on the same prepared sets.
pub fn run_sweep(sets: &PreparedSets, sweep: Sweep, base: &TrainConfig) -> Result<Vec<SweepRow>, PipelineError> {
    sweep_configs(sweep, base)
        .into_iter()
        .map(|(name, config)| {
            log::info!("sweep run {name}");
            let r = run_experiment(sets, &config)?;
            Ok(SweepRow { name, config, report: r.report, rounds: r.history.rounds.len() })
        })
        .collect()
}

pub fn sweep_table(rows: &[SweepRow]) -> String {
    MetricsReport::table(rows.iter().map(|r| (r.name.as_str(), &r.report)))
}

// Disk stages.

pub fn stage_generate(config: &SynthConfig, out: &Path, force: bool) -> Result<Manifest, PipelineError> {
    check_output(&out.join(MANIFEST_FILE), force)?;
    let (manifest, _) = generate_dataset(config, out)?;
    Ok(manifest)
}

pub fn stage_split(data: &Path, seed: u64, out: &Path, force: bool) -> Result<DatasetSplit, PipelineError> {
    check_output(out, force)?;
    let manifest = Manifest::read(data.join(MANIFEST_FILE))?;
    let split = split_subjects(&manifest.labels(), seed)?;
    write_json(&split, out)?;
    Ok(split)
}

pub fn read_split(path: &Path) -> Result<DatasetSplit, PipelineError> {
    read_json(path)
}

pub fn stage_extract(
    data: &Path,
    split_path: &Path,
    config: &PipelineConfig,
    out: &Path,
    force: bool,
) -> Result<StoreMeta, PipelineError> {
    check_output(&out.join(crate::features::store::STORE_META_FILE), force)?;
    config.features.validate()?;
    let split = read_split(split_path)?;
    let (_, bundles) = load_dataset(data)?;
    for id in Part::ALL.iter().flat_map(|&p| split.part(p)) {
        if !bundles.iter().any(|b| b.subject_id() == id) {
            return Err(PipelineError::Config(format!("split names subject {id:?}, which the dataset lacks")));
        }
    }
    let parts = assemble_parts(&bundles, &split, config)?;
    create_dir(out)?;
    let mut rows = Vec::new();
    for part in Part::ALL {
        write_samples(part_path(out, part), parts.part(part))?;
        rows.push((part, parts.part(part).len()));
    }
    let meta = StoreMeta {
        schema_version: FEATURE_SCHEMA_VERSION,
        fingerprint: config.features.fingerprint(),
        config: config.features.clone(),
        rows,
    };
    meta.write(out)?;
    Ok(meta)
}

fn read_part(store: &Path, part: Part) -> Result<Vec<FeatureSample>, PipelineError> {
    Ok(read_samples(part_path(store, part))?)
}

/// Fit the scaler on the store's train part, train, and write the
/// checkpoint, history and scaler into `out`.
pub fn stage_train(store: &Path, train: &TrainConfig, out: &Path, force: bool) -> Result<TrainHistory, PipelineError> {
    check_output(&out.join(CHECKPOINT_FILE), force)?;
    train.validate()?;
    let meta = StoreMeta::read(store)?;
    let parts = PartSamples {
        train: read_part(store, Part::Train)?,
        validation: read_part(store, Part::Validation)?,
        test: Vec::new(),
    };
    let sets = prepare_sets(&parts)?;
    let (model, history) = train_model(&sets.train, &sets.validation, train)?;
    create_dir(out)?;
    history.write_csv(out.join(HISTORY_FILE))?;
    write_json(&sets.scaler, &out.join(SCALER_FILE))?;
    let checkpoint = Checkpoint { model, scaler: sets.scaler, features: meta.config, train: train.clone() };
    save_model(&checkpoint, out.join(CHECKPOINT_FILE))?;
    Ok(history)
}

/// Predictions of a checkpoint on one store part, after checking that the
/// store was extracted with the checkpoint's feature options.
pub fn predict_part(checkpoint: &Path, store: &Path, part: Part) -> Result<(Vec<FeatureSample>, Vec<Prediction>), PipelineError> {
    let ck = load_model(checkpoint)?;
    let meta = StoreMeta::read(store)?;
    ck.check_store(&meta)?;
    let samples = read_part(store, part)?;
    let set = GridSet::from_samples(&samples, &ck.scaler)?;
    let predictions = predict(&ck.model, &set)?;
    Ok((samples, predictions))
}

pub fn stage_eval(checkpoint: &Path, store: &Path, part: Part) -> Result<MetricsReport, PipelineError> {
    let (samples, predictions) = predict_part(checkpoint, store, part)?;
    let truth: Vec<Label> = samples.iter().map(|s| s.label).collect();
    Ok(evaluate(&predictions, &truth)?)
}

/// Write per-sample probabilities as CSV.
pub fn stage_predict(checkpoint: &Path, store: &Path, part: Part, out: &Path, force: bool) -> Result<usize, PipelineError> {
    check_output(out, force)?;
    let (samples, predictions) = predict_part(checkpoint, store, part)?;
    let err = |source: csv::Error| PipelineError::Io { path: out.into(), source: source.into() };
    let mut w = csv::Writer::from_path(out).map_err(err)?;
    w.write_record(["subject_id", "trial_choice", "label", "p_healthy", "p_patient", "predicted", "tie"]).map_err(err)?;
    for (s, p) in samples.iter().zip(&predictions) {
        let choice: Vec<String> = s.trial_choice.iter().map(|t| t.to_string()).collect();
        w.write_record([
            s.subject_id.clone(),
            choice.join("-"),
            s.label.as_index().to_string(),
            p.probabilities[0].to_string(),
            p.probabilities[1].to_string(),
            p.label.as_index().to_string(),
            u8::from(p.tie).to_string(),
        ])
        .map_err(err)?;
    }
    w.flush().map_err(|source| PipelineError::Io { path: out.into(), source })?;
    Ok(predictions.len())
}
