//! Minibatch Adam training with per-epoch validation, best-model selection
//! and early stopping; batched prediction.

mod adam;

pub use adam::{adam_step, AdamState, ADAM_BETA1, ADAM_BETA2, ADAM_EPSILON};

use std::fmt;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::Label;
use crate::features::{FAMILIES, FAMILY_DEPTHS};
use crate::nn::{compute_loss, Architecture, EasiDeepModel, LossTerms, Mode, NnError, CONV_LAYERS};
use crate::spatial::GridSet;

/// Samples per inference call.
const PREDICT_CHUNK: usize = 128;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Upper bound on epochs; one validation round follows each epoch.
    pub max_epoch: usize,
    /// Rounds without a strict validation-accuracy improvement before stopping.
    pub early_stop_patience: usize,
    /// L2 coefficient on conv and dense weights.
    pub alpha: f64,
    pub seed: u64,
    /// Feature families that get a channel.
    pub channel_mask: [bool; FAMILIES],
    pub filter_size: usize,
    pub conv_widths: [usize; CONV_LAYERS],
    pub dense_widths: Vec<usize>,
    /// End training once validation accuracy reaches 1. No later round can
    /// then be selected, so the returned model is unchanged; only the
    /// history is shorter.
    pub stop_when_perfect: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let arch = Architecture::default();
        TrainConfig {
            batch_size: 148,
            learning_rate: 0.00006,
            max_epoch: 10000,
            early_stop_patience: 1500,
            alpha: 1e-4,
            seed: 0,
            channel_mask: arch.channel_mask,
            filter_size: arch.filter_size,
            conv_widths: arch.conv_widths,
            dense_widths: arch.dense_widths,
            stop_when_perfect: false,
        }
    }
}

impl TrainConfig {
    pub fn architecture(&self) -> Architecture {
        Architecture {
            channel_mask: self.channel_mask,
            input_depths: FAMILY_DEPTHS,
            conv_widths: self.conv_widths,
            filter_size: self.filter_size,
            dense_widths: self.dense_widths.clone(),
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        if self.batch_size < 2 {
            return Err(TrainError::Config(format!("batch_size must be at least 2, got {}", self.batch_size)));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(TrainError::Config(format!("learning_rate must be positive, got {}", self.learning_rate)));
        }
        if self.max_epoch == 0 {
            return Err(TrainError::Config("max_epoch must be at least 1".into()));
        }
        if self.early_stop_patience == 0 {
            return Err(TrainError::Config("early_stop_patience must be at least 1".into()));
        }
        if !(self.alpha.is_finite() && self.alpha >= 0.0) {
            return Err(TrainError::Config(format!("alpha must be non-negative, got {}", self.alpha)));
        }
        self.architecture().validate().map_err(|e| TrainError::Config(e.to_string()))
    }
}

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error("{0}")]
    Shape(String),
    #[error("{0} set is empty")]
    EmptySet(&'static str),
    #[error("training set has {0} sample(s); at least 2 are needed for a batch")]
    TooFewSamples(usize),
    #[error("invalid input: {0}")]
    Input(String),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StopReason {
    MaxEpoch,
    EarlyStop,
    PerfectValidation,
}

impl fmt::Display for StopReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StopReason::MaxEpoch => "max-epoch",
            StopReason::EarlyStop => "early-stop",
            StopReason::PerfectValidation => "perfect-validation",
        })
    }
}

/// One evaluation round (one epoch).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    /// 1-based epoch number.
    pub round: usize,
    /// Mean over the epoch's minibatches.
    pub train_loss: LossTerms,
    pub validation_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainHistory {
    pub rounds: Vec<RoundRecord>,
    /// Index into `rounds` of the retained model.
    pub best_round: usize,
    pub stop_reason: StopReason,
    /// Seconds since the start of training at the end of each round. Kept
    /// apart from `rounds` so that histories of equal runs compare equal.
    pub elapsed: Vec<f64>,
}

impl TrainHistory {
    pub fn best(&self) -> &RoundRecord {
        &self.rounds[self.best_round]
    }

    /// Rounds as CSV; wall-clock times are not written.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<(), TrainError> {
        let path = path.as_ref();
        let err = |source| TrainError::Csv { path: path.to_path_buf(), source };
        let mut w = csv::Writer::from_path(path).map_err(err)?;
        w.write_record(["round", "train_ce", "train_se", "train_reg", "train_total", "validation_accuracy", "best"])
            .map_err(err)?;
        for (i, r) in self.rounds.iter().enumerate() {
            let l = r.train_loss;
            w.write_record([
                r.round.to_string(),
                l.ce.to_string(),
                l.se.to_string(),
                l.reg.to_string(),
                l.total.to_string(),
                r.validation_accuracy.to_string(),
                u8::from(i == self.best_round).to_string(),
            ])
            .map_err(err)?;
        }
        w.flush().map_err(|e| err(e.into()))
    }
}

/// Prediction for one sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Prediction {
    pub probabilities: [f64; 2],
    pub label: Label,
    /// Both probabilities were equal; the label then defaults to patient.
    pub tie: bool,
}

impl Prediction {
    pub fn from_probabilities(p: [f64; 2]) -> Self {
        let tie = p[0] == p[1];
        let label = if p[0] > p[1] { Label::Healthy } else { Label::Patient };
        Prediction { probabilities: p, label, tie }
    }
}

/// Inference-mode predictions for every sample of `set`.
pub fn predict(model: &EasiDeepModel, set: &GridSet) -> Result<Vec<Prediction>, TrainError> {
    for f in model.active_channels() {
        if let Some(i) = set.families[*f].iter().position(|v| !v.is_finite()) {
            return Err(TrainError::Input(format!(
                "non-finite value at position {i} of family {f}; inputs must be imputed and scaled"
            )));
        }
    }
    let starts: Vec<usize> = (0..set.len()).step_by(PREDICT_CHUNK).collect();
    let chunks = starts
        .par_iter()
        .map(|&s| {
            let idx: Vec<usize> = (s..(s + PREDICT_CHUNK).min(set.len())).collect();
            model.forward_set(&set.select(&idx), Mode::Infer).map(|(p, _)| p)
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(chunks.into_iter().flatten().map(Prediction::from_probabilities).collect())
}

/// Fraction of predictions whose label matches.
pub fn accuracy(predictions: &[Prediction], labels: &[Label]) -> f64 {
    if predictions.is_empty() {
        return 0.0;
    }
    let hits = predictions.iter().zip(labels).filter(|(p, l)| p.label == **l).count();
    hits as f64 / predictions.len() as f64
}

/// Train on `train`, select the round with the highest validation accuracy.
pub fn train_model(train: &GridSet, validation: &GridSet, config: &TrainConfig) -> Result<(EasiDeepModel, TrainHistory), TrainError> {
    config.validate()?;
    if train.is_empty() {
        return Err(TrainError::EmptySet("training"));
    }
    if validation.is_empty() {
        return Err(TrainError::EmptySet("validation"));
    }
    if train.len() < 2 {
        return Err(TrainError::TooFewSamples(train.len()));
    }
    if validation.labels.iter().all(|l| *l == validation.labels[0]) {
        log::warn!("validation set holds a single class; accuracy is still reported");
    }

    let mut model = EasiDeepModel::new(config.architecture(), config.seed)?;
    let mut adam = AdamState::new(model.params());
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(1);
    let labels = train.encoded_labels();
    let mut order: Vec<usize> = (0..train.len()).collect();
    let start = Instant::now();

    let mut rounds = Vec::new();
    let mut elapsed = Vec::new();
    let mut best: Option<(usize, f64, EasiDeepModel)> = None;
    let mut stale = 0;
    let mut stop_reason = StopReason::MaxEpoch;

    for epoch in 1..=config.max_epoch {
        order.shuffle(&mut rng);
        let mut sum = LossTerms { ce: 0.0, se: 0.0, reg: 0.0, total: 0.0 };
        let mut batches = 0usize;
        for idx in order.chunks(config.batch_size) {
            if idx.len() < 2 {
                continue;
            }
            let batch = train.select(idx);
            let batch_labels: Vec<[f64; 2]> = idx.iter().map(|&i| labels[i]).collect();
            let (probs, trace) = model.forward_set(&batch, Mode::Train)?;
            let loss = compute_loss(&probs, &batch_labels, &model, config.alpha)?;
            let grads = model.backward(&trace, &batch_labels, config.alpha)?;
            adam_step(model.params_mut(), &grads, &mut adam, config.learning_rate)?;
            model.update_running_stats(&trace)?;
            sum.ce += loss.ce;
            sum.se += loss.se;
            sum.reg += loss.reg;
            sum.total += loss.total;
            batches += 1;
        }
        let n = batches.max(1) as f64;
        let train_loss = LossTerms { ce: sum.ce / n, se: sum.se / n, reg: sum.reg / n, total: sum.total / n };

        let val = accuracy(&predict(&model, validation)?, &validation.labels);
        rounds.push(RoundRecord { round: epoch, train_loss, validation_accuracy: val });
        elapsed.push(start.elapsed().as_secs_f64());
        log::debug!("round {epoch}: loss {:.6}, validation accuracy {val:.4}", train_loss.total);

        if best.as_ref().is_none_or(|(_, acc, _)| val > *acc) {
            log::info!("round {epoch}: validation accuracy improved to {val:.4}");
            best = Some((rounds.len() - 1, val, model.clone()));
            stale = 0;
            if config.stop_when_perfect && val >= 1.0 {
                stop_reason = StopReason::PerfectValidation;
                break;
            }
        } else {
            stale += 1;
            if stale >= config.early_stop_patience {
                stop_reason = StopReason::EarlyStop;
                break;
            }
        }
    }
    let (best_round, _, best_model) = best.expect("at least one round runs");
    log::info!(
        "training stopped ({stop_reason}) after {} rounds; best round {} with validation accuracy {:.4}",
        rounds.len(),
        best_round + 1,
        rounds[best_round].validation_accuracy
    );
    Ok((best_model, TrainHistory { rounds, best_round, stop_reason, elapsed }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::FAMILY_DEPTHS;
    use crate::nn::compute_loss;
    use rand_distr::{Distribution, StandardNormal};

    fn tiny_config() -> TrainConfig {
        TrainConfig {
            batch_size: 16,
            learning_rate: 1e-3,
            max_epoch: 200,
            early_stop_patience: 200,
            alpha: 1e-4,
            seed: 3,
            channel_mask: [true, true, false, false, false, true],
            filter_size: 3,
            conv_widths: [6, 6, 6, 4, 4],
            dense_widths: vec![8, 4, 2],
            stop_when_perfect: false,
        }
    }

    /// Grids whose every value is `+/-shift` plus unit noise, by class.
    fn separable(n: usize, shift: f64, seed: u64) -> GridSet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut set = GridSet::default();
        for i in 0..n {
            let label = if i % 2 == 0 { Label::Healthy } else { Label::Patient };
            let sign = if label == Label::Patient { 1.0 } else { -1.0 };
            for f in 0..FAMILIES {
                for _ in 0..42 * FAMILY_DEPTHS[f] {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    set.families[f].push(sign * shift + z);
                }
            }
            set.labels.push(label);
            set.subject_ids.push(format!("s{i}"));
        }
        set
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        let c = TrainConfig { channel_mask: [false; FAMILIES], ..TrainConfig::default() };
        assert!(matches!(c.validate(), Err(TrainError::Config(_))));
        assert!(TrainConfig { batch_size: 1, ..TrainConfig::default() }.validate().is_err());
        assert!(TrainConfig { learning_rate: 0.0, ..TrainConfig::default() }.validate().is_err());
        assert!(TrainConfig { early_stop_patience: 0, ..TrainConfig::default() }.validate().is_err());
        let d = TrainConfig::default();
        assert_eq!((d.batch_size, d.learning_rate, d.max_epoch, d.early_stop_patience), (148, 0.00006, 10000, 1500));
    }

    #[test]
    fn prediction_rule() {
        let p = Prediction::from_probabilities([0.7, 0.3]);
        assert_eq!((p.label, p.tie), (Label::Healthy, false));
        let p = Prediction::from_probabilities([0.5, 0.5]);
        assert_eq!((p.label, p.tie), (Label::Patient, true));
    }

    #[test]
    fn separable_features_are_learned() {
        let train = separable(200, 0.3, 1);
        let val = separable(60, 0.3, 2);
        let (model, hist) = train_model(&train, &val, &tiny_config()).unwrap();
        assert!(hist.best().validation_accuracy >= 0.95, "{:?}", hist.best());
        assert!(hist.rounds.len() <= 200);
        let acc = accuracy(&predict(&model, &val).unwrap(), &val.labels);
        assert_eq!(acc, hist.best().validation_accuracy);
        let last = hist.rounds.last().unwrap().validation_accuracy;
        assert!(hist.best().validation_accuracy >= last);
    }

    #[test]
    fn constant_labels_stop_early() {
        let mut train = separable(20, 0.0, 4);
        train.families.iter_mut().for_each(|f| f.iter_mut().for_each(|v| *v = 0.0));
        train.labels.iter_mut().for_each(|l| *l = Label::Patient);
        let val = train.clone();
        let cfg = TrainConfig { early_stop_patience: 1, max_epoch: 50, ..tiny_config() };
        let (_, hist) = train_model(&train, &val, &cfg).unwrap();
        assert_eq!(hist.rounds.len(), 2);
        assert_eq!(hist.stop_reason, StopReason::EarlyStop);
        assert_eq!(hist.best_round, 0);
    }

    #[test]
    fn stopping_at_perfect_validation_keeps_the_model() {
        let train = separable(60, 1.0, 7);
        let val = separable(20, 1.0, 8);
        let cfg = TrainConfig { max_epoch: 30, early_stop_patience: 10, ..tiny_config() };
        let (full_model, full) = train_model(&train, &val, &cfg).unwrap();
        assert_eq!(full.best().validation_accuracy, 1.0);
        let (model, short) = train_model(&train, &val, &TrainConfig { stop_when_perfect: true, ..cfg }).unwrap();
        assert_eq!(model, full_model);
        assert_eq!(short.stop_reason, StopReason::PerfectValidation);
        assert_eq!(short.rounds.len(), full.best_round + 1);
        assert_eq!(short.rounds[..], full.rounds[..=full.best_round]);
        assert!(full.rounds.len() > short.rounds.len());
    }

    #[test]
    fn same_seed_same_history() {
        let train = separable(40, 0.2, 5);
        let val = separable(10, 0.2, 6);
        let cfg = TrainConfig { max_epoch: 5, ..tiny_config() };
        let (m1, h1) = train_model(&train, &val, &cfg).unwrap();
        let (m2, h2) = train_model(&train, &val, &cfg).unwrap();
        assert_eq!(h1.rounds, h2.rounds);
        assert_eq!((h1.best_round, h1.stop_reason), (h2.best_round, h2.stop_reason));
        assert_eq!(m1, m2);
        let dir = tempfile::tempdir().unwrap();
        let (a, b) = (dir.path().join("a.csv"), dir.path().join("b.csv"));
        h1.write_csv(&a).unwrap();
        h2.write_csv(&b).unwrap();
        assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    }

    #[test]
    fn small_adam_step_decreases_loss() {
        let cfg = tiny_config();
        for seed in 0..10u64 {
            let model = EasiDeepModel::new(cfg.architecture(), seed).unwrap();
            let set = separable(6, 0.1, 100 + seed);
            let labels = set.encoded_labels();
            let (p, trace) = model.forward_set(&set, Mode::Train).unwrap();
            let before = compute_loss(&p, &labels, &model, cfg.alpha).unwrap().total;
            let grads = model.backward(&trace, &labels, cfg.alpha).unwrap();
            let mut stepped = model.clone();
            let mut state = AdamState::new(stepped.params());
            adam_step(stepped.params_mut(), &grads, &mut state, 1e-6).unwrap();
            let (p2, _) = stepped.forward_set(&set, Mode::Train).unwrap();
            let after = compute_loss(&p2, &labels, &stepped, cfg.alpha).unwrap().total;
            assert!(after < before, "seed {seed}: {after} >= {before}");
        }
    }

    #[test]
    fn predictions_permute_with_the_batch() {
        let cfg = tiny_config();
        let model = EasiDeepModel::new(cfg.architecture(), 8).unwrap();
        let set = separable(300, 0.1, 9);
        let mut perm: Vec<usize> = (0..300).collect();
        perm.shuffle(&mut ChaCha8Rng::seed_from_u64(1));
        let a = predict(&model, &set).unwrap();
        let b = predict(&model, &set.select(&perm)).unwrap();
        for (j, &i) in perm.iter().enumerate() {
            assert_eq!(a[i], b[j]);
        }
    }

    #[test]
    fn predict_rejects_unscaled_input() {
        let cfg = tiny_config();
        let model = EasiDeepModel::new(cfg.architecture(), 8).unwrap();
        let mut set = separable(3, 0.1, 9);
        set.families[0][7] = f64::NAN;
        assert!(matches!(predict(&model, &set), Err(TrainError::Input(_))));
    }

    #[test]
    fn empty_sets_are_rejected() {
        let set = separable(4, 0.1, 1);
        let empty = GridSet::default();
        assert!(matches!(train_model(&empty, &set, &tiny_config()), Err(TrainError::EmptySet("training"))));
        assert!(matches!(train_model(&set, &empty, &tiny_config()), Err(TrainError::EmptySet("validation"))));
    }
}
