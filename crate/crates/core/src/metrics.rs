//! Confusion counts, accuracy / sensitivity / specificity and ROC AUC.
//! The positive class is [`Label::Patient`].

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::dataset::Label;
use crate::train::Prediction;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum MetricsError {
    #[error("{predictions} predictions for {truth} labels")]
    LengthMismatch { predictions: usize, truth: usize },
    #[error("no predictions to evaluate")]
    Empty,
    #[error("AUC is undefined when the truth holds a single class")]
    SingleClass,
    #[error("non-finite score at position {0}")]
    NonFinite(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: usize,
    pub tn: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl ConfusionCounts {
    /// Actual positives.
    pub fn p(&self) -> usize {
        self.tp + self.fn_
    }

    /// Actual negatives.
    pub fn n(&self) -> usize {
        self.tn + self.fp
    }

    pub fn total(&self) -> usize {
        self.p() + self.n()
    }
}

fn check_lengths(predictions: usize, truth: usize) -> Result<(), MetricsError> {
    if predictions != truth {
        return Err(MetricsError::LengthMismatch { predictions, truth });
    }
    if predictions == 0 {
        return Err(MetricsError::Empty);
    }
    Ok(())
}

pub fn confusion_counts(predicted: &[Label], truth: &[Label]) -> Result<ConfusionCounts, MetricsError> {
    check_lengths(predicted.len(), truth.len())?;
    let mut c = ConfusionCounts::default();
    for (p, t) in predicted.iter().zip(truth) {
        match (p, t) {
            (Label::Patient, Label::Patient) => c.tp += 1,
            (Label::Healthy, Label::Healthy) => c.tn += 1,
            (Label::Patient, Label::Healthy) => c.fp += 1,
            (Label::Healthy, Label::Patient) => c.fn_ += 1,
        }
    }
    Ok(c)
}

/// Rates derived from confusion counts; `None` marks a zero denominator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rates {
    pub accuracy: f64,
    pub sensitivity: Option<f64>,
    pub specificity: Option<f64>,
}

pub fn metrics(c: &ConfusionCounts) -> Result<Rates, MetricsError> {
    if c.total() == 0 {
        return Err(MetricsError::Empty);
    }
    let ratio = |num: usize, den: usize| (den > 0).then(|| num as f64 / den as f64);
    Ok(Rates {
        accuracy: (c.tp + c.tn) as f64 / c.total() as f64,
        sensitivity: ratio(c.tp, c.p()),
        specificity: ratio(c.tn, c.n()),
    })
}

/// Probability that a random positive outscores a random negative, ties
/// counting one half. Computed from mid-ranks in O(n log n).
pub fn auc(scores: &[f64], truth: &[Label]) -> Result<f64, MetricsError> {
    check_lengths(scores.len(), truth.len())?;
    if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
        return Err(MetricsError::NonFinite(i));
    }
    let pos = truth.iter().filter(|l| **l == Label::Patient).count();
    let neg = truth.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(MetricsError::SingleClass);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // twice the mid-rank keeps the sum integral
    let mut rank2_sum: u64 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let rank2 = (i + 1 + j + 1) as u64;
        for &k in &order[i..=j] {
            if truth[k] == Label::Patient {
                rank2_sum += rank2;
            }
        }
        i = j + 1;
    }
    let u2 = rank2_sum - (pos * (pos + 1)) as u64;
    Ok(u2 as f64 / (2 * pos * neg) as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    /// `None` when the truth holds a single class.
    pub auc: Option<f64>,
    pub accuracy: f64,
    pub sensitivity: Option<f64>,
    pub specificity: Option<f64>,
    pub counts: ConfusionCounts,
    /// Samples whose two probabilities were equal.
    pub ties: usize,
}

/// Metrics of hard labels and patient-class probabilities.
pub fn evaluate(predictions: &[Prediction], truth: &[Label]) -> Result<MetricsReport, MetricsError> {
    check_lengths(predictions.len(), truth.len())?;
    let labels: Vec<Label> = predictions.iter().map(|p| p.label).collect();
    let counts = confusion_counts(&labels, truth)?;
    let rates = metrics(&counts)?;
    let scores: Vec<f64> = predictions.iter().map(|p| p.probabilities[1]).collect();
    let auc = match auc(&scores, truth) {
        Ok(a) => Some(a),
        Err(MetricsError::SingleClass) => None,
        Err(e) => return Err(e),
    };
    Ok(MetricsReport {
        auc,
        accuracy: rates.accuracy,
        sensitivity: rates.sensitivity,
        specificity: rates.specificity,
        counts,
        ties: predictions.iter().filter(|p| p.tie).count(),
    })
}

fn percent(v: Option<f64>) -> String {
    v.map_or("undefined".to_string(), |x| format!("{:.2}%", 100.0 * x))
}

impl MetricsReport {
    pub const TABLE_HEADER: [&'static str; 5] = ["model", "AUC", "accuracy", "sensitivity", "specificity"];

    /// The four metrics of one row, formatted for display.
    pub fn row(&self) -> [String; 4] {
        [
            self.auc.map_or("undefined".to_string(), |a| format!("{a:.4}")),
            percent(Some(self.accuracy)),
            percent(self.sensitivity),
            percent(self.specificity),
        ]
    }

    /// Aligned table with a header and one row per `(name, report)`.
    pub fn table<'a>(rows: impl IntoIterator<Item = (&'a str, &'a MetricsReport)>) -> String {
        let mut cells: Vec<Vec<String>> = vec![Self::TABLE_HEADER.iter().map(|s| s.to_string()).collect()];
        for (name, r) in rows {
            let mut line = vec![name.to_string()];
            line.extend(r.row());
            cells.push(line);
        }
        let widths: Vec<usize> =
            (0..Self::TABLE_HEADER.len()).map(|c| cells.iter().map(|r| r[c].len()).max().unwrap_or(0)).collect();
        let mut out = String::new();
        for line in cells {
            let mut text = String::new();
            for (c, cell) in line.iter().enumerate() {
                if c == 0 {
                    let _ = write!(text, "{cell:<w$}", w = widths[c]);
                } else {
                    let _ = write!(text, "  {cell:>w$}", w = widths[c]);
                }
            }
            out.push_str(text.trim_end());
            out.push('\n');
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}
