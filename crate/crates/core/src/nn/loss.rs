use serde::{Deserialize, Serialize};

use super::{EasiDeepModel, NnError};

/// Probabilities are clamped to `[PROB_CLAMP, 1]` inside the logarithm.
pub const PROB_CLAMP: f64 = 1e-12;

/// Batch-summed objective and its parts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossTerms {
    /// Cross-entropy `-sum y_hat ln y`.
    pub ce: f64,
    /// Squared error `sum (y - y_hat)^2`.
    pub se: f64,
    /// `alpha * sum W^2` over conv and dense weights.
    pub reg: f64,
    pub total: f64,
}

pub fn check_labels(labels: &[[f64; 2]]) -> Result<(), NnError> {
    for (i, l) in labels.iter().enumerate() {
        if !(l == &[1.0, 0.0] || l == &[0.0, 1.0]) {
            return Err(NnError::Label(i));
        }
    }
    Ok(())
}

pub fn compute_loss(probs: &[[f64; 2]], labels: &[[f64; 2]], model: &EasiDeepModel, alpha: f64) -> Result<LossTerms, NnError> {
    if probs.is_empty() {
        return Err(NnError::EmptyBatch);
    }
    if probs.len() != labels.len() {
        return Err(NnError::Shape { what: "labels".into(), expected: vec![probs.len()], got: vec![labels.len()] });
    }
    check_labels(labels)?;
    let (mut ce, mut se) = (0.0, 0.0);
    for (p, t) in probs.iter().zip(labels) {
        for c in 0..2 {
            if t[c] != 0.0 {
                ce -= t[c] * p[c].clamp(PROB_CLAMP, 1.0).ln();
            }
            se += (p[c] - t[c]).powi(2);
        }
    }
    let reg = alpha * model.weight_square_sum();
    Ok(LossTerms { ce, se, reg, total: ce + se + reg })
}

/// Gradient of `ce + se` for one sample with respect to its two logits.
pub(crate) fn logit_gradient(p: &[f64; 2], t: &[f64; 2]) -> [f64; 2] {
    let mut g = [0.0; 2];
    for c in 0..2 {
        if t[c] != 0.0 && p[c] > PROB_CLAMP {
            g[c] -= t[c] / p[c];
        }
        g[c] += 2.0 * (p[c] - t[c]);
    }
    let s = g[0] * p[0] + g[1] * p[1];
    [p[0] * (g[0] - s), p[1] * (g[1] - s)]
}
