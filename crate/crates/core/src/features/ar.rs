use super::{check_signal, FeatureError};

/// Autoregressive model `y(t) = sum_i phi_i y(t - i) + e(t)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ArFit {
    pub order: usize,
    /// `phi_1 ..= phi_p`.
    pub coefficients: Vec<f64>,
    /// Variance of the one-step prediction residual.
    pub noise_variance: f64,
}

/// Biased autocorrelation `r[k] = (1/n) sum_t x[t] x[t+k]` for `k = 0..=max_lag`.
pub fn yule_walker_autocorrelation(x: &[f64], max_lag: usize) -> Vec<f64> {
    let n = x.len();
    (0..=max_lag)
        .map(|k| {
            if k >= n {
                0.0
            } else {
                x[..n - k].iter().zip(&x[k..]).map(|(a, b)| a * b).sum::<f64>() / n as f64
            }
        })
        .collect()
}

/// Fit an AR(`order`) model by Levinson-Durbin on the mean-removed signal.
pub fn fit_ar(signal: &[f64], order: usize) -> Result<ArFit, FeatureError> {
    check_signal(signal, order + 1)?;
    let n = signal.len() as f64;
    let mean = signal.iter().sum::<f64>() / n;
    let centred: Vec<f64> = signal.iter().map(|p| p - mean).collect();
    let scale = signal.iter().fold(0.0f64, |m, p| m.max(p.abs()));
    let r = yule_walker_autocorrelation(&centred, order);
    if r[0] <= (1e-12 * scale).powi(2) {
        return Err(FeatureError::Degenerate("zero variance after mean removal".into()));
    }

    let mut phi = vec![0.0; order];
    let mut prev = vec![0.0; order];
    let mut err = r[0];
    for m in 1..=order {
        let mut acc = r[m];
        for i in 1..m {
            acc -= phi[i - 1] * r[m - i];
        }
        let k = acc / err;
        prev[..m - 1].copy_from_slice(&phi[..m - 1]);
        for i in 1..m {
            phi[i - 1] = prev[i - 1] - k * prev[m - i - 1];
        }
        phi[m - 1] = k;
        err *= 1.0 - k * k;
        if err.partial_cmp(&0.0) != Some(std::cmp::Ordering::Greater) {
            return Err(FeatureError::Degenerate(format!(
                "prediction error vanished at order {m}; autocorrelation matrix is singular"
            )));
        }
    }
    Ok(ArFit { order, coefficients: phi, noise_variance: err })
}

/// Coefficients of an order-10 fit followed by those of an order-4 fit.
pub fn ar_features(signal: &[f64]) -> Result<[f64; 14], FeatureError> {
    check_signal(signal, 21)?;
    let p10 = fit_ar(signal, 10)?;
    let p4 = fit_ar(signal, 4)?;
    let mut out = [0.0; 14];
    out[..10].copy_from_slice(&p10.coefficients);
    out[10..].copy_from_slice(&p4.coefficients);
    Ok(out)
}
