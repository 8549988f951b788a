use num_complex::Complex64;
use rustfft::FftPlanner;

use super::{check_signal, FeatureError};

/// Unnormalised forward DFT of a real signal plus its one-sided magnitudes.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    /// `X_m = sum_t p_t exp(-2 pi i m t / n)`, `m = 0..n`.
    pub coefficients: Vec<Complex64>,
    /// `|X_0| ..= |X_{n/2}|`.
    pub one_sided_magnitudes: Vec<f64>,
}

impl Spectrum {
    /// Length of the transformed signal.
    pub fn len(&self) -> usize {
        self.coefficients.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coefficients.is_empty()
    }
}

pub fn dft_spectrum(signal: &[f64]) -> Result<Spectrum, FeatureError> {
    check_signal(signal, 2)?;
    let n = signal.len();
    let mut buf: Vec<Complex64> = signal.iter().map(|&p| Complex64::new(p, 0.0)).collect();
    FftPlanner::<f64>::new().plan_fft_forward(n).process(&mut buf);
    let one_sided_magnitudes = buf[..n / 2 + 1].iter().map(|c| c.norm()).collect();
    Ok(Spectrum { coefficients: buf, one_sided_magnitudes })
}

/// Fourteen spectral statistics and whether the spectrum was all zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FreqFeatures {
    /// `[dc, mean, var, std, skew, kurt, entropy, s_mean, s_std, s_var,
    /// s_skew, s_kurt, mf, mpf]`
    pub values: [f64; 14],
    /// Set when the magnitudes sum to zero; shape features, mf and mpf are
    /// then reported as 0.
    pub degenerate: bool,
}

/// Spectral features over the one-sided magnitudes `x_0..x_{a-1}`.
///
/// `mean/var/std/skew/kurt` are moments of the magnitude values (kurt is
/// excess kurtosis). `entropy` is the Shannon entropy of the magnitudes
/// normalised to sum to one. The `s_*` moments treat the normalised
/// magnitudes as a distribution over bin index. `mf` is the first frequency
/// at which cumulative power reaches half the total; `mpf` is the
/// power-weighted mean frequency. Bin `i` sits at `i * sample_rate / n`.
pub fn freq_features(spectrum: &Spectrum, sample_rate: f64) -> FreqFeatures {
    let x = &spectrum.one_sided_magnitudes;
    let a = x.len() as f64;
    let bin_hz = sample_rate / spectrum.len() as f64;

    let dc = x[0];
    let mean = x.iter().sum::<f64>() / a;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / a;
    let std = var.sqrt();

    let total: f64 = x.iter().sum();
    if total <= 0.0 {
        log::warn!("all-zero spectrum; shape features reported as 0");
        let mut values = [0.0; 14];
        values[..4].copy_from_slice(&[dc, mean, var, std]);
        return FreqFeatures { values, degenerate: true };
    }

    let (skew, kurt) = if std > 0.0 {
        let m3 = x.iter().map(|v| ((v - mean) / std).powi(3)).sum::<f64>() / a;
        let m4 = x.iter().map(|v| ((v - mean) / std).powi(4)).sum::<f64>() / a;
        (m3, m4 - 3.0)
    } else {
        (0.0, 0.0)
    };

    let entropy = -x
        .iter()
        .map(|v| v / total)
        .filter(|&q| q > 0.0)
        .map(|q| q * q.ln())
        .sum::<f64>();

    let s_mean = x.iter().enumerate().map(|(i, v)| i as f64 * v).sum::<f64>() / total;
    let central = |k: i32| {
        x.iter().enumerate().map(|(i, v)| (i as f64 - s_mean).powi(k) * v).sum::<f64>() / total
    };
    let s_var = central(2);
    let s_std = s_var.sqrt();
    let (s_skew, s_kurt) = if s_std > 0.0 {
        (central(3) / s_std.powi(3), central(4) / (s_var * s_var) - 3.0)
    } else {
        (0.0, 0.0)
    };

    let power: Vec<f64> = x.iter().map(|v| v * v).collect();
    let total_power: f64 = power.iter().sum();
    let mut acc = 0.0;
    let mut median_bin = power.len() - 1;
    for (i, p) in power.iter().enumerate() {
        acc += p;
        if acc >= total_power / 2.0 {
            median_bin = i;
            break;
        }
    }
    let mf = median_bin as f64 * bin_hz;
    let mpf = power.iter().enumerate().map(|(i, p)| i as f64 * bin_hz * p).sum::<f64>() / total_power;

    FreqFeatures {
        values: [dc, mean, var, std, skew, kurt, entropy, s_mean, s_std, s_var, s_skew, s_kurt, mf, mpf],
        degenerate: false,
    }
}
