use super::{check_signal, FeatureConfig, FeatureError};

/// Eleven time-domain statistics, in the order
/// `[mean, var, std, mode, max, min, over_zero, range, aemg, iemg, rms]`.
///
/// `var` is the population variance. `iemg` sums absolute deviations from the
/// mean and `aemg` averages them. `rms` is the mean square unless
/// `config.rms_sqrt` is set. `over_zero` counts sign changes of the
/// mean-removed signal. `mode` is the centre of the fullest of
/// `config.mode_bins` equal bins over `[min, max]` (lowest bin wins ties).
pub fn time_features(signal: &[f64], config: &FeatureConfig) -> Result<[f64; 11], FeatureError> {
    check_signal(signal, 2)?;
    let n = signal.len() as f64;
    let mean = signal.iter().sum::<f64>() / n;
    let var = signal.iter().map(|p| (p - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    let max = signal.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = signal.iter().copied().fold(f64::INFINITY, f64::min);
    let range = max - min;
    let iemg: f64 = signal.iter().map(|p| (p - mean).abs()).sum();
    let aemg = iemg / n;
    let mean_square = signal.iter().map(|p| p * p).sum::<f64>() / n;
    let rms = if config.rms_sqrt { mean_square.sqrt() } else { mean_square };
    let over_zero = mean_crossings(signal, mean) as f64;
    let mode = histogram_mode(signal, min, range, config.mode_bins);
    Ok([mean, var, std, mode, max, min, over_zero, range, aemg, iemg, rms])
}

fn mean_crossings(signal: &[f64], mean: f64) -> usize {
    let mut last = 0i8;
    let mut count = 0;
    for p in signal {
        let d = p - mean;
        let sign = if d > 0.0 {
            1
        } else if d < 0.0 {
            -1
        } else {
            0
        };
        if sign != 0 {
            if last != 0 && sign != last {
                count += 1;
            }
            last = sign;
        }
    }
    count
}

/// Bin index of `x` among `bins` equal-width bins over `[min, min + range]`.
pub(crate) fn bin_index(x: f64, min: f64, range: f64, bins: usize) -> usize {
    if range <= 0.0 {
        return 0;
    }
    let idx = ((x - min) / range * bins as f64).floor() as usize;
    idx.min(bins - 1)
}

fn histogram_mode(signal: &[f64], min: f64, range: f64, bins: usize) -> f64 {
    if range <= 0.0 {
        return min;
    }
    let mut counts = vec![0usize; bins];
    for &p in signal {
        counts[bin_index(p, min, range, bins)] += 1;
    }
    let mut best = 0;
    for (i, &c) in counts.iter().enumerate() {
        if c > counts[best] {
            best = i;
        }
    }
    min + (best as f64 + 0.5) * range / bins as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    const MEAN: usize = 0;
    const VAR: usize = 1;
    const STD: usize = 2;
    const MODE: usize = 3;
    const MAX: usize = 4;
    const MIN: usize = 5;
    const OVER_ZERO: usize = 6;
    const RANGE: usize = 7;
    const AEMG: usize = 8;
    const IEMG: usize = 9;
    const RMS: usize = 10;

    fn cfg() -> FeatureConfig {
        FeatureConfig::default()
    }

    #[test]
    fn one_two_three() {
        let f = time_features(&[1.0, 2.0, 3.0], &cfg()).unwrap();
        assert_eq!(f[MEAN], 2.0);
        assert_eq!(f[RANGE], 2.0);
        assert_eq!(f[IEMG], 2.0);
        assert!((f[AEMG] - 2.0 / 3.0).abs() < 1e-15);
        assert!((f[RMS] - 14.0 / 3.0).abs() < 1e-15);
        assert_eq!(f[MIN], 1.0);
        assert_eq!(f[MAX], 3.0);
        assert!((f[VAR] - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn rms_sqrt_flag() {
        let c = FeatureConfig { rms_sqrt: true, ..cfg() };
        let f = time_features(&[1.0, 2.0, 3.0], &c).unwrap();
        assert!((f[RMS] - (14.0f64 / 3.0).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn constant_signal() {
        let f = time_features(&[5.0; 4], &cfg()).unwrap();
        assert_eq!(f[VAR], 0.0);
        assert_eq!(f[STD], 0.0);
        assert_eq!(f[RANGE], 0.0);
        assert_eq!(f[IEMG], 0.0);
        assert_eq!(f[OVER_ZERO], 0.0);
        assert_eq!(f[MODE], 5.0);
    }

    #[test]
    fn alternating_crossings() {
        let f = time_features(&[1.0, -1.0, 1.0, -1.0], &cfg()).unwrap();
        assert_eq!(f[MEAN], 0.0);
        assert_eq!(f[OVER_ZERO], 3.0);
    }

    #[test]
    fn crossings_skip_samples_at_the_mean() {
        // mean 0; the zero in the middle neither starts nor breaks a crossing
        let f = time_features(&[1.0, 0.0, -1.0, 0.0, 1.0, -1.0], &cfg()).unwrap();
        assert_eq!(f[OVER_ZERO], 3.0);
    }

    #[test]
    fn mode_picks_fullest_bin() {
        let mut s = vec![0.0, 10.0];
        s.extend(std::iter::repeat(7.3).take(5));
        let f = time_features(&s, &cfg()).unwrap();
        // bin width 10/64; 7.3 falls in bin 46
        assert!((f[MODE] - (46.5 * 10.0 / 64.0)).abs() < 1e-12);
    }

    #[test]
    fn errors() {
        assert_eq!(time_features(&[1.0], &cfg()), Err(FeatureError::TooShort { needed: 2, got: 1 }));
        assert_eq!(time_features(&[1.0, f64::NAN], &cfg()), Err(FeatureError::InvalidSignal(1)));
    }
}
