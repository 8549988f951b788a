use super::time::bin_index;
use super::{check_signal, FeatureConfig, FeatureError};

/// Shannon entropy (nats) of the sample values, histogrammed into
/// `config.entropy_bins` equal bins over `[min, max]`.
pub fn entropy_feature(signal: &[f64], config: &FeatureConfig) -> Result<f64, FeatureError> {
    check_signal(signal, 2)?;
    let min = signal.iter().copied().fold(f64::INFINITY, f64::min);
    let max = signal.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let range = max - min;
    if range <= 0.0 {
        return Ok(0.0);
    }
    let bins = config.entropy_bins;
    let mut counts = vec![0usize; bins];
    for &p in signal {
        counts[bin_index(p, min, range, bins)] += 1;
    }
    let n = signal.len() as f64;
    Ok(-counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            p * p.ln()
        })
        .sum::<f64>())
}
