//! Six feature families computed per signal, and their assembly over a grid.
//!
//! | index | family  | depth |
//! |-------|---------|-------|
//! | 0     | time    | 11    |
//! | 1     | freq    | 14    |
//! | 2     | dwt     | 15    |
//! | 3     | wpd     | 8     |
//! | 4     | ar      | 14    |
//! | 5     | entropy | 1     |

mod ar;
mod entropy;
mod sample;
mod spectrum;
pub mod store;
mod time;
pub mod wavelet;

pub use ar::{ar_features, fit_ar, yule_walker_autocorrelation, ArFit};
pub use entropy::entropy_feature;
pub use sample::{extract_cell, extract_sample, family_offsets, CellFeatures, FeatureCache, FeatureSample};
pub use spectrum::{dft_spectrum, freq_features, FreqFeatures, Spectrum};
pub use time::time_features;
pub use wavelet::{dwt_features, wpd_features, PaddingMode, WaveletName};

use serde::{Deserialize, Serialize};

/// Number of feature families.
pub const FAMILIES: usize = 6;
/// Values per cell for each family.
pub const FAMILY_DEPTHS: [usize; FAMILIES] = [11, 14, 15, 8, 14, 1];
/// Short family names used in column headers.
pub const FAMILY_NAMES: [&str; FAMILIES] = ["time", "freq", "dwt", "wpd", "ar", "entropy"];
/// Values per cell over all families.
pub const CELL_DEPTH: usize = 63;
/// Values per sample: 6 x 7 x 63.
pub const SAMPLE_VALUES: usize = 2646;

pub const TIME_FEATURE_NAMES: [&str; 11] =
    ["mean", "var", "std", "mode", "max", "min", "over_zero", "range", "aemg", "iemg", "rms"];
pub const FREQ_FEATURE_NAMES: [&str; 14] = [
    "dc", "mean", "var", "std", "skew", "kurt", "entropy", "s_mean", "s_std", "s_var", "s_skew", "s_kurt", "mf",
    "mpf",
];
pub const DWT_SET_NAMES: [&str; 5] = ["ca5", "cd5", "cd4", "cd3", "cd2"];
pub const DWT_STAT_NAMES: [&str; 3] = ["cmax", "singular", "cenergy"];

/// Per-value feature names within one cell of `family`.
pub fn feature_names(family: usize) -> Vec<String> {
    match family {
        0 => TIME_FEATURE_NAMES.iter().map(|s| s.to_string()).collect(),
        1 => FREQ_FEATURE_NAMES.iter().map(|s| s.to_string()).collect(),
        2 => DWT_SET_NAMES
            .iter()
            .flat_map(|set| DWT_STAT_NAMES.iter().map(move |stat| format!("{set}{stat}")))
            .collect(),
        3 => (0..8).map(|b| format!("band{b}")).collect(),
        4 => (1..=10).map(|i| format!("p10phi{i}")).chain((1..=4).map(|i| format!("p4phi{i}"))).collect(),
        5 => vec!["entropy".to_string()],
        _ => panic!("family index {family} out of range"),
    }
}

/// Options shared by all extractors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeatureConfig {
    pub wavelet: WaveletName,
    pub padding: PaddingMode,
    /// Hz; sets the frequency axis of mf and mpf.
    pub sample_rate: f64,
    /// Histogram bins for the signal entropy.
    pub entropy_bins: usize,
    /// Histogram bins for the time-domain mode.
    pub mode_bins: usize,
    /// Take the square root in rms.
    pub rms_sqrt: bool,
    /// Lower bound for log10 features; also substitutes for log10 of a
    /// non-positive argument.
    pub log_floor: f64,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig {
            wavelet: WaveletName::Db4,
            padding: PaddingMode::Symmetric,
            sample_rate: 1000.0,
            entropy_bins: 128,
            mode_bins: 64,
            rms_sqrt: false,
            log_floor: -12.0,
        }
    }
}

impl FeatureConfig {
    /// Compact identifier of everything that changes extracted values.
    pub fn fingerprint(&self) -> String {
        format!(
            "features-v{}:{}:{}:fs{}:eb{}:mb{}:rms_sqrt={}:floor{}",
            store::FEATURE_SCHEMA_VERSION,
            self.wavelet.as_str(),
            self.padding.as_str(),
            self.sample_rate,
            self.entropy_bins,
            self.mode_bins,
            self.rms_sqrt,
            self.log_floor
        )
    }

    pub fn validate(&self) -> Result<(), FeatureError> {
        if !(self.sample_rate.is_finite() && self.sample_rate > 0.0) {
            return Err(FeatureError::Config(format!("sample_rate must be positive, got {}", self.sample_rate)));
        }
        if self.entropy_bins == 0 || self.mode_bins == 0 {
            return Err(FeatureError::Config("histogram bin counts must be positive".into()));
        }
        if !self.log_floor.is_finite() {
            return Err(FeatureError::Config("log_floor must be finite".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum FeatureError {
    #[error("signal too short: need at least {needed} samples, got {got}")]
    TooShort { needed: usize, got: usize },
    #[error("signal contains a non-finite value at index {0}")]
    InvalidSignal(usize),
    #[error("degenerate signal: {0}")]
    Degenerate(String),
    #[error("unusable sample: {missing} of 42 cells have missing features")]
    UnusableSample { missing: usize },
    #[error("invalid feature configuration: {0}")]
    Config(String),
}

pub(crate) fn check_signal(signal: &[f64], min_len: usize) -> Result<(), FeatureError> {
    if signal.len() < min_len {
        return Err(FeatureError::TooShort { needed: min_len, got: signal.len() });
    }
    if let Some(pos) = signal.iter().position(|v| !v.is_finite()) {
        return Err(FeatureError::InvalidSignal(pos));
    }
    Ok(())
}

/// `log10(x)`, clamped below at `floor`; non-positive `x` gives `floor`.
pub(crate) fn log10_or_floor(x: f64, floor: f64) -> f64 {
    if x > 0.0 {
        x.log10().max(floor)
    } else {
        floor
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn depths_add_up() {
        assert_eq!(FAMILY_DEPTHS.iter().sum::<usize>(), CELL_DEPTH);
        assert_eq!(6 * 7 * CELL_DEPTH, SAMPLE_VALUES);
        for f in 0..FAMILIES {
            assert_eq!(feature_names(f).len(), FAMILY_DEPTHS[f]);
        }
    }
}
