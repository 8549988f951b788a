//! Orthogonal Daubechies filter banks: multilevel DWT, its inverse, and full
//! wavelet-packet decomposition.
//!
//! Convolution and boundary conventions follow the usual filter-bank layout:
//! with `F` taps and `N` input samples, the symmetric and zero modes yield
//! `floor((N + F - 1) / 2)` coefficients per branch; periodization yields
//! `ceil(N / 2)` and is exactly orthogonal for even lengths.

use serde::{Deserialize, Serialize};

use super::{check_signal, log10_or_floor, FeatureConfig, FeatureError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WaveletName {
    Haar,
    Db2,
    Db3,
    Db4,
}

impl WaveletName {
    pub fn as_str(self) -> &'static str {
        match self {
            WaveletName::Haar => "haar",
            WaveletName::Db2 => "db2",
            WaveletName::Db3 => "db3",
            WaveletName::Db4 => "db4",
        }
    }

    /// Decomposition low-pass filter.
    pub fn dec_lo(self) -> &'static [f64] {
        match self {
            WaveletName::Haar => &[std::f64::consts::FRAC_1_SQRT_2, std::f64::consts::FRAC_1_SQRT_2],
            WaveletName::Db2 => &[
                -0.12940952255126037,
                0.2241438680420134,
                0.8365163037378079,
                0.48296291314453416,
            ],
            WaveletName::Db3 => &[
                0.03522629188570953,
                -0.08544127388202666,
                -0.13501102001025458,
                0.45987750211849154,
                0.8068915093110925,
                0.33267055295008263,
            ],
            WaveletName::Db4 => &[
                -0.010597401785069032,
                0.0328830116668852,
                0.030841381835560764,
                -0.18703481171909309,
                -0.027983769416859854,
                0.6308807679298589,
                0.7148465705529157,
                0.2303778133088965,
            ],
        }
    }

    pub fn filter_len(self) -> usize {
        self.dec_lo().len()
    }

    pub fn filters(self) -> FilterBank {
        FilterBank::new(self.dec_lo())
    }
}

impl std::str::FromStr for WaveletName {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "haar" | "db1" => Ok(WaveletName::Haar),
            "db2" => Ok(WaveletName::Db2),
            "db3" => Ok(WaveletName::Db3),
            "db4" => Ok(WaveletName::Db4),
            other => Err(format!("unknown wavelet {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PaddingMode {
    /// Half-sample symmetric extension: `x[-1] = x[0]`, `x[N] = x[N-1]`.
    Symmetric,
    Zero,
    /// Circular extension with `ceil(N / 2)` outputs.
    Periodization,
}

impl PaddingMode {
    pub fn as_str(self) -> &'static str {
        match self {
            PaddingMode::Symmetric => "symmetric",
            PaddingMode::Zero => "zero",
            PaddingMode::Periodization => "periodization",
        }
    }
}

impl std::str::FromStr for PaddingMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "symmetric" => Ok(PaddingMode::Symmetric),
            "zero" => Ok(PaddingMode::Zero),
            "periodization" => Ok(PaddingMode::Periodization),
            other => Err(format!("unknown padding mode {other:?}")),
        }
    }
}

/// Analysis and synthesis filters of an orthogonal wavelet.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterBank {
    pub dec_lo: Vec<f64>,
    pub dec_hi: Vec<f64>,
    pub rec_lo: Vec<f64>,
    pub rec_hi: Vec<f64>,
}

impl FilterBank {
    pub fn new(dec_lo: &[f64]) -> Self {
        let f = dec_lo.len();
        let dec_hi: Vec<f64> = (0..f)
            .map(|k| if k % 2 == 0 { -dec_lo[f - 1 - k] } else { dec_lo[f - 1 - k] })
            .collect();
        let rec_lo = dec_lo.iter().rev().copied().collect();
        let rec_hi = dec_hi.iter().rev().copied().collect();
        FilterBank { dec_lo: dec_lo.to_vec(), dec_hi, rec_lo, rec_hi }
    }

    pub fn len(&self) -> usize {
        self.dec_lo.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dec_lo.is_empty()
    }
}

fn extended(x: &[f64], idx: isize, mode: PaddingMode) -> f64 {
    let n = x.len() as isize;
    if (0..n).contains(&idx) {
        return x[idx as usize];
    }
    match mode {
        PaddingMode::Zero => 0.0,
        PaddingMode::Symmetric => {
            let m = idx.rem_euclid(2 * n);
            if m < n {
                x[m as usize]
            } else {
                x[(2 * n - 1 - m) as usize]
            }
        }
        PaddingMode::Periodization => x[idx.rem_euclid(n) as usize],
    }
}

/// Number of coefficients per branch produced from `n` samples.
pub fn dwt_coeff_len(n: usize, filter_len: usize, mode: PaddingMode) -> usize {
    match mode {
        PaddingMode::Periodization => n.div_ceil(2),
        _ => (n + filter_len - 1) / 2,
    }
}

/// Deepest level at which every branch still spans at least one filter length.
pub fn dwt_max_level(n: usize, filter_len: usize) -> usize {
    if filter_len < 2 || n < filter_len - 1 {
        return 0;
    }
    ((n / (filter_len - 1)) as f64).log2().floor() as usize
}

/// Single-level analysis: `(approximation, detail)`.
pub fn dwt(x: &[f64], bank: &FilterBank, mode: PaddingMode) -> (Vec<f64>, Vec<f64>) {
    let f = bank.len() as isize;
    let padded;
    let x = if mode == PaddingMode::Periodization && x.len() % 2 == 1 {
        padded = x.iter().copied().chain(std::iter::once(x[x.len() - 1])).collect::<Vec<_>>();
        &padded[..]
    } else {
        x
    };
    let out_len = dwt_coeff_len(x.len(), bank.len(), mode);
    let mut approx = Vec::with_capacity(out_len);
    let mut detail = Vec::with_capacity(out_len);
    // circular mode centres the filter on each output
    let shift = if mode == PaddingMode::Periodization { f / 2 } else { 1 };
    for o in 0..out_len as isize {
        let i = 2 * o + shift;
        let (mut lo, mut hi) = (0.0, 0.0);
        for j in 0..f {
            let v = extended(x, i - j, mode);
            lo += bank.dec_lo[j as usize] * v;
            hi += bank.dec_hi[j as usize] * v;
        }
        approx.push(lo);
        detail.push(hi);
    }
    (approx, detail)
}

/// Single-level synthesis, trimmed to `out_len` samples.
pub fn idwt(approx: &[f64], detail: &[f64], bank: &FilterBank, mode: PaddingMode, out_len: usize) -> Vec<f64> {
    assert_eq!(approx.len(), detail.len(), "branch lengths differ");
    let f = bank.len();
    let l = approx.len();
    match mode {
        PaddingMode::Periodization => {
            // adjoint of the circular analysis operator
            let n = 2 * l;
            let shift = (f / 2) as isize;
            let mut x = vec![0.0; n];
            for o in 0..l {
                for j in 0..f {
                    let t = (2 * o as isize + shift - j as isize).rem_euclid(n as isize) as usize;
                    x[t] += approx[o] * bank.dec_lo[j] + detail[o] * bank.dec_hi[j];
                }
            }
            x.truncate(out_len);
            x
        }
        _ => {
            let full = (2 * l + 2).saturating_sub(f);
            let mut x = vec![0.0; full];
            for (n, slot) in x.iter_mut().enumerate() {
                let mut acc = 0.0;
                for k in 0..l {
                    let idx = n as isize + f as isize - 2 - 2 * k as isize;
                    if (0..f as isize).contains(&idx) {
                        let idx = idx as usize;
                        acc += approx[k] * bank.rec_lo[idx] + detail[k] * bank.rec_hi[idx];
                    }
                }
                *slot = acc;
            }
            x.truncate(out_len);
            x
        }
    }
}

/// Multilevel decomposition.
#[derive(Debug, Clone, PartialEq)]
pub struct WaveletTree {
    pub wavelet: WaveletName,
    pub padding: PaddingMode,
    /// Approximation at the deepest level.
    pub approximation: Vec<f64>,
    /// `details[l - 1]` holds the level-`l` detail coefficients.
    pub details: Vec<Vec<f64>>,
    /// `input_lengths[l - 1]` is the length of the sequence split at level `l`.
    pub input_lengths: Vec<usize>,
}

impl WaveletTree {
    pub fn levels(&self) -> usize {
        self.details.len()
    }

    pub fn detail(&self, level: usize) -> &[f64] {
        &self.details[level - 1]
    }
}

pub fn wavedec(x: &[f64], wavelet: WaveletName, padding: PaddingMode, levels: usize) -> WaveletTree {
    let bank = wavelet.filters();
    let mut approx = x.to_vec();
    let mut details = Vec::with_capacity(levels);
    let mut input_lengths = Vec::with_capacity(levels);
    for _ in 0..levels {
        input_lengths.push(approx.len());
        let (a, d) = dwt(&approx, &bank, padding);
        details.push(d);
        approx = a;
    }
    WaveletTree { wavelet, padding, approximation: approx, details, input_lengths }
}

pub fn waverec(tree: &WaveletTree) -> Vec<f64> {
    let bank = tree.wavelet.filters();
    let mut approx = tree.approximation.clone();
    for level in (1..=tree.levels()).rev() {
        approx = idwt(&approx, tree.detail(level), &bank, tree.padding, tree.input_lengths[level - 1]);
    }
    approx
}

/// Terminal subbands of a full packet tree, in frequency order.
///
/// Band `b` follows the path given by the Gray code of `b`, read from the
/// most significant bit (0 = low-pass, 1 = high-pass); high-pass decimation
/// mirrors the spectrum, so natural path order is not frequency order.
pub fn wpd(x: &[f64], wavelet: WaveletName, padding: PaddingMode, level: usize) -> Vec<Vec<f64>> {
    let bank = wavelet.filters();
    // natural order: index bits are the path, MSB first
    let mut nodes = vec![x.to_vec()];
    for _ in 0..level {
        let mut next = Vec::with_capacity(nodes.len() * 2);
        for node in &nodes {
            let (a, d) = dwt(node, &bank, padding);
            next.push(a);
            next.push(d);
        }
        nodes = next;
    }
    (0..nodes.len()).map(|b| nodes[b ^ (b >> 1)].clone()).collect()
}

/// `[c_max, singular_value, c_energy]` of one coefficient set.
///
/// `c_max` is the largest `log10(x)` over strictly positive `x`;
/// `singular_value` is the Euclidean norm; `c_energy` is
/// `log10(norm / |C|)`. Logs are clamped below at `floor`, which also
/// stands in when there is nothing positive to take the log of.
pub fn coefficient_stats(coeffs: &[f64], floor: f64) -> [f64; 3] {
    let max_positive = coeffs.iter().copied().filter(|&c| c > 0.0).fold(f64::NAN, f64::max);
    let c_max = if max_positive.is_nan() { floor } else { log10_or_floor(max_positive, floor) };
    let norm = coeffs.iter().map(|c| c * c).sum::<f64>().sqrt();
    let c_energy = if coeffs.is_empty() { floor } else { log10_or_floor(norm / coeffs.len() as f64, floor) };
    [c_max, norm, c_energy]
}

pub const DWT_LEVELS: usize = 5;
pub const WPD_LEVEL: usize = 3;

/// Minimum length for a `levels`-deep decomposition with this wavelet.
pub fn min_length(wavelet: WaveletName, levels: usize) -> usize {
    (1usize << levels) * (wavelet.filter_len() - 1).max(1)
}

/// Fifteen values: `coefficient_stats` of the level-5 approximation and the
/// level 5, 4, 3 and 2 details, in that order.
pub fn dwt_features(signal: &[f64], config: &FeatureConfig) -> Result<[f64; 15], FeatureError> {
    check_signal(signal, min_length(config.wavelet, DWT_LEVELS))?;
    let tree = wavedec(signal, config.wavelet, config.padding, DWT_LEVELS);
    let sets = [&tree.approximation[..], tree.detail(5), tree.detail(4), tree.detail(3), tree.detail(2)];
    let mut out = [0.0; 15];
    for (k, set) in sets.iter().enumerate() {
        out[3 * k..3 * k + 3].copy_from_slice(&coefficient_stats(set, config.log_floor));
    }
    Ok(out)
}

/// Eight values: `log10(norm / len)` of each level-3 packet subband, in
/// frequency order.
pub fn wpd_features(signal: &[f64], config: &FeatureConfig) -> Result<[f64; 8], FeatureError> {
    check_signal(signal, min_length(config.wavelet, WPD_LEVEL))?;
    let bands = wpd(signal, config.wavelet, config.padding, WPD_LEVEL);
    let mut out = [0.0; 8];
    for (slot, band) in out.iter_mut().zip(&bands) {
        *slot = coefficient_stats(band, config.log_floor)[2];
    }
    Ok(out)
}
