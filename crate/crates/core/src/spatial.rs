//! Spatial layout of feature families, imputation, standardisation and label
//! encoding.
//!
//! Each family becomes a 6 x 7 x depth grid whose rows are reordered so that
//! anatomically neighbouring muscles sit next to each other:
//! left sternocleidomastoid, right sternocleidomastoid, left and right
//! cervical erector spinae, left and right upper trapezius.

use serde::{Deserialize, Serialize};

use crate::dataset::{Label, MOVEMENTS, MUSCLES};
use crate::features::{family_offsets, FeatureSample, FAMILIES, FAMILY_DEPTHS, SAMPLE_VALUES};

/// `ROW_ORDER[r]` is the source muscle shown in grid row `r`.
pub const ROW_ORDER: [usize; MUSCLES] = [0, 5, 2, 3, 1, 4];

const CELLS: usize = MUSCLES * MOVEMENTS;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SpatialError {
    #[error("need at least 2 training samples to fit a scaler, got {0}")]
    TooFewSamples(usize),
    #[error("scaler expects {expected} features, sample has {found}")]
    Width { expected: usize, found: usize },
}

/// One family laid out as a 6 x 7 x depth tensor in grid row order.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureGrid {
    pub family: usize,
    pub depth: usize,
    /// `values[(row * 7 + movement) * depth + k]`.
    pub values: Vec<f64>,
}

impl FeatureGrid {
    pub fn get(&self, row: usize, movement: usize, k: usize) -> f64 {
        self.values[(row * MOVEMENTS + movement) * self.depth + k]
    }
}

fn permute_family(family: usize, source: &[f64]) -> FeatureGrid {
    let depth = FAMILY_DEPTHS[family];
    let mut values = Vec::with_capacity(CELLS * depth);
    for &muscle in &ROW_ORDER {
        let start = muscle * MOVEMENTS * depth;
        values.extend_from_slice(&source[start..start + MOVEMENTS * depth]);
    }
    FeatureGrid { family, depth, values }
}

/// Reorder each family into grid row order. Missing cells stay NaN.
pub fn build_grids(fs: &FeatureSample) -> [FeatureGrid; FAMILIES] {
    std::array::from_fn(|f| permute_family(f, &fs.families[f]))
}

/// Undo [`build_grids`] for one family, returning source-order values.
pub fn unpermute_grid(grid: &FeatureGrid) -> Vec<f64> {
    let d = grid.depth;
    let mut out = vec![0.0; CELLS * d];
    for (row, &muscle) in ROW_ORDER.iter().enumerate() {
        let src = &grid.values[row * MOVEMENTS * d..(row + 1) * MOVEMENTS * d];
        out[muscle * MOVEMENTS * d..(muscle + 1) * MOVEMENTS * d].copy_from_slice(src);
    }
    out
}

/// Per-feature standardisation statistics fitted on training samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalerStats {
    pub mean: Vec<f64>,
    /// Population standard deviation over present values.
    pub std: Vec<f64>,
    /// Constant features: centred but not divided.
    pub zero_std: Vec<bool>,
    /// Features never observed in training: imputed and centred at 0.
    pub all_missing: Vec<bool>,
}

impl ScalerStats {
    pub fn width(&self) -> usize {
        self.mean.len()
    }

    /// Imputation value of feature `i` (its training mean).
    pub fn imputation(&self, i: usize) -> f64 {
        self.mean[i]
    }

    pub fn flagged(&self) -> usize {
        self.zero_std.iter().zip(&self.all_missing).filter(|(a, b)| **a || **b).count()
    }
}

/// Fit per-feature mean and standard deviation, skipping masked values.
pub fn fit_scaler(train: &[FeatureSample]) -> Result<ScalerStats, SpatialError> {
    if train.len() < 2 {
        return Err(SpatialError::TooFewSamples(train.len()));
    }
    let width = SAMPLE_VALUES;
    let mut sum = vec![0.0; width];
    let mut count = vec![0usize; width];
    let rows: Vec<(Vec<f64>, Vec<bool>)> = train.iter().map(|s| (s.flat(), s.flat_missing())).collect();
    for (values, missing) in &rows {
        for i in 0..width {
            if !missing[i] {
                sum[i] += values[i];
                count[i] += 1;
            }
        }
    }
    let mean: Vec<f64> = (0..width).map(|i| if count[i] > 0 { sum[i] / count[i] as f64 } else { 0.0 }).collect();
    let mut sq = vec![0.0; width];
    for (values, missing) in &rows {
        for i in 0..width {
            if !missing[i] {
                sq[i] += (values[i] - mean[i]).powi(2);
            }
        }
    }
    let std: Vec<f64> = (0..width).map(|i| if count[i] > 0 { (sq[i] / count[i] as f64).sqrt() } else { 0.0 }).collect();
    let all_missing: Vec<bool> = count.iter().map(|&c| c == 0).collect();
    let zero_std: Vec<bool> = (0..width)
        .map(|i| count[i] > 0 && std[i] <= 8.0 * f64::EPSILON * mean[i].abs())
        .collect();
    let flagged = all_missing.iter().filter(|&&b| b).count();
    if flagged > 0 {
        log::warn!("{flagged} features missing in every training sample; imputed as 0");
    }
    Ok(ScalerStats { mean, std, zero_std, all_missing })
}

/// Impute masked values with the training mean, then standardise.
pub fn scale_flat(fs: &FeatureSample, stats: &ScalerStats) -> Result<Vec<f64>, SpatialError> {
    if stats.width() != SAMPLE_VALUES {
        return Err(SpatialError::Width { expected: stats.width(), found: SAMPLE_VALUES });
    }
    let values = fs.flat();
    let missing = fs.flat_missing();
    Ok((0..SAMPLE_VALUES)
        .map(|i| {
            let x = if missing[i] || !values[i].is_finite() { stats.mean[i] } else { values[i] };
            if stats.all_missing[i] {
                0.0
            } else if stats.zero_std[i] {
                x - stats.mean[i]
            } else {
                (x - stats.mean[i]) / stats.std[i]
            }
        })
        .collect())
}

/// Imputed and standardised grids for one sample.
pub fn apply_scaler(fs: &FeatureSample, stats: &ScalerStats) -> Result<[FeatureGrid; FAMILIES], SpatialError> {
    let flat = scale_flat(fs, stats)?;
    let offsets = family_offsets();
    Ok(std::array::from_fn(|f| {
        let len = CELLS * FAMILY_DEPTHS[f];
        permute_family(f, &flat[offsets[f]..offsets[f] + len])
    }))
}

/// One-hot label: healthy (1, 0), patient (0, 1).
pub fn encode_label(label: Label) -> [f64; 2] {
    match label {
        Label::Healthy => [1.0, 0.0],
        Label::Patient => [0.0, 1.0],
    }
}

/// A batch-friendly collection of scaled grids: per family, samples are
/// stored back to back as `n x 6 x 7 x depth`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct GridSet {
    pub families: [Vec<f64>; FAMILIES],
    pub labels: Vec<Label>,
    pub subject_ids: Vec<String>,
}

impl GridSet {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn push(&mut self, grids: &[FeatureGrid; FAMILIES], label: Label, subject_id: impl Into<String>) {
        for f in 0..FAMILIES {
            assert_eq!(grids[f].values.len(), CELLS * FAMILY_DEPTHS[f]);
            self.families[f].extend_from_slice(&grids[f].values);
        }
        self.labels.push(label);
        self.subject_ids.push(subject_id.into());
    }

    /// Scale every sample with `stats` and collect.
    pub fn from_samples(samples: &[FeatureSample], stats: &ScalerStats) -> Result<Self, SpatialError> {
        let mut set = GridSet::default();
        for s in samples {
            set.push(&apply_scaler(s, stats)?, s.label, s.subject_id.clone());
        }
        Ok(set)
    }

    /// Grid values of sample `i` for `family`.
    pub fn sample(&self, family: usize, i: usize) -> &[f64] {
        let len = CELLS * FAMILY_DEPTHS[family];
        &self.families[family][i * len..(i + 1) * len]
    }

    /// New set holding the given samples in the given order.
    pub fn select(&self, indices: &[usize]) -> GridSet {
        let mut out = GridSet::default();
        for f in 0..FAMILIES {
            let len = CELLS * FAMILY_DEPTHS[f];
            out.families[f].reserve(indices.len() * len);
            for &i in indices {
                out.families[f].extend_from_slice(self.sample(f, i));
            }
        }
        out.labels = indices.iter().map(|&i| self.labels[i]).collect();
        out.subject_ids = indices.iter().map(|&i| self.subject_ids[i].clone()).collect();
        out
    }

    pub fn encoded_labels(&self) -> Vec<[f64; 2]> {
        self.labels.iter().map(|&l| encode_label(l)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tagged_sample(seed: f64) -> FeatureSample {
        let families = std::array::from_fn(|f| {
            (0..CELLS * FAMILY_DEPTHS[f]).map(|i| seed + (f * 10_000 + i) as f64).collect()
        });
        FeatureSample {
            subject_id: "s".into(),
            label: Label::Healthy,
            trial_choice: [0; 7],
            families,
            missing: [[false; CELLS]; FAMILIES],
        }
    }

    #[test]
    fn right_sternocleidomastoid_is_row_one() {
        let fs = tagged_sample(0.0);
        let grids = build_grids(&fs);
        for f in 0..FAMILIES {
            for a in 0..MOVEMENTS {
                for k in 0..FAMILY_DEPTHS[f] {
                    assert_eq!(grids[f].get(1, a, k), fs.value(f, 5, a, k));
                    assert_eq!(grids[f].get(4, a, k), fs.value(f, 1, a, k));
                }
            }
        }
    }

    #[test]
    fn permutation_round_trip() {
        let fs = tagged_sample(0.5);
        for (f, g) in build_grids(&fs).iter().enumerate() {
            assert_eq!(unpermute_grid(g), fs.families[f]);
        }
    }

    #[test]
    fn grid_is_a_bijection() {
        let fs = tagged_sample(0.0);
        for (f, g) in build_grids(&fs).iter().enumerate() {
            let mut a = g.values.clone();
            let mut b = fs.families[f].clone();
            a.sort_by(f64::total_cmp);
            b.sort_by(f64::total_cmp);
            assert_eq!(a, b);
            let distinct: std::collections::HashSet<u64> = g.values.iter().map(|v| v.to_bits()).collect();
            assert_eq!(distinct.len(), g.values.len());
        }
    }

    fn with_column(values: &[Option<f64>]) -> Vec<FeatureSample> {
        // drives feature 0 (time family, cell 0, mean) through `values`
        values
            .iter()
            .enumerate()
            .map(|(i, v)| {
                let mut s = tagged_sample(i as f64);
                match v {
                    Some(x) => s.families[0][0] = *x,
                    None => {
                        s.missing[0][0] = true;
                        for k in 0..11 {
                            s.families[0][k] = f64::NAN;
                        }
                    }
                }
                s
            })
            .collect()
    }

    #[test]
    fn two_point_column() {
        let stats = fit_scaler(&with_column(&[Some(1.0), Some(3.0)])).unwrap();
        assert_eq!(stats.mean[0], 2.0);
        assert_eq!(stats.std[0], 1.0);
        assert!(!stats.zero_std[0]);
    }

    #[test]
    fn constant_column_is_flagged() {
        let samples = vec![tagged_sample(0.0), tagged_sample(0.0), tagged_sample(0.0)];
        let stats = fit_scaler(&samples).unwrap();
        assert!(stats.zero_std.iter().all(|&z| z));
        let grids = apply_scaler(&samples[0], &stats).unwrap();
        assert!(grids.iter().all(|g| g.values.iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn masked_values_excluded() {
        let stats = fit_scaler(&with_column(&[Some(1.0), None, Some(3.0)])).unwrap();
        assert_eq!(stats.mean[0], 2.0);
    }

    #[test]
    fn all_missing_feature() {
        let stats = fit_scaler(&with_column(&[None, None])).unwrap();
        assert!(stats.all_missing[0]);
        assert_eq!(stats.imputation(0), 0.0);
    }

    #[test]
    fn too_few() {
        assert_eq!(fit_scaler(&[tagged_sample(0.0)]), Err(SpatialError::TooFewSamples(1)));
    }

    #[test]
    fn training_data_is_standardised() {
        let samples: Vec<_> = (0..7).map(|i| {
            let mut s = tagged_sample(0.0);
            for f in 0..FAMILIES {
                for (j, v) in s.families[f].iter_mut().enumerate() {
                    *v = ((i * 31 + j * 17) % 23) as f64 * (1.0 + j as f64 * 0.01);
                }
            }
            s
        }).collect();
        let stats = fit_scaler(&samples).unwrap();
        let scaled: Vec<Vec<f64>> = samples.iter().map(|s| scale_flat(s, &stats).unwrap()).collect();
        for i in 0..SAMPLE_VALUES {
            if stats.zero_std[i] {
                continue;
            }
            let col: Vec<f64> = scaled.iter().map(|r| r[i]).collect();
            let m = col.iter().sum::<f64>() / 7.0;
            let sd = (col.iter().map(|v| (v - m).powi(2)).sum::<f64>() / 7.0).sqrt();
            assert!(m.abs() < 1e-6);
            assert!((sd - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn fully_masked_sample_is_zero() {
        let samples = with_column(&[Some(1.0), Some(2.0), Some(4.0)]);
        let stats = fit_scaler(&samples).unwrap();
        let mut blank = tagged_sample(9.0);
        blank.missing = [[true; CELLS]; FAMILIES];
        for f in blank.families.iter_mut() {
            f.iter_mut().for_each(|v| *v = f64::NAN);
        }
        let grids = apply_scaler(&blank, &stats).unwrap();
        assert!(grids.iter().all(|g| g.values.iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn one_masked_cell_is_local() {
        let samples = with_column(&[Some(1.0), Some(2.0), Some(4.0)]);
        let stats = fit_scaler(&samples).unwrap();
        let full = scale_flat(&samples[1], &stats).unwrap();
        let mut masked = samples[1].clone();
        masked.missing[0][0] = true;
        let part = scale_flat(&masked, &stats).unwrap();
        for k in 0..11 {
            assert_eq!(part[k], 0.0);
        }
        assert_eq!(&full[11..], &part[11..]);
    }

    #[test]
    fn one_hot() {
        assert_eq!(encode_label(Label::Healthy), [1.0, 0.0]);
        assert_eq!(encode_label(Label::Patient), [0.0, 1.0]);
    }

    #[test]
    fn gridset_select() {
        let stats = fit_scaler(&with_column(&[Some(1.0), Some(2.0), Some(4.0)])).unwrap();
        let samples = with_column(&[Some(1.0), Some(2.0), Some(4.0)]);
        let set = GridSet::from_samples(&samples, &stats).unwrap();
        assert_eq!(set.len(), 3);
        let sub = set.select(&[2, 0]);
        assert_eq!(sub.sample(3, 0), set.sample(3, 2));
        assert_eq!(sub.sample(0, 1), set.sample(0, 0));
    }
}
