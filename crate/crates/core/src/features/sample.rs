use std::collections::HashMap;
use std::sync::Arc;

use rayon::prelude::*;

use super::{
    ar_features, dft_spectrum, dwt_features, entropy_feature, freq_features, time_features, wpd_features,
    FeatureConfig, FeatureError, FAMILIES, FAMILY_DEPTHS, SAMPLE_VALUES,
};
use crate::dataset::{Label, SampleGrid, SubjectBundle, MOVEMENTS, MUSCLES, TRIALS};

const CELLS: usize = MUSCLES * MOVEMENTS;

/// Features of one signal; `None` where that family's extractor failed.
#[derive(Debug, Clone, PartialEq)]
pub struct CellFeatures {
    pub families: [Option<Vec<f64>>; FAMILIES],
}

impl CellFeatures {
    pub fn is_complete(&self) -> bool {
        self.families.iter().all(Option::is_some)
    }
}

/// Run all six extractors on one signal. A failing extractor leaves its
/// family empty instead of failing the cell.
pub fn extract_cell(signal: &[f64], config: &FeatureConfig) -> CellFeatures {
    fn keep<const N: usize>(family: &str, r: Result<[f64; N], FeatureError>) -> Option<Vec<f64>> {
        match r {
            Ok(v) => Some(v.to_vec()),
            Err(e) => {
                log::debug!("{family} features missing: {e}");
                None
            }
        }
    }
    let freq = dft_spectrum(signal).map(|s| freq_features(&s, config.sample_rate).values);
    CellFeatures {
        families: [
            keep("time", time_features(signal, config)),
            keep("freq", freq),
            keep("dwt", dwt_features(signal, config)),
            keep("wpd", wpd_features(signal, config)),
            keep("ar", ar_features(signal)),
            keep("entropy", entropy_feature(signal, config).map(|h| [h])),
        ],
    }
}

/// Six feature tensors of shape 6 x 7 x depth for one sample, rows in source
/// muscle order, plus a per-family missing-cell mask.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSample {
    pub subject_id: String,
    pub label: Label,
    pub trial_choice: [usize; MOVEMENTS],
    /// `families[f][(muscle * 7 + movement) * depth + k]`; missing cells hold NaN.
    pub families: [Vec<f64>; FAMILIES],
    /// `missing[f][muscle * 7 + movement]`.
    pub missing: [[bool; CELLS]; FAMILIES],
}

impl FeatureSample {
    pub fn from_cells(
        subject_id: impl Into<String>,
        label: Label,
        trial_choice: [usize; MOVEMENTS],
        cells: &[&CellFeatures],
    ) -> Result<Self, FeatureError> {
        assert_eq!(cells.len(), CELLS);
        let mut families: [Vec<f64>; FAMILIES] = Default::default();
        let mut missing = [[false; CELLS]; FAMILIES];
        for f in 0..FAMILIES {
            let depth = FAMILY_DEPTHS[f];
            let mut values = Vec::with_capacity(CELLS * depth);
            for (c, cell) in cells.iter().enumerate() {
                match &cell.families[f] {
                    Some(v) => values.extend_from_slice(v),
                    None => {
                        missing[f][c] = true;
                        values.extend(std::iter::repeat(f64::NAN).take(depth));
                    }
                }
            }
            families[f] = values;
        }
        let sample = FeatureSample { subject_id: subject_id.into(), label, trial_choice, families, missing };
        let missing_cells = sample.missing_cells();
        if missing_cells * 2 > CELLS {
            return Err(FeatureError::UnusableSample { missing: missing_cells });
        }
        Ok(sample)
    }

    /// Cells with at least one missing family.
    pub fn missing_cells(&self) -> usize {
        (0..CELLS).filter(|&c| (0..FAMILIES).any(|f| self.missing[f][c])).count()
    }

    pub fn value(&self, family: usize, muscle: usize, movement: usize, k: usize) -> f64 {
        self.families[family][(muscle * MOVEMENTS + movement) * FAMILY_DEPTHS[family] + k]
    }

    pub fn is_missing(&self, family: usize, muscle: usize, movement: usize) -> bool {
        self.missing[family][muscle * MOVEMENTS + movement]
    }

    /// All 2646 values, family-major.
    pub fn flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(SAMPLE_VALUES);
        for f in &self.families {
            out.extend_from_slice(f);
        }
        out
    }

    /// Per-value missing flags aligned with [`FeatureSample::flat`].
    pub fn flat_missing(&self) -> Vec<bool> {
        let mut out = Vec::with_capacity(SAMPLE_VALUES);
        for f in 0..FAMILIES {
            for c in 0..CELLS {
                out.extend(std::iter::repeat(self.missing[f][c]).take(FAMILY_DEPTHS[f]));
            }
        }
        out
    }
}

/// Offset of each family inside the flat 2646-value layout.
pub fn family_offsets() -> [usize; FAMILIES] {
    let mut out = [0; FAMILIES];
    for f in 1..FAMILIES {
        out[f] = out[f - 1] + CELLS * FAMILY_DEPTHS[f - 1];
    }
    out
}

/// Extract every cell of `grid` and assemble the sample.
pub fn extract_sample(grid: &SampleGrid, config: &FeatureConfig) -> Result<FeatureSample, FeatureError> {
    let cells: Vec<CellFeatures> = (0..CELLS)
        .into_par_iter()
        .map(|c| extract_cell(&grid.cell(c / MOVEMENTS, c % MOVEMENTS).samples, config))
        .collect();
    let refs: Vec<&CellFeatures> = cells.iter().collect();
    FeatureSample::from_cells(grid.subject_id(), grid.label(), grid.trial_choice(), &refs)
}

/// Per-recording features, so that the many grids drawn from one subject
/// share extraction work.
#[derive(Debug, Default)]
pub struct FeatureCache {
    cells: HashMap<(String, usize, usize, usize), Arc<CellFeatures>>,
}

impl FeatureCache {
    pub fn build(bundles: &[SubjectBundle], config: &FeatureConfig) -> Self {
        let jobs: Vec<_> = bundles.iter().flat_map(|b| b.recordings().cloned()).collect();
        let cells = jobs
            .par_iter()
            .map(|rec| {
                let key = (rec.subject_id.clone(), rec.muscle, rec.movement, rec.trial);
                (key, Arc::new(extract_cell(&rec.samples, config)))
            })
            .collect();
        FeatureCache { cells }
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn get(&self, subject: &str, muscle: usize, movement: usize, trial: usize) -> Option<&CellFeatures> {
        debug_assert!(trial < TRIALS);
        self.cells.get(&(subject.to_string(), muscle, movement, trial)).map(|a| a.as_ref())
    }

    /// Assemble a sample from cached cells. Panics if a cell was not cached.
    pub fn sample(&self, grid: &SampleGrid) -> Result<FeatureSample, FeatureError> {
        let choice = grid.trial_choice();
        let refs: Vec<&CellFeatures> = (0..CELLS)
            .map(|c| {
                let (m, a) = (c / MOVEMENTS, c % MOVEMENTS);
                self.get(grid.subject_id(), m, a, choice[a]).expect("recording missing from feature cache")
            })
            .collect();
        FeatureSample::from_cells(grid.subject_id(), grid.label(), choice, &refs)
    }
}
