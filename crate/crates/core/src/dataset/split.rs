use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{DatasetError, Label};

/// One of the three dataset parts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Part {
    Train,
    Validation,
    Test,
}

impl Part {
    pub const ALL: [Part; 3] = [Part::Train, Part::Validation, Part::Test];

    pub fn name(self) -> &'static str {
        match self {
            Part::Train => "train",
            Part::Validation => "validation",
            Part::Test => "test",
        }
    }
}

impl std::str::FromStr for Part {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(Part::Train),
            "validation" | "val" => Ok(Part::Validation),
            "test" => Ok(Part::Test),
            other => Err(format!("unknown dataset part {other:?}")),
        }
    }
}

/// Subject-exclusive train / validation / test partition.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub seed: u64,
    pub train: Vec<String>,
    pub validation: Vec<String>,
    pub test: Vec<String>,
}

impl DatasetSplit {
    pub fn part(&self, part: Part) -> &[String] {
        match part {
            Part::Train => &self.train,
            Part::Validation => &self.validation,
            Part::Test => &self.test,
        }
    }

    pub fn sizes(&self) -> (usize, usize, usize) {
        (self.train.len(), self.validation.len(), self.test.len())
    }

    pub fn part_of(&self, subject_id: &str) -> Option<Part> {
        Part::ALL.into_iter().find(|&p| self.part(p).iter().any(|s| s == subject_id))
    }
}

/// Split subjects 3:1:1, stratified by label.
///
/// Validation and test each receive `round(N / 5)` subjects; the rounding
/// residue stays in train. Within a part, classes are allotted by largest
/// remainder, and a class with at least three subjects always gets one slot in
/// validation and test when the other class can spare it.
pub fn split_subjects(subjects: &[(String, Label)], seed: u64) -> Result<DatasetSplit, DatasetError> {
    if subjects.len() < 5 {
        return Err(DatasetError::InsufficientSubjects(subjects.len()));
    }
    let mut seen = BTreeSet::new();
    for (id, _) in subjects {
        if !seen.insert(id.as_str()) {
            return Err(DatasetError::DuplicateSubject(id.clone()));
        }
    }

    let total = subjects.len();
    let held_out = ((total as f64) / 5.0).round() as usize;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut classes: Vec<Vec<String>> = [Label::Healthy, Label::Patient]
        .into_iter()
        .map(|label| {
            let mut ids: Vec<String> =
                subjects.iter().filter(|(_, l)| *l == label).map(|(id, _)| id.clone()).collect();
            ids.sort();
            ids.shuffle(&mut rng);
            ids
        })
        .collect();

    let quotas = allot(&classes.iter().map(Vec::len).collect::<Vec<_>>(), held_out);

    let mut split = DatasetSplit { seed, train: Vec::new(), validation: Vec::new(), test: Vec::new() };
    for (ids, &quota) in classes.iter_mut().zip(&quotas) {
        let rest = ids.split_off(quota.min(ids.len()));
        split.validation.extend(ids.drain(..));
        let mut rest = rest;
        let rest_train = rest.split_off(quota.min(rest.len()));
        split.test.extend(rest);
        split.train.extend(rest_train);
    }
    split.train.sort();
    split.validation.sort();
    split.test.sort();
    Ok(split)
}

/// Distribute `target` slots over classes of the given sizes.
fn allot(sizes: &[usize], target: usize) -> Vec<usize> {
    let total: usize = sizes.iter().sum();
    let exact: Vec<f64> = sizes.iter().map(|&n| n as f64 * target as f64 / total as f64).collect();
    let mut quotas: Vec<usize> = exact.iter().map(|q| q.floor() as usize).collect();
    let mut left = target - quotas.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..sizes.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = exact[a] - exact[a].floor();
        let fb = exact[b] - exact[b].floor();
        fb.partial_cmp(&fa).unwrap().then(a.cmp(&b))
    });
    for &c in order.iter().cycle() {
        if left == 0 {
            break;
        }
        quotas[c] += 1;
        left -= 1;
    }
    for c in 0..sizes.len() {
        if quotas[c] == 0 && sizes[c] >= 3 {
            if let Some(donor) = (0..sizes.len()).find(|&d| d != c && quotas[d] >= 2) {
                quotas[donor] -= 1;
                quotas[c] += 1;
            }
        }
    }
    quotas
}
