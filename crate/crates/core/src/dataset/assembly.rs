use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{DatasetError, Label, Recording, SubjectBundle, MOVEMENTS, MUSCLES};

/// How many grids to draw from a subject.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AssemblyMode {
    /// Every combination of one complete trial per movement.
    Exhaustive,
    /// `count` grids, each with an independent uniform trial per movement.
    Random { count: usize, seed: u64 },
}

/// A 6 x 7 grid of signals (row = muscle, column = movement) for one sample.
///
/// Cells share the subject's recordings; nothing is copied.
#[derive(Debug, Clone)]
pub struct SampleGrid {
    subject_id: String,
    label: Label,
    trial_choice: [usize; MOVEMENTS],
    cells: Vec<Arc<Recording>>,
}

impl SampleGrid {
    fn from_choice(bundle: &SubjectBundle, trial_choice: [usize; MOVEMENTS]) -> Self {
        let mut cells = Vec::with_capacity(MUSCLES * MOVEMENTS);
        for muscle in 0..MUSCLES {
            for (movement, &trial) in trial_choice.iter().enumerate() {
                let rec = bundle
                    .get(muscle, movement, trial)
                    .expect("trial choice restricted to complete trials");
                cells.push(Arc::clone(rec));
            }
        }
        SampleGrid {
            subject_id: bundle.subject_id().to_string(),
            label: bundle.label(),
            trial_choice,
            cells,
        }
    }

    /// Build a grid directly from 42 row-major recordings.
    pub fn from_cells(
        subject_id: impl Into<String>,
        label: Label,
        trial_choice: [usize; MOVEMENTS],
        cells: Vec<Arc<Recording>>,
    ) -> Self {
        assert_eq!(cells.len(), MUSCLES * MOVEMENTS, "a grid has 42 cells");
        SampleGrid { subject_id: subject_id.into(), label, trial_choice, cells }
    }

    pub fn subject_id(&self) -> &str {
        &self.subject_id
    }

    pub fn label(&self) -> Label {
        self.label
    }

    pub fn trial_choice(&self) -> [usize; MOVEMENTS] {
        self.trial_choice
    }

    pub fn cell(&self, muscle: usize, movement: usize) -> &Recording {
        &self.cells[muscle * MOVEMENTS + movement]
    }

    #[cfg(test)]
    fn cell_arc(&self, muscle: usize, movement: usize) -> &Arc<Recording> {
        &self.cells[muscle * MOVEMENTS + movement]
    }
}

/// Assemble sample grids from one subject.
pub fn assemble_samples(bundle: &SubjectBundle, mode: AssemblyMode) -> Result<Vec<SampleGrid>, DatasetError> {
    let mut options: Vec<Vec<usize>> = Vec::with_capacity(MOVEMENTS);
    for movement in 0..MOVEMENTS {
        let trials = bundle.complete_trials(movement);
        if trials.is_empty() {
            return Err(DatasetError::IncompleteBundle {
                subject: bundle.subject_id().to_string(),
                movement,
            });
        }
        options.push(trials);
    }

    match mode {
        AssemblyMode::Exhaustive => {
            let total: usize = options.iter().map(Vec::len).product();
            let mut grids = Vec::with_capacity(total);
            // odometer over the per-movement option lists, last movement fastest
            let mut digits = [0usize; MOVEMENTS];
            loop {
                let mut choice = [0usize; MOVEMENTS];
                for j in 0..MOVEMENTS {
                    choice[j] = options[j][digits[j]];
                }
                grids.push(SampleGrid::from_choice(bundle, choice));
                let mut pos = MOVEMENTS;
                loop {
                    if pos == 0 {
                        return Ok(grids);
                    }
                    pos -= 1;
                    digits[pos] += 1;
                    if digits[pos] < options[pos].len() {
                        break;
                    }
                    digits[pos] = 0;
                }
            }
        }
        AssemblyMode::Random { count, seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let grids = (0..count)
                .map(|_| {
                    let mut choice = [0usize; MOVEMENTS];
                    for j in 0..MOVEMENTS {
                        choice[j] = options[j][rng.random_range(0..options[j].len())];
                    }
                    SampleGrid::from_choice(bundle, choice)
                })
                .collect();
            Ok(grids)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    fn bundle(trials: [usize; MOVEMENTS]) -> SubjectBundle {
        let mut recs = Vec::new();
        for m in 0..MUSCLES {
            for (a, &n) in trials.iter().enumerate() {
                for t in 0..n {
                    let tag = (m * 100 + a * 10 + t) as f64;
                    recs.push(Recording::new("s1", m, a, t, vec![tag, tag + 0.5]).unwrap());
                }
            }
        }
        SubjectBundle::new("s1", Label::Patient, recs).unwrap()
    }

    #[test]
    fn exhaustive_full_bundle() {
        let grids = assemble_samples(&bundle([3; 7]), AssemblyMode::Exhaustive).unwrap();
        assert_eq!(grids.len(), 2187);
        let distinct: HashSet<_> = grids.iter().map(|g| g.trial_choice()).collect();
        assert_eq!(distinct.len(), 2187);
    }

    #[test]
    fn exhaustive_single_trial() {
        let grids = assemble_samples(&bundle([1; 7]), AssemblyMode::Exhaustive).unwrap();
        assert_eq!(grids.len(), 1);
        assert_eq!(grids[0].trial_choice(), [0; 7]);
    }

    #[test]
    fn cells_come_from_chosen_trial() {
        let grids = assemble_samples(&bundle([3, 2, 3, 1, 3, 2, 3]), AssemblyMode::Exhaustive).unwrap();
        for g in &grids {
            for m in 0..MUSCLES {
                for a in 0..MOVEMENTS {
                    assert_eq!(g.cell(m, a).key(), (m, a, g.trial_choice()[a]));
                }
            }
        }
    }

    #[test]
    fn random_mode_is_seeded() {
        let b = bundle([3; 7]);
        let a = assemble_samples(&b, AssemblyMode::Random { count: 50, seed: 9 }).unwrap();
        let c = assemble_samples(&b, AssemblyMode::Random { count: 50, seed: 9 }).unwrap();
        assert_eq!(a.len(), 50);
        let ta: Vec<_> = a.iter().map(|g| g.trial_choice()).collect();
        let tc: Vec<_> = c.iter().map(|g| g.trial_choice()).collect();
        assert_eq!(ta, tc);
        // 50 draws out of 2187 combinations should not all coincide
        assert!(ta.iter().collect::<HashSet<_>>().len() > 40);
    }

    #[test]
    fn missing_movement_is_incomplete() {
        let b = bundle([3, 3, 3, 0, 3, 3, 3]);
        let err = assemble_samples(&b, AssemblyMode::Exhaustive).unwrap_err();
        assert!(matches!(err, DatasetError::IncompleteBundle { movement: 3, .. }));
    }

    #[test]
    fn grids_share_recordings() {
        let b = bundle([1; 7]);
        let grids = assemble_samples(&b, AssemblyMode::Random { count: 2, seed: 0 }).unwrap();
        assert!(Arc::ptr_eq(grids[0].cell_arc(2, 3), b.get(2, 3, 0).unwrap()));
        assert!(Arc::ptr_eq(grids[0].cell_arc(2, 3), grids[1].cell_arc(2, 3)));
    }
}
