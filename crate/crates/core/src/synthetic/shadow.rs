use rand::RngCore;
use rayon::prelude::*;

use crate::datastore::LabelSet;
use crate::error::{Error, Result};
use crate::lira::{logit_gap, make_splits, ShadowEntry, ShadowSuite, DEFAULT_SHADOWS};
use crate::matrix::Matrix;
use crate::rng::{stream, Purpose};

use super::classifier::{train_classifier, TrainConfig, TrainRun};

#[derive(Debug, Clone, PartialEq)]
pub struct ShadowConfig {
    pub shadows: usize,
    pub base_seed: u64,
    pub target_split: u32,
    pub train: TrainConfig,
}

impl Default for ShadowConfig {
    fn default() -> Self {
        Self {
            shadows: DEFAULT_SHADOWS,
            base_seed: 0,
            target_split: 0,
            train: TrainConfig::default(),
        }
    }
}

/// Initialization and shuffling seed of the model trained on split `split_id`.
pub fn shadow_train_seed(base_seed: u64, split_id: u32) -> u64 {
    stream(base_seed, Purpose::Init, (1 << 32) | split_id as u64).next_u64()
}

/// Trains one member of the suite. Only the target records representations.
pub fn train_shadow(
    data: &Matrix,
    labels: &LabelSet,
    mask: &[bool],
    split_id: u32,
    config: &ShadowConfig,
) -> Result<TrainRun> {
    let members: Vec<usize> = mask.iter().enumerate().filter(|(_, &b)| b).map(|(i, _)| i).collect();
    let train = TrainConfig {
        seed: shadow_train_seed(config.base_seed, split_id),
        record_representations: split_id == config.target_split,
        ..config.train.clone()
    };
    train_classifier(data, labels, &members, &train).map_err(|e| Error::ShadowRun {
        split_id,
        source: Box::new(e),
    })
}

/// Logit gaps of every sample at every checkpoint of a run.
pub fn run_gaps(run: &TrainRun, labels: &LabelSet) -> Vec<Vec<f64>> {
    let y = labels.labels();
    run.checkpoints
        .iter()
        .map(|c| {
            (0..c.logits.rows())
                .map(|i| logit_gap(c.logits.row(i), y[i] as usize))
                .collect()
        })
        .collect()
}

/// All trained models of a suite, in split order, plus their gap observations.
#[derive(Debug, Clone)]
pub struct ShadowOutput {
    pub runs: Vec<TrainRun>,
    pub suite: ShadowSuite,
}

impl ShadowOutput {
    pub fn target(&self) -> &TrainRun {
        let t = self.suite.target_split() as usize;
        &self.runs[t]
    }
}

/// Trains `config.shadows` models on the splits of [`make_splits`]. Runs are
/// independent and execute in parallel; each is deterministic on its own.
pub fn run_shadow_suite(data: &Matrix, labels: &LabelSet, config: &ShadowConfig) -> Result<ShadowOutput> {
    let n = data.rows();
    if labels.len() != n {
        return Err(Error::CountMismatch {
            left: n,
            right: labels.len(),
        });
    }
    if config.target_split as usize >= config.shadows {
        return Err(Error::InvalidArgument(format!(
            "target split {} outside 0..{}",
            config.target_split, config.shadows
        )));
    }
    let masks = make_splits(n, config.shadows, config.base_seed)?;
    let runs: Vec<TrainRun> = masks
        .par_iter()
        .enumerate()
        .map(|(s, mask)| train_shadow(data, labels, mask, s as u32, config))
        .collect::<Result<_>>()?;
    let epochs = config.train.checkpoint_epochs()?;
    let entries = runs
        .iter()
        .zip(masks)
        .enumerate()
        .map(|(s, (run, mask))| ShadowEntry {
            split_id: s as u32,
            mask,
            gaps: run_gaps(run, labels),
        })
        .collect();
    let suite = ShadowSuite::new(n, epochs, config.target_split, entries)?;
    Ok(ShadowOutput { runs, suite })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic::{sample_mixture, MixtureConfig};

    fn small() -> (Matrix, LabelSet, ShadowConfig) {
        let s = sample_mixture(&MixtureConfig::symmetric(4, 1.0, 0.1, 40, 3)).unwrap();
        let cfg = ShadowConfig {
            shadows: 2,
            base_seed: 5,
            train: TrainConfig {
                hidden: vec![8],
                epochs: 2,
                checkpoint_stride: 1.0,
                ..Default::default()
            },
            ..Default::default()
        };
        (s.data.clone(), s.label_set().unwrap(), cfg)
    }

    #[test]
    fn two_shadows_differ() {
        let (x, y, cfg) = small();
        let out = run_shadow_suite(&x, &y, &cfg).unwrap();
        assert_eq!(out.runs.len(), 2);
        assert_ne!(out.suite.entries()[0].mask, out.suite.entries()[1].mask);
        assert_ne!(out.runs[0].model.params(), out.runs[1].model.params());
        assert!(out.runs[0].checkpoints[0].representations.is_some());
        assert!(out.runs[1].checkpoints[0].representations.is_none());
    }

    #[test]
    fn rerun_is_identical() {
        let (x, y, cfg) = small();
        let a = run_shadow_suite(&x, &y, &cfg).unwrap();
        let b = run_shadow_suite(&x, &y, &cfg).unwrap();
        assert_eq!(a.suite, b.suite);
    }

    #[test]
    fn divergence_names_the_split() {
        let (x, y, mut cfg) = small();
        cfg.train.learning_rate = 1e300;
        match run_shadow_suite(&x, &y, &cfg) {
            Err(Error::ShadowRun { split_id, .. }) => assert!(split_id < 2),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn one_shadow_rejected() {
        let (x, y, mut cfg) = small();
        cfg.shadows = 1;
        cfg.target_split = 0;
        assert!(run_shadow_suite(&x, &y, &cfg).is_err());
    }
}
