//! On-disk run directory.
//!
//! ```text
//! <root>/dataset/{reps,labels,outlier}.mema  dataset.json
//! <root>/manifest.json
//! <root>/shadow_<id>/mask.mema
//! <root>/shadow_<id>/checkpoint_<epoch>/{loss,logits}.mema
//! <root>/shadow_<id>/checkpoint_<epoch>/reps_layer<k>.mema   (target only)
//! ```
//!
//! Losses and logits are stored as float64 so gaps read back exactly;
//! representations are float32.

use std::path::{Path, PathBuf};
use std::sync::Mutex;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datastore::{
    read_json, read_tensor, write_json, write_tensor, CheckpointEntry, DType, Hyperparameters, LabelSet,
    RunManifest, ShadowRecord, Tensor,
};
use crate::error::{Error, Result};
use crate::lira::{logit_gap, make_splits, ShadowEntry, ShadowSuite};
use crate::matrix::Matrix;
use crate::pipeline::ArtifactSource;
use crate::synthetic::{checkpoint_tag, train_shadow, ShadowConfig, MixtureSample, TrainConfig, TrainRun};

pub const DATASET_DIR: &str = "dataset";
pub const MANIFEST_FILE: &str = "manifest.json";

/// Generation parameters of a synthetic dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetInfo {
    pub name: String,
    pub d: usize,
    pub n: usize,
    pub epsilon: f64,
    pub separation: f64,
    pub law: String,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub info: DatasetInfo,
    pub data: Matrix,
    pub labels: LabelSet,
    pub outlier: Vec<bool>,
}

pub fn shadow_dir_name(split_id: u32) -> String {
    format!("shadow_{split_id}")
}

pub fn checkpoint_dir_name(epoch: f64) -> String {
    format!("checkpoint_{epoch:.1}")
}

fn tensor_path(dir: &Path, stem: &str) -> PathBuf {
    dir.join(format!("{stem}.mema"))
}

fn read_existing(path: &Path) -> Result<Tensor> {
    if !path.exists() {
        return Err(Error::MissingArtifact(path.display().to_string()));
    }
    read_tensor(path)
}

fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

/// Writes `dataset/` under `root`; returns the written paths.
pub fn write_dataset(root: &Path, info: &DatasetInfo, sample: &MixtureSample) -> Result<Vec<PathBuf>> {
    let dir = root.join(DATASET_DIR);
    create_dir(&dir)?;
    let files = vec![
        tensor_path(&dir, "reps"),
        tensor_path(&dir, "labels"),
        tensor_path(&dir, "outlier"),
    ];
    write_tensor(&files[0], &Tensor::from_matrix(&sample.data, DType::F32)?)?;
    write_tensor(&files[1], &Tensor::from_u32(sample.labels.clone())?)?;
    write_tensor(&files[2], &Tensor::from_bools(&sample.outlier)?)?;
    write_json(dir.join("dataset.json"), info)?;
    Ok(files)
}

pub fn read_dataset(root: &Path) -> Result<Dataset> {
    let dir = root.join(DATASET_DIR);
    let info_path = dir.join("dataset.json");
    if !info_path.exists() {
        return Err(Error::MissingArtifact(info_path.display().to_string()));
    }
    let info: DatasetInfo = read_json(&info_path)?;
    let data = read_existing(&tensor_path(&dir, "reps"))?.into_matrix()?;
    let labels = LabelSet::new(read_existing(&tensor_path(&dir, "labels"))?.into_u32()?, None, None)?;
    let outlier = read_existing(&tensor_path(&dir, "outlier"))?.into_bools()?;
    if data.rows() != labels.len() || outlier.len() != labels.len() {
        return Err(Error::CountMismatch {
            left: data.rows(),
            right: labels.len(),
        });
    }
    Ok(Dataset {
        info,
        data,
        labels,
        outlier,
    })
}

/// Writes the artifacts of one trained model into `dir`.
pub fn write_run(dir: &Path, run: &TrainRun, mask: &[bool]) -> Result<()> {
    create_dir(dir)?;
    write_tensor(tensor_path(dir, "mask"), &Tensor::from_bools(mask)?)?;
    for c in &run.checkpoints {
        let cdir = dir.join(checkpoint_dir_name(c.epoch));
        create_dir(&cdir)?;
        let losses = Tensor::from_f64(vec![c.train_losses.len()], &c.train_losses, DType::F64)?;
        write_tensor(tensor_path(&cdir, "loss"), &losses)?;
        write_tensor(tensor_path(&cdir, "logits"), &Tensor::from_matrix(&c.logits, DType::F64)?)?;
        if let Some(reps) = &c.representations {
            // The last output is the logits, already stored above.
            for (k, m) in reps.iter().take(reps.len() - 1).enumerate() {
                let t = Tensor::from_matrix(m, DType::F32)?;
                write_tensor(tensor_path(&cdir, &format!("reps_layer{}", k + 1)), &t)?;
            }
        }
    }
    Ok(())
}

/// Training settings as recorded in the manifest.
pub fn hyperparameters(
    shadow: &ShadowConfig,
    loss_decrease_fraction: f64,
    directions: usize,
    quantile: f64,
    tpr_target: f64,
) -> Hyperparameters {
    let t = &shadow.train;
    Hyperparameters {
        loss_decrease_fraction,
        directions,
        quantile,
        tpr_target,
        shadows: shadow.shadows,
        base_seed: shadow.base_seed,
        epochs: t.epochs,
        checkpoint_stride: t.checkpoint_stride,
        batch_size: t.batch_size,
        learning_rate: t.learning_rate,
        hidden: t.hidden.clone(),
    }
}

fn same_training(a: &Hyperparameters, b: &Hyperparameters) -> bool {
    a.shadows == b.shadows
        && a.base_seed == b.base_seed
        && a.epochs == b.epochs
        && a.checkpoint_stride == b.checkpoint_stride
        && a.batch_size == b.batch_size
        && a.learning_rate == b.learning_rate
        && a.hidden == b.hidden
}

fn fresh_manifest(dataset: &str, config: &ShadowConfig, hp: Hyperparameters) -> Result<RunManifest> {
    let checkpoints = config
        .train
        .checkpoint_epochs()?
        .into_iter()
        .enumerate()
        .map(|(index, epoch)| CheckpointEntry {
            index,
            epoch,
            tag: checkpoint_tag(epoch),
        })
        .collect();
    let shadows = (0..config.shadows as u32)
        .map(|split_id| ShadowRecord {
            split_id,
            path: shadow_dir_name(split_id),
            complete: false,
        })
        .collect();
    Ok(RunManifest {
        dataset: dataset.to_string(),
        split_id: config.target_split,
        checkpoints,
        layers: config.train.hidden.len() + 1,
        hyperparameters: hp,
        shadows,
    })
}

/// Outcome of [`train_suite_to_disk`].
#[derive(Debug, Clone, PartialEq)]
pub struct SuiteProgress {
    pub trained: Vec<u32>,
    pub skipped: Vec<u32>,
}

/// Trains the suite into `root`, skipping runs the manifest already marks
/// complete. The manifest is rewritten after every finished run, so an
/// interrupted invocation resumes where it stopped.
pub fn train_suite_to_disk(
    root: &Path,
    dataset: &Dataset,
    config: &ShadowConfig,
    hp: Hyperparameters,
) -> Result<SuiteProgress> {
    if config.shadows < 2 {
        return Err(Error::InvalidArgument(format!(
            "a shadow suite needs at least 2 models, got {}",
            config.shadows
        )));
    }
    if config.target_split as usize >= config.shadows {
        return Err(Error::InvalidArgument(format!(
            "target split {} outside 0..{}",
            config.target_split, config.shadows
        )));
    }
    let manifest_path = root.join(MANIFEST_FILE);
    let manifest = if manifest_path.exists() {
        let existing = RunManifest::load(&manifest_path)?;
        if !same_training(&existing.hyperparameters, &hp) || existing.split_id != config.target_split {
            return Err(Error::Manifest(format!(
                "{} was written with different training settings",
                manifest_path.display()
            )));
        }
        existing
    } else {
        let m = fresh_manifest(&dataset.info.name, config, hp)?;
        m.save(&manifest_path)?;
        m
    };

    let masks = make_splits(dataset.data.rows(), config.shadows, config.base_seed)?;
    let pending: Vec<u32> = manifest.shadows.iter().filter(|s| !s.complete).map(|s| s.split_id).collect();
    let skipped: Vec<u32> = manifest.shadows.iter().filter(|s| s.complete).map(|s| s.split_id).collect();
    let manifest = Mutex::new(manifest);
    pending.par_iter().try_for_each(|&split_id| -> Result<()> {
        let dir = root.join(shadow_dir_name(split_id));
        if dir.exists() {
            std::fs::remove_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        }
        let mask = &masks[split_id as usize];
        let run = train_shadow(&dataset.data, &dataset.labels, mask, split_id, config)?;
        write_run(&dir, &run, mask)?;
        log::info!("shadow {split_id} written to {}", dir.display());
        let mut m = manifest.lock().unwrap_or_else(|p| p.into_inner());
        if let Some(rec) = m.shadows.iter_mut().find(|s| s.split_id == split_id) {
            rec.complete = true;
        }
        m.save(&manifest_path)
    })?;
    Ok(SuiteProgress {
        trained: pending,
        skipped,
    })
}

/// A finished run directory, read lazily per checkpoint and layer.
pub struct RunDirectory {
    root: PathBuf,
    manifest: RunManifest,
    labels: LabelSet,
    members: Vec<usize>,
    suite: ShadowSuite,
}

impl RunDirectory {
    pub fn open(root: impl AsRef<Path>) -> Result<Self> {
        let root = root.as_ref().to_path_buf();
        let manifest_path = root.join(MANIFEST_FILE);
        if !manifest_path.exists() {
            return Err(Error::MissingArtifact(manifest_path.display().to_string()));
        }
        let manifest = RunManifest::load(&manifest_path)?;
        if let Some(s) = manifest.shadows.iter().find(|s| !s.complete) {
            return Err(Error::MissingArtifact(format!("shadow run {} is incomplete", s.split_id)));
        }
        let dataset = read_dataset(&root)?;
        let labels = dataset.labels;
        let y = labels.labels();
        let n = labels.len();
        let entries = manifest
            .shadows
            .par_iter()
            .map(|s| -> Result<ShadowEntry> {
                let dir = root.join(&s.path);
                let mask = read_existing(&tensor_path(&dir, "mask"))?.into_bools()?;
                let gaps = manifest
                    .checkpoints
                    .iter()
                    .map(|c| -> Result<Vec<f64>> {
                        let path = tensor_path(&dir.join(checkpoint_dir_name(c.epoch)), "logits");
                        let logits = read_existing(&path)?.into_matrix()?;
                        if logits.rows() != n {
                            return Err(Error::CountMismatch {
                                left: logits.rows(),
                                right: n,
                            });
                        }
                        Ok((0..n).map(|i| logit_gap(logits.row(i), y[i] as usize)).collect())
                    })
                    .collect::<Result<_>>()?;
                Ok(ShadowEntry {
                    split_id: s.split_id,
                    mask,
                    gaps,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let epochs = manifest.checkpoints.iter().map(|c| c.epoch).collect();
        let suite = ShadowSuite::new(n, epochs, manifest.split_id, entries)?;
        let members = suite.members(manifest.split_id)?;
        Ok(Self {
            root,
            manifest,
            labels,
            members,
            suite,
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn manifest(&self) -> &RunManifest {
        &self.manifest
    }

    /// Training settings the suite was produced with.
    pub fn train_config(&self) -> TrainConfig {
        let hp = &self.manifest.hyperparameters;
        TrainConfig {
            hidden: hp.hidden.clone(),
            epochs: hp.epochs,
            batch_size: hp.batch_size,
            learning_rate: hp.learning_rate,
            checkpoint_stride: hp.checkpoint_stride,
            ..TrainConfig::default()
        }
    }

    fn checkpoint_dir(&self, checkpoint: usize) -> Result<PathBuf> {
        let entry = self
            .manifest
            .checkpoints
            .get(checkpoint)
            .ok_or_else(|| Error::MissingArtifact(format!("checkpoint {checkpoint}")))?;
        Ok(self
            .root
            .join(shadow_dir_name(self.manifest.split_id))
            .join(checkpoint_dir_name(entry.epoch)))
    }
}

impl ArtifactSource for RunDirectory {
    fn labels(&self) -> &LabelSet {
        &self.labels
    }

    fn members(&self) -> &[usize] {
        &self.members
    }

    fn suite(&self) -> &ShadowSuite {
        &self.suite
    }

    fn layer_count(&self) -> usize {
        self.manifest.layers
    }

    fn train_losses(&self, checkpoint: usize) -> Result<Vec<f64>> {
        let t = read_existing(&tensor_path(&self.checkpoint_dir(checkpoint)?, "loss"))?;
        let losses = t.to_f64();
        if losses.len() != self.members.len() {
            return Err(Error::CountMismatch {
                left: losses.len(),
                right: self.members.len(),
            });
        }
        Ok(losses)
    }

    fn logits(&self, checkpoint: usize) -> Result<Matrix> {
        read_existing(&tensor_path(&self.checkpoint_dir(checkpoint)?, "logits"))?.into_matrix()
    }

    fn representations(&self, checkpoint: usize, layer: usize) -> Result<Matrix> {
        if layer == 0 || layer > self.manifest.layers {
            return Err(Error::MissingArtifact(format!("layer {layer}")));
        }
        if layer == self.manifest.layers {
            return self.logits(checkpoint);
        }
        let path = tensor_path(&self.checkpoint_dir(checkpoint)?, &format!("reps_layer{layer}"));
        read_existing(&path)?.into_matrix()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic::{run_shadow_suite, sample_mixture, MixtureConfig};

    fn setup(root: &Path) -> (Dataset, ShadowConfig, Hyperparameters) {
        let sample = sample_mixture(&MixtureConfig::symmetric(4, 1.5, 0.1, 60, 2)).unwrap();
        let info = DatasetInfo {
            name: "toy".into(),
            d: 4,
            n: 60,
            epsilon: 0.1,
            separation: 1.5,
            law: "class-mixture".into(),
            seed: 2,
        };
        write_dataset(root, &info, &sample).unwrap();
        let config = ShadowConfig {
            shadows: 3,
            base_seed: 9,
            train: TrainConfig {
                hidden: vec![6],
                epochs: 2,
                checkpoint_stride: 0.5,
                ..Default::default()
            },
            ..Default::default()
        };
        let hp = hyperparameters(&config, 0.95, 50, 0.1, 0.75);
        (read_dataset(root).unwrap(), config, hp)
    }

    #[test]
    fn disk_suite_matches_memory() {
        let dir = tempfile::tempdir().unwrap();
        let (ds, config, hp) = setup(dir.path());
        let progress = train_suite_to_disk(dir.path(), &ds, &config, hp).unwrap();
        assert_eq!(progress.trained, vec![0, 1, 2]);
        let run = RunDirectory::open(dir.path()).unwrap();
        let mem = run_shadow_suite(&ds.data, &ds.labels, &config).unwrap();
        assert_eq!(run.suite(), &mem.suite);
        assert_eq!(run.members(), mem.target().members.as_slice());
        assert_eq!(run.train_losses(2).unwrap(), mem.target().checkpoints[2].train_losses);
        assert_eq!(run.layer_count(), 2);
        let reps = run.representations(1, 1).unwrap();
        assert_eq!(reps.cols(), 6);
        assert!(run.representations(1, 3).is_err());
    }

    #[test]
    fn resume_skips_complete_runs() {
        let dir = tempfile::tempdir().unwrap();
        let (ds, config, hp) = setup(dir.path());
        train_suite_to_disk(dir.path(), &ds, &config, hp.clone()).unwrap();
        let path = dir.path().join(MANIFEST_FILE);
        let before = std::fs::read(dir.path().join("shadow_1/checkpoint_2.0/logits.mema")).unwrap();
        let mut m = RunManifest::load(&path).unwrap();
        m.shadows[1].complete = false;
        m.save(&path).unwrap();
        std::fs::remove_file(dir.path().join("shadow_1/mask.mema")).unwrap();
        let progress = train_suite_to_disk(dir.path(), &ds, &config, hp).unwrap();
        assert_eq!(progress.trained, vec![1]);
        assert_eq!(progress.skipped, vec![0, 2]);
        let after = std::fs::read(dir.path().join("shadow_1/checkpoint_2.0/logits.mema")).unwrap();
        assert_eq!(before, after);
        assert!(RunManifest::load(&path).unwrap().shadows.iter().all(|s| s.complete));
    }

    #[test]
    fn changed_settings_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let (ds, config, hp) = setup(dir.path());
        train_suite_to_disk(dir.path(), &ds, &config, hp).unwrap();
        let mut other = config.clone();
        other.train.learning_rate = 0.1;
        let hp2 = hyperparameters(&other, 0.95, 50, 0.1, 0.75);
        assert!(train_suite_to_disk(dir.path(), &ds, &other, hp2).is_err());
    }

    #[test]
    fn missing_layer_file_reported() {
        let dir = tempfile::tempdir().unwrap();
        let (ds, config, hp) = setup(dir.path());
        train_suite_to_disk(dir.path(), &ds, &config, hp).unwrap();
        std::fs::remove_file(dir.path().join("shadow_0/checkpoint_1.0/reps_layer1.mema")).unwrap();
        let run = RunDirectory::open(dir.path()).unwrap();
        let err = run.representations(2, 1).unwrap_err();
        assert_eq!(err.kind(), "missing_artifact");
    }
}
