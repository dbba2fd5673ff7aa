use std::collections::BTreeSet;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::write_atomic;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointEntry {
    pub index: usize,
    pub epoch: f64,
    pub tag: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hyperparameters {
    pub loss_decrease_fraction: f64,
    pub directions: usize,
    pub quantile: f64,
    pub tpr_target: f64,
    pub shadows: usize,
    pub base_seed: u64,
    pub epochs: usize,
    pub checkpoint_stride: f64,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub hidden: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShadowRecord {
    pub split_id: u32,
    pub path: String,
    pub complete: bool,
}

/// Provenance of a shadow-suite run directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    #[serde(default)]
    pub dataset: String,
    /// Split whose model is the audit target.
    pub split_id: u32,
    pub checkpoints: Vec<CheckpointEntry>,
    pub layers: usize,
    pub hyperparameters: Hyperparameters,
    #[serde(default)]
    pub shadows: Vec<ShadowRecord>,
}

impl RunManifest {
    pub fn validate(&self) -> Result<()> {
        let mut seen = BTreeSet::new();
        for s in &self.shadows {
            if !seen.insert(s.split_id) {
                return Err(Error::Manifest(format!(
                    "split_id {} appears twice in the shadow registry",
                    s.split_id
                )));
            }
        }
        for w in self.checkpoints.windows(2) {
            if w[1].epoch <= w[0].epoch {
                return Err(Error::Manifest(
                    "checkpoint epochs must be strictly increasing".into(),
                ));
            }
        }
        Ok(())
    }

    /// Reads and validates a manifest; paths of completed shadows are
    /// resolved against `root` and must exist.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let manifest: RunManifest = read_json(path)?;
        manifest.validate()?;
        let root = path.parent().unwrap_or_else(|| Path::new("."));
        for s in manifest.shadows.iter().filter(|s| s.complete) {
            let p = root.join(&s.path);
            if !p.exists() {
                return Err(Error::MissingArtifact(p.display().to_string()));
            }
        }
        Ok(manifest)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.validate()?;
        write_json(path, self)
    }
}

pub fn write_json<T: Serialize + ?Sized>(path: impl AsRef<Path>, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    write_atomic(path.as_ref(), &bytes)
}

pub fn read_json<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<T> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_slice(&bytes)?)
}
