//! Artifact schema document, a write/read self-test, and validation of
//! directories produced by external exporters.

use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::{json, Value};

use memaudit::datastore::{
    read_tensor, write_tensor, CheckpointEntry, DType, Hyperparameters, RunManifest, Tensor, FORMAT_VERSION,
    MAX_RANK,
};
use memaudit::synthetic::cross_entropy;
use memaudit::{Error, Result};

/// Exported losses must match losses recomputed from exported logits this closely.
pub const LOSS_TOLERANCE: f64 = 1e-5;

pub fn document() -> Value {
    json!({
        "tensor_file": {
            "byte_order": "little-endian",
            "header": [
                {"field": "magic", "bytes": 4, "value": "MEMA"},
                {"field": "version", "type": "u32", "value": FORMAT_VERSION},
                {"field": "dtype", "type": "u32", "codes": {"1": "float32", "2": "float64", "3": "uint32"}},
                {"field": "rank", "type": "u32", "max": MAX_RANK},
                {"field": "shape", "type": "u64[rank]"},
            ],
            "payload": "row-major values; length = product(shape) * dtype size; product(shape) > 0",
        },
        "manifest": {
            "file": "manifest.json",
            "required": ["split_id", "checkpoints", "layers", "hyperparameters"],
            "checkpoint": ["index", "epoch", "tag"],
            "hyperparameters": [
                "loss_decrease_fraction", "directions", "quantile", "tpr_target", "shadows", "base_seed",
                "epochs", "checkpoint_stride", "batch_size", "learning_rate", "hidden"
            ],
        },
        "run_directory": {
            "dataset": "dataset/{reps,labels,outlier}.mema, dataset/dataset.json",
            "shadow": "shadow_<id>/mask.mema",
            "checkpoint": "shadow_<id>/checkpoint_<epoch>/{loss,logits,reps_layer<k>}.mema",
        },
        "export_fragment": {
            "labels.mema": "uint32 (n)",
            "logits.mema": "float32 or float64 (n, r+1)",
            "loss.mema": "float32 or float64 (n)",
            "reps_layer<k>.mema": "float32 or float64 (n, d)",
            "loss_tolerance": LOSS_TOLERANCE,
        },
    })
}

#[derive(Debug, Serialize)]
pub struct SelfTest {
    pub cases: usize,
    pub files: Vec<String>,
}

fn sample_values(count: usize, dtype: DType) -> Vec<f64> {
    (0..count)
        .map(|i| match dtype {
            DType::U32 => (i * 7 % 13) as f64,
            _ => (i as f64 - 3.25) * 0.375,
        })
        .collect()
}

/// Writes one tensor per (dtype, rank) and a manifest, reads each back and
/// requires identical bytes and values.
pub fn self_test(dir: &Path) -> Result<SelfTest> {
    std::fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })?;
    let mut files = Vec::new();
    for dtype in [DType::F32, DType::F64, DType::U32] {
        for rank in 1..=MAX_RANK {
            let shape: Vec<usize> = (0..rank).map(|k| k + 2).collect();
            let count = shape.iter().product();
            let tensor = Tensor::from_f64(shape, &sample_values(count, dtype), dtype)?;
            let path = dir.join(format!("{}_rank{rank}.mema", dtype_name(dtype)));
            write_tensor(&path, &tensor)?;
            let bytes = std::fs::read(&path).map_err(|e| Error::Io {
                path: path.clone(),
                source: e,
            })?;
            if bytes != tensor.encode() || read_tensor(&path)? != tensor {
                return Err(Error::Numerical(format!("round trip of {} differs", path.display())));
            }
            files.push(path.display().to_string());
        }
    }
    let manifest = RunManifest {
        dataset: "selftest".into(),
        split_id: 0,
        checkpoints: vec![CheckpointEntry {
            index: 0,
            epoch: 0.0,
            tag: "epoch0.0".into(),
        }],
        layers: 2,
        hyperparameters: Hyperparameters {
            loss_decrease_fraction: 0.95,
            directions: 2000,
            quantile: 0.1,
            tpr_target: 0.75,
            shadows: 2,
            base_seed: 0,
            epochs: 10,
            checkpoint_stride: 0.2,
            batch_size: 32,
            learning_rate: 0.05,
            hidden: vec![64, 32],
        },
        shadows: vec![],
    };
    let path = dir.join("manifest.json");
    manifest.save(&path)?;
    if RunManifest::load(&path)? != manifest {
        return Err(Error::Manifest("manifest round trip differs".into()));
    }
    files.push(path.display().to_string());
    Ok(SelfTest {
        cases: files.len(),
        files,
    })
}

fn dtype_name(dtype: DType) -> &'static str {
    match dtype {
        DType::F32 => "float32",
        DType::F64 => "float64",
        DType::U32 => "uint32",
    }
}

#[derive(Debug, Default, Serialize)]
pub struct Validation {
    pub tensors: usize,
    pub manifests: usize,
    pub loss_checks: usize,
    pub max_loss_error: f64,
    pub failures: Vec<String>,
}

fn collect(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })?;
    for entry in entries {
        let path = entry
            .map_err(|e| Error::Io {
                path: dir.to_path_buf(),
                source: e,
            })?
            .path();
        if path.is_dir() {
            collect(&path, out)?;
        } else {
            out.push(path);
        }
    }
    Ok(())
}

fn check_losses(dir: &Path, report: &mut Validation) -> Result<()> {
    let labels = read_tensor(dir.join("labels.mema"))?.into_u32()?;
    let logits = read_tensor(dir.join("logits.mema"))?.into_matrix()?;
    let losses = read_tensor(dir.join("loss.mema"))?.to_f64();
    if logits.rows() != labels.len() || losses.len() != labels.len() {
        return Err(Error::CountMismatch {
            left: logits.rows(),
            right: labels.len(),
        });
    }
    for (i, (&y, &loss)) in labels.iter().zip(&losses).enumerate() {
        if y as usize >= logits.cols() {
            return Err(Error::LabelOutOfRange {
                label: y,
                class_count: logits.cols(),
            });
        }
        let err = (cross_entropy(logits.row(i), y as usize) - loss).abs();
        report.max_loss_error = report.max_loss_error.max(err);
        if err > LOSS_TOLERANCE {
            report.failures.push(format!(
                "{}: loss of sample {i} differs from recomputed value by {err:.3e}",
                dir.display()
            ));
        }
    }
    report.loss_checks += 1;
    Ok(())
}

/// Checks every tensor and manifest under `dir`. Directories holding
/// labels, logits and loss together also get their losses recomputed.
pub fn validate_dir(dir: &Path) -> Result<Validation> {
    let mut files = Vec::new();
    collect(dir, &mut files)?;
    files.sort();
    let mut report = Validation::default();
    let mut fragments = Vec::new();
    for path in &files {
        let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("");
        if name.ends_with(".mema") {
            report.tensors += 1;
            if let Err(e) = read_tensor(path) {
                report.failures.push(format!("{}: {e}", path.display()));
            }
            if name == "logits.mema" {
                fragments.push(path.parent().unwrap_or(dir).to_path_buf());
            }
        } else if name == "manifest.json" {
            report.manifests += 1;
            if let Err(e) = RunManifest::load(path) {
                report.failures.push(format!("{}: {e}", path.display()));
            }
        }
    }
    for frag in fragments {
        if frag.join("labels.mema").exists() && frag.join("loss.mema").exists() {
            if let Err(e) = check_losses(&frag, &mut report) {
                report.failures.push(format!("{}: {e}", frag.display()));
            }
        }
    }
    Ok(report)
}
