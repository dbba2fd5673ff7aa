use std::collections::HashSet;
use std::path::Path;

use super::read_tensor;
use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Hidden vectors of one layer at one checkpoint, one row per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct RepresentationSet {
    data: Matrix,
    layer_index: usize,
    checkpoint_tag: String,
    sample_ids: Vec<u64>,
}

impl RepresentationSet {
    /// Sample ids default to row indices.
    pub fn new(
        data: Matrix,
        layer_index: usize,
        checkpoint_tag: impl Into<String>,
        sample_ids: Option<Vec<u64>>,
    ) -> Result<Self> {
        if data.rows() < 2 {
            return Err(Error::InvalidArgument(format!(
                "representation set needs at least 2 samples, got {}",
                data.rows()
            )));
        }
        if data.cols() < 1 {
            return Err(Error::InvalidArgument(
                "representation dimension must be at least 1".into(),
            ));
        }
        if let Some(index) = data.first_non_finite() {
            return Err(Error::NonFinite { index });
        }
        let sample_ids = sample_ids.unwrap_or_else(|| (0..data.rows() as u64).collect());
        if sample_ids.len() != data.rows() {
            return Err(Error::CountMismatch {
                left: data.rows(),
                right: sample_ids.len(),
            });
        }
        let mut seen = HashSet::with_capacity(sample_ids.len());
        if let Some(dup) = sample_ids.iter().find(|id| !seen.insert(**id)) {
            return Err(Error::InvalidArgument(format!("duplicate sample id {dup}")));
        }
        Ok(Self {
            data,
            layer_index,
            checkpoint_tag: checkpoint_tag.into(),
            sample_ids,
        })
    }

    pub fn data(&self) -> &Matrix {
        &self.data
    }

    pub fn len(&self) -> usize {
        self.data.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.data.rows() == 0
    }

    pub fn dim(&self) -> usize {
        self.data.cols()
    }

    pub fn layer_index(&self) -> usize {
        self.layer_index
    }

    pub fn checkpoint_tag(&self) -> &str {
        &self.checkpoint_tag
    }

    pub fn sample_ids(&self) -> &[u64] {
        &self.sample_ids
    }
}

/// Class labels aligned with a [`RepresentationSet`].
#[derive(Debug, Clone, PartialEq)]
pub struct LabelSet {
    labels: Vec<u32>,
    class_count: usize,
    sample_ids: Vec<u64>,
}

impl LabelSet {
    /// With `class_count = None` the count is inferred as `max label + 1`.
    pub fn new(
        labels: Vec<u32>,
        class_count: Option<usize>,
        sample_ids: Option<Vec<u64>>,
    ) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::InvalidArgument("label set is empty".into()));
        }
        let inferred = labels.iter().copied().max().unwrap_or(0) as usize + 1;
        let class_count = class_count.unwrap_or(inferred);
        if let Some(&label) = labels.iter().find(|&&l| l as usize >= class_count) {
            return Err(Error::LabelOutOfRange { label, class_count });
        }
        let sample_ids = sample_ids.unwrap_or_else(|| (0..labels.len() as u64).collect());
        if sample_ids.len() != labels.len() {
            return Err(Error::CountMismatch {
                left: labels.len(),
                right: sample_ids.len(),
            });
        }
        Ok(Self {
            labels,
            class_count,
            sample_ids,
        })
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn sample_ids(&self) -> &[u64] {
        &self.sample_ids
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0usize; self.class_count];
        for &l in &self.labels {
            counts[l as usize] += 1;
        }
        counts
    }

    pub fn select(&self, indices: &[usize]) -> Result<LabelSet> {
        LabelSet::new(
            indices.iter().map(|&i| self.labels[i]).collect(),
            Some(self.class_count),
            Some(indices.iter().map(|&i| self.sample_ids[i]).collect()),
        )
    }
}

#[derive(Debug, Clone, Default)]
pub struct LoadOptions {
    pub class_count: Option<usize>,
    pub layer_index: usize,
    pub checkpoint_tag: String,
}

/// Loads a representation matrix and its labels, checking alignment.
pub fn load_aligned(
    reps_path: impl AsRef<Path>,
    labels_path: impl AsRef<Path>,
    options: &LoadOptions,
) -> Result<(RepresentationSet, LabelSet)> {
    let reps = read_tensor(reps_path)?;
    if reps.rank() != 2 {
        return Err(Error::InvalidArgument(format!(
            "representations must be rank 2, found shape {:?}",
            reps.shape()
        )));
    }
    let labels = read_tensor(labels_path)?;
    if labels.rank() != 1 {
        return Err(Error::InvalidArgument(format!(
            "labels must be rank 1, found shape {:?}",
            labels.shape()
        )));
    }
    let labels = labels.into_u32()?;
    let data = reps.into_matrix()?;
    if data.rows() != labels.len() {
        return Err(Error::CountMismatch {
            left: data.rows(),
            right: labels.len(),
        });
    }
    let reps = RepresentationSet::new(
        data,
        options.layer_index,
        options.checkpoint_tag.clone(),
        None,
    )?;
    let labels = LabelSet::new(labels, options.class_count, None)?;
    Ok((reps, labels))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datastore::{write_tensor, DType, Tensor};

    fn write_pair(dir: &Path, n_reps: usize, labels: &[u32]) -> (std::path::PathBuf, std::path::PathBuf) {
        let reps: Vec<f64> = (0..n_reps * 3).map(|i| i as f64 * 0.5).collect();
        let rp = dir.join("reps.mema");
        let lp = dir.join("labels.mema");
        write_tensor(&rp, &Tensor::from_f64(vec![n_reps, 3], &reps, DType::F32).unwrap()).unwrap();
        write_tensor(&lp, &Tensor::from_u32(labels.to_vec()).unwrap()).unwrap();
        (rp, lp)
    }

    #[test]
    fn infers_class_count() {
        let dir = tempfile::tempdir().unwrap();
        let labels: Vec<u32> = (0..100).map(|i| i % 2).collect();
        let (rp, lp) = write_pair(dir.path(), 100, &labels);
        let (reps, labels) = load_aligned(rp, lp, &LoadOptions::default()).unwrap();
        assert_eq!(labels.class_count(), 2);
        assert_eq!(reps.len(), 100);
        assert_eq!(reps.sample_ids()[42], 42);
    }

    #[test]
    fn count_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let labels: Vec<u32> = (0..99).map(|i| i % 2).collect();
        let (rp, lp) = write_pair(dir.path(), 100, &labels);
        let err = load_aligned(rp, lp, &LoadOptions::default()).unwrap_err();
        assert!(err.to_string().contains("count mismatch"), "{err}");
    }

    #[test]
    fn label_out_of_range() {
        let dir = tempfile::tempdir().unwrap();
        let labels = vec![0, 1, 2, 4];
        let (rp, lp) = write_pair(dir.path(), 4, &labels);
        let opts = LoadOptions {
            class_count: Some(4),
            ..Default::default()
        };
        let err = load_aligned(rp, lp, &opts).unwrap_err();
        assert!(err.to_string().contains("label out of range"), "{err}");
    }

    #[test]
    fn duplicate_ids_rejected() {
        let m = Matrix::from_rows(&[[1.0], [2.0]]).unwrap();
        assert!(RepresentationSet::new(m, 1, "e", Some(vec![3, 3])).is_err());
    }
}
