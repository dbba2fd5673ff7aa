use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::directions::DirectionSet;
use crate::datastore::{read_json, read_tensor, write_json, write_tensor, DType, LabelSet, RepresentationSet, Tensor};
use crate::error::{Error, Result};
use crate::matrix::{dot, Matrix};
use crate::stats::{log_normal_pdf, log_sum_exp};

/// Relative variance floor, scaled by the variance of all projections.
pub const VARIANCE_FLOOR_SCALE: f64 = 1e-10;

/// Directions per parallel work unit. Fixed so that reductions happen in the
/// same order whatever the thread count.
const DIRECTION_CHUNK: usize = 32;

/// Whether a sample contributes to the class Gaussian it is scored against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitScope {
    #[default]
    InSample,
    LeaveOneOut,
}

/// Per-direction, per-class Gaussian fits of projected representations.
#[derive(Debug, Clone)]
pub struct SlicedGaussianModel {
    directions: DirectionSet,
    class_count: usize,
    counts: Vec<usize>,
    /// m x C, row-major by direction.
    means: Vec<f64>,
    raw_variances: Vec<f64>,
    variances: Vec<f64>,
    floors: Vec<f64>,
    log_priors: Vec<f64>,
    scope: FitScope,
}

impl SlicedGaussianModel {
    /// Builds a model from explicit parameters. `priors` must sum to one.
    pub fn from_parameters(
        directions: DirectionSet,
        means: Matrix,
        variances: Matrix,
        priors: &[f64],
    ) -> Result<Self> {
        let m = directions.count();
        let c = priors.len();
        if means.rows() != m || variances.rows() != m || means.cols() != c || variances.cols() != c {
            return Err(Error::DimensionMismatch {
                expected: m * c,
                found: means.rows() * means.cols(),
            });
        }
        let total: f64 = priors.iter().sum();
        if (total - 1.0).abs() > 1e-12 || priors.iter().any(|&p| p < 0.0) {
            return Err(Error::InvalidArgument(format!("priors {priors:?} are not a distribution")));
        }
        if variances.as_slice().iter().any(|&v| !(v > 0.0)) {
            return Err(Error::InvalidArgument("variances must be positive".into()));
        }
        Ok(Self {
            directions,
            class_count: c,
            counts: vec![0; c],
            means: means.into_vec(),
            raw_variances: variances.as_slice().to_vec(),
            variances: variances.into_vec(),
            floors: vec![0.0; m],
            log_priors: priors.iter().map(|p| p.ln()).collect(),
            scope: FitScope::InSample,
        })
    }

    pub fn directions(&self) -> &DirectionSet {
        &self.directions
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn direction_count(&self) -> usize {
        self.directions.count()
    }

    pub fn mean(&self, j: usize, c: usize) -> f64 {
        self.means[j * self.class_count + c]
    }

    pub fn variance(&self, j: usize, c: usize) -> f64 {
        self.variances[j * self.class_count + c]
    }

    pub fn floor(&self, j: usize) -> f64 {
        self.floors[j]
    }

    pub fn prior(&self, c: usize) -> f64 {
        self.log_priors[c].exp()
    }

    pub fn scope(&self) -> FitScope {
        self.scope
    }

    fn is_fitted(&self, c: usize) -> bool {
        self.log_priors[c] > f64::NEG_INFINITY
    }

    /// Pointwise term of direction `j` for a projected value and a label,
    /// using the in-sample fits: `log p(z | y) - log sum_c p(c) p(z | c)`.
    pub fn direction_term(&self, j: usize, projection: f64, label: usize) -> f64 {
        let base = j * self.class_count;
        let mut joint = Vec::with_capacity(self.class_count);
        for c in 0..self.class_count {
            if self.is_fitted(c) {
                joint.push(
                    self.log_priors[c]
                        + log_normal_pdf(projection, self.means[base + c], self.variances[base + c]),
                );
            }
        }
        log_normal_pdf(projection, self.means[base + label], self.variances[base + label])
            - log_sum_exp(&joint)
    }

    /// Same as [`direction_term`](Self::direction_term) but with the sample
    /// removed from its own class fit and from the priors.
    fn direction_term_loo(&self, j: usize, projection: f64, label: usize, total: usize) -> f64 {
        let base = j * self.class_count;
        let n_y = self.counts[label] as f64;
        let mean_y = self.means[base + label];
        let m2 = self.raw_variances[base + label] * (n_y - 1.0);
        let mean_loo = (n_y * mean_y - projection) / (n_y - 1.0);
        let m2_loo = (m2 - (projection - mean_y) * (projection - mean_loo)).max(0.0);
        let var_loo = (m2_loo / (n_y - 2.0)).max(self.floors[j]);
        let denom = (total as f64 - 1.0).ln();
        let own = log_normal_pdf(projection, mean_loo, var_loo);
        let mut joint = Vec::with_capacity(self.class_count);
        for c in 0..self.class_count {
            if !self.is_fitted(c) {
                continue;
            }
            if c == label {
                joint.push((n_y - 1.0).ln() - denom + own);
            } else {
                joint.push(
                    (self.counts[c] as f64).ln() - denom
                        + log_normal_pdf(projection, self.means[base + c], self.variances[base + c]),
                );
            }
        }
        own - log_sum_exp(&joint)
    }
}

fn check_alignment(reps: &RepresentationSet, labels: &LabelSet) -> Result<()> {
    if reps.len() != labels.len() {
        return Err(Error::CountMismatch {
            left: reps.len(),
            right: labels.len(),
        });
    }
    if reps.sample_ids() != labels.sample_ids() {
        return Err(Error::InvalidArgument(
            "representation and label sample ids are not aligned".into(),
        ));
    }
    Ok(())
}

fn project(reps: &Matrix, direction: &[f64], out: &mut [f64]) {
    for (i, o) in out.iter_mut().enumerate() {
        *o = dot(reps.row(i), direction);
    }
}

fn sample_variance(values: impl Iterator<Item = f64> + Clone) -> (f64, f64, usize) {
    let mut n = 0usize;
    let mut sum = 0.0;
    for v in values.clone() {
        sum += v;
        n += 1;
    }
    let mean = sum / n as f64;
    let ss: f64 = values.map(|v| (v - mean) * (v - mean)).sum();
    let var = if n > 1 { ss / (n - 1) as f64 } else { 0.0 };
    (mean, var, n)
}

pub fn fit_sliced_gaussians(
    reps: &RepresentationSet,
    labels: &LabelSet,
    dirs: &DirectionSet,
) -> Result<SlicedGaussianModel> {
    fit_sliced_gaussians_with(reps, labels, dirs, FitScope::InSample)
}

/// Fits a Gaussian per (direction, class) to the projected representations.
/// Variances are Bessel-corrected and floored at
/// `VARIANCE_FLOOR_SCALE * (variance of all projections + 1e-30)`.
pub fn fit_sliced_gaussians_with(
    reps: &RepresentationSet,
    labels: &LabelSet,
    dirs: &DirectionSet,
    scope: FitScope,
) -> Result<SlicedGaussianModel> {
    check_alignment(reps, labels)?;
    if dirs.dim() != reps.dim() {
        return Err(Error::DimensionMismatch {
            expected: reps.dim(),
            found: dirs.dim(),
        });
    }
    let class_count = labels.class_count();
    let counts = labels.class_counts();
    let required = match scope {
        FitScope::InSample => 2,
        FitScope::LeaveOneOut => 3,
    };
    for (class, &count) in counts.iter().enumerate() {
        if count > 0 && count < required {
            return Err(Error::ClassTooSmall {
                class,
                count,
                required,
            });
        }
    }
    let n = reps.len();
    let y = labels.labels();
    let data = reps.data();

    let per_direction: Vec<(Vec<f64>, Vec<f64>, f64)> = (0..dirs.count())
        .into_par_iter()
        .map(|j| {
            let mut proj = vec![0.0; n];
            project(data, dirs.direction(j), &mut proj);
            let (_, global_var, _) = sample_variance(proj.iter().copied());
            let floor = VARIANCE_FLOOR_SCALE * (global_var + 1e-30);
            let mut means = vec![0.0; class_count];
            let mut vars = vec![0.0; class_count];
            for c in 0..class_count {
                if counts[c] == 0 {
                    continue;
                }
                let values = proj
                    .iter()
                    .zip(y)
                    .filter(move |(_, &l)| l as usize == c)
                    .map(|(&p, _)| p);
                let (mean, var, _) = sample_variance(values);
                means[c] = mean;
                vars[c] = var;
            }
            (means, vars, floor)
        })
        .collect();

    let m = dirs.count();
    let mut means = Vec::with_capacity(m * class_count);
    let mut raw_variances = Vec::with_capacity(m * class_count);
    let mut variances = Vec::with_capacity(m * class_count);
    let mut floors = Vec::with_capacity(m);
    for (mu, var, floor) in per_direction {
        means.extend_from_slice(&mu);
        variances.extend(var.iter().map(|&v| v.max(floor)));
        raw_variances.extend_from_slice(&var);
        floors.push(floor);
    }
    let log_priors = counts
        .iter()
        .map(|&c| if c == 0 { f64::NEG_INFINITY } else { (c as f64 / n as f64).ln() })
        .collect();
    Ok(SlicedGaussianModel {
        directions: dirs.clone(),
        class_count,
        counts,
        means,
        raw_variances,
        variances,
        floors,
        log_priors,
        scope,
    })
}

/// Per-sample pointwise sliced mutual information (nats).
#[derive(Debug, Clone, PartialEq)]
pub struct PsmiScores {
    values: Vec<f64>,
    stderr: Vec<f64>,
    direction_mi: Vec<f64>,
    directions: usize,
    seed: u64,
    layer_index: usize,
    checkpoint_tag: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct PsmiSidecar {
    kind: String,
    samples: usize,
    directions: usize,
    seed: u64,
    layer: usize,
    checkpoint: String,
    smi: f64,
    smi_stderr: f64,
    direction_mi: Vec<f64>,
}

impl PsmiScores {
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn stderr(&self) -> &[f64] {
        &self.stderr
    }

    /// Mutual information of each projected direction, averaged over samples.
    pub fn direction_mi(&self) -> &[f64] {
        &self.direction_mi
    }

    pub fn direction_count(&self) -> usize {
        self.directions
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn layer_index(&self) -> usize {
        self.layer_index
    }

    pub fn checkpoint_tag(&self) -> &str {
        &self.checkpoint_tag
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Writes an `n x 2` (value, stderr) tensor plus a JSON sidecar.
    pub fn write(&self, tensor_path: impl AsRef<Path>, sidecar_path: impl AsRef<Path>) -> Result<()> {
        let mut flat = Vec::with_capacity(self.values.len() * 2);
        for (v, s) in self.values.iter().zip(&self.stderr) {
            flat.push(*v);
            flat.push(*s);
        }
        write_tensor(tensor_path, &Tensor::from_f64(vec![self.values.len(), 2], &flat, DType::F64)?)?;
        let smi = smi_estimate(self)?;
        write_json(
            sidecar_path,
            &PsmiSidecar {
                kind: "psmi".into(),
                samples: self.values.len(),
                directions: self.directions,
                seed: self.seed,
                layer: self.layer_index,
                checkpoint: self.checkpoint_tag.clone(),
                smi: smi.value,
                smi_stderr: smi.stderr,
                direction_mi: self.direction_mi.clone(),
            },
        )
    }

    pub fn read(tensor_path: impl AsRef<Path>, sidecar_path: impl AsRef<Path>) -> Result<Self> {
        let t = read_tensor(tensor_path)?;
        if t.rank() != 2 || t.shape()[1] != 2 {
            return Err(Error::InvalidArgument(format!(
                "psmi tensor must be n x 2, found {:?}",
                t.shape()
            )));
        }
        let flat = t.to_f64();
        let sidecar: PsmiSidecar = read_json(sidecar_path)?;
        if sidecar.samples != flat.len() / 2 {
            return Err(Error::CountMismatch {
                left: sidecar.samples,
                right: flat.len() / 2,
            });
        }
        Ok(Self {
            values: flat.iter().step_by(2).copied().collect(),
            stderr: flat.iter().skip(1).step_by(2).copied().collect(),
            direction_mi: sidecar.direction_mi,
            directions: sidecar.directions,
            seed: sidecar.seed,
            layer_index: sidecar.layer,
            checkpoint_tag: sidecar.checkpoint,
        })
    }
}

struct ChunkAccumulator {
    sum: Vec<f64>,
    sum_sq: Vec<f64>,
    direction_mi: Vec<f64>,
}

/// `PSMI_i = (1/m) sum_j [log N(z_ij; m_{j,y_i}, s2_{j,y_i}) - log sum_c pi_c N(z_ij; m_{j,c}, s2_{j,c})]`.
pub fn psmi_scores(
    reps: &RepresentationSet,
    labels: &LabelSet,
    model: &SlicedGaussianModel,
) -> Result<PsmiScores> {
    check_alignment(reps, labels)?;
    if model.directions.dim() != reps.dim() {
        return Err(Error::DimensionMismatch {
            expected: model.directions.dim(),
            found: reps.dim(),
        });
    }
    if labels.class_count() > model.class_count {
        return Err(Error::DimensionMismatch {
            expected: model.class_count,
            found: labels.class_count(),
        });
    }
    if let Some(&l) = labels.labels().iter().find(|&&l| !model.is_fitted(l as usize)) {
        return Err(Error::InvalidArgument(format!("class {l} was not present when fitting")));
    }
    let n = reps.len();
    let m = model.direction_count();
    let y = labels.labels();
    let data = reps.data();
    let total = model.counts.iter().sum::<usize>();
    let loo = model.scope == FitScope::LeaveOneOut;
    if loo && total != n {
        return Err(Error::InvalidArgument(
            "leave-one-out scores require the fitting samples".into(),
        ));
    }

    let starts: Vec<usize> = (0..m).step_by(DIRECTION_CHUNK).collect();
    let chunks: Vec<ChunkAccumulator> = starts
        .par_iter()
        .map(|&start| {
            let end = (start + DIRECTION_CHUNK).min(m);
            let mut acc = ChunkAccumulator {
                sum: vec![0.0; n],
                sum_sq: vec![0.0; n],
                direction_mi: Vec::with_capacity(end - start),
            };
            let mut proj = vec![0.0; n];
            for j in start..end {
                project(data, model.directions.direction(j), &mut proj);
                let mut mi = 0.0;
                for i in 0..n {
                    let label = y[i] as usize;
                    let t = if loo {
                        model.direction_term_loo(j, proj[i], label, total)
                    } else {
                        model.direction_term(j, proj[i], label)
                    };
                    acc.sum[i] += t;
                    acc.sum_sq[i] += t * t;
                    mi += t;
                }
                acc.direction_mi.push(mi / n as f64);
            }
            acc
        })
        .collect();

    let mut sum = vec![0.0; n];
    let mut sum_sq = vec![0.0; n];
    let mut direction_mi = Vec::with_capacity(m);
    for chunk in chunks {
        for i in 0..n {
            sum[i] += chunk.sum[i];
            sum_sq[i] += chunk.sum_sq[i];
        }
        direction_mi.extend(chunk.direction_mi);
    }
    let mf = m as f64;
    let values: Vec<f64> = sum.iter().map(|s| s / mf).collect();
    let stderr = sum
        .iter()
        .zip(&sum_sq)
        .map(|(s, sq)| {
            if m < 2 {
                0.0
            } else {
                let var = ((sq - s * s / mf) / (mf - 1.0)).max(0.0);
                (var / mf).sqrt()
            }
        })
        .collect();
    if let Some(index) = values.iter().position(|v: &f64| !v.is_finite()) {
        return Err(Error::NonFinite { index });
    }
    Ok(PsmiScores {
        values,
        stderr,
        direction_mi,
        directions: m,
        seed: model.directions.seed(),
        layer_index: reps.layer_index(),
        checkpoint_tag: reps.checkpoint_tag().to_string(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SmiEstimate {
    /// Nats.
    pub value: f64,
    /// Standard error from the spread of per-direction mutual information.
    pub stderr: f64,
}

pub fn smi_estimate(scores: &PsmiScores) -> Result<SmiEstimate> {
    if scores.values.is_empty() {
        return Err(Error::InvalidArgument("no PSMI scores".into()));
    }
    let value = scores.values.iter().sum::<f64>() / scores.values.len() as f64;
    let m = scores.direction_mi.len();
    let stderr = if m < 2 {
        0.0
    } else {
        let mean = scores.direction_mi.iter().sum::<f64>() / m as f64;
        let var = scores
            .direction_mi
            .iter()
            .map(|v| (v - mean) * (v - mean))
            .sum::<f64>()
            / (m - 1) as f64;
        (var / m as f64).sqrt()
    };
    Ok(SmiEstimate { value, stderr })
}

/// Memorization prediction rule: flagged iff PSMI <= threshold.
pub fn psmi_predict(scores: &[f64], threshold: f64) -> Vec<bool> {
    scores.iter().map(|&s| s <= threshold).collect()
}

/// Convenience: sample directions, fit and score in one call.
pub fn estimate_psmi(
    reps: &RepresentationSet,
    labels: &LabelSet,
    directions: usize,
    seed: u64,
    scope: FitScope,
) -> Result<PsmiScores> {
    let dirs = super::sample_directions(reps.dim(), directions, seed)?;
    let model = fit_sliced_gaussians_with(reps, labels, &dirs, scope)?;
    psmi_scores(reps, labels, &model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::psmi::sample_directions;

    fn set(rows: &[&[f64]], labels: &[u32]) -> (RepresentationSet, LabelSet) {
        (
            RepresentationSet::new(Matrix::from_rows(rows).unwrap(), 1, "t", None).unwrap(),
            LabelSet::new(labels.to_vec(), None, None).unwrap(),
        )
    }

    fn unit_direction() -> DirectionSet {
        DirectionSet::from_matrix(Matrix::from_rows(&[[1.0]]).unwrap(), 0).unwrap()
    }

    #[test]
    fn degenerate_class_gets_floor() {
        let (reps, labels) = set(&[&[5.0], &[5.0], &[5.0], &[-1.0], &[1.0]], &[0, 0, 0, 1, 1]);
        let model = fit_sliced_gaussians(&reps, &labels, &unit_direction()).unwrap();
        assert_eq!(model.mean(0, 0), 5.0);
        assert_eq!(model.variance(0, 0), model.floor(0));
        assert!(model.floor(0) > 0.0);
    }

    #[test]
    fn two_per_class_hand_arithmetic() {
        let (reps, labels) = set(&[&[0.0], &[2.0], &[10.0], &[12.0]], &[0, 0, 1, 1]);
        let model = fit_sliced_gaussians(&reps, &labels, &unit_direction()).unwrap();
        assert_eq!(model.mean(0, 0), 1.0);
        assert_eq!(model.variance(0, 0), 2.0);
        assert_eq!(model.mean(0, 1), 11.0);
        assert_eq!(model.variance(0, 1), 2.0);
        assert!((model.prior(0) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn singleton_class_rejected() {
        let (reps, labels) = set(&[&[0.0], &[2.0], &[10.0]], &[0, 0, 1]);
        let err = fit_sliced_gaussians(&reps, &labels, &unit_direction()).unwrap_err();
        assert!(matches!(err, Error::ClassTooSmall { class: 1, .. }));
    }

    #[test]
    fn single_class_scores_are_exactly_zero() {
        let rows: Vec<Vec<f64>> = (0..20).map(|i| vec![i as f64, (i * i) as f64 * 0.1]).collect();
        let reps = RepresentationSet::new(Matrix::from_rows(&rows).unwrap(), 1, "t", None).unwrap();
        let labels = LabelSet::new(vec![0; 20], None, None).unwrap();
        let scores = estimate_psmi(&reps, &labels, 64, 1, FitScope::InSample).unwrap();
        assert!(scores.values().iter().all(|&v| v == 0.0));
        assert_eq!(smi_estimate(&scores).unwrap().value, 0.0);
    }

    #[test]
    fn symmetric_midpoint_has_zero_psmi() {
        // Classes mirrored around 0 in 1-D; the midpoint sample sits at 0.
        let (reps, labels) = set(
            &[&[-3.0], &[-1.0], &[1.0], &[3.0], &[0.0], &[0.0]],
            &[0, 0, 1, 1, 0, 1],
        );
        let model = fit_sliced_gaussians(&reps, &labels, &unit_direction()).unwrap();
        assert_eq!(model.variance(0, 0), model.variance(0, 1));
        let scores = psmi_scores(&reps, &labels, &model).unwrap();
        assert!(scores.values()[4].abs() < 1e-15);
        assert!(scores.values()[5].abs() < 1e-15);
    }

    #[test]
    fn predict_rule() {
        assert_eq!(psmi_predict(&[-0.1, 0.0, 0.2], 0.0), vec![true, true, false]);
        assert!(psmi_predict(&[-0.1, 0.0, 0.2], f64::INFINITY).iter().all(|&b| b));
        assert!(psmi_predict(&[-0.1, 0.0, 0.2], f64::NEG_INFINITY).iter().all(|&b| !b));
    }

    #[test]
    fn leave_one_out_matches_refit() {
        let rows: Vec<Vec<f64>> = (0..12)
            .map(|i| vec![(i as f64 * 0.37).sin() * 2.0 + (i % 2) as f64, (i as f64 * 1.3).cos()])
            .collect();
        let labels: Vec<u32> = (0..12).map(|i| (i % 2) as u32).collect();
        let reps = RepresentationSet::new(Matrix::from_rows(&rows).unwrap(), 1, "t", None).unwrap();
        let labels = LabelSet::new(labels, None, None).unwrap();
        let dirs = sample_directions(2, 5, 3).unwrap();
        let loo_model = fit_sliced_gaussians_with(&reps, &labels, &dirs, FitScope::LeaveOneOut).unwrap();
        let loo = psmi_scores(&reps, &labels, &loo_model).unwrap();
        for held in [0usize, 5, 11] {
            let keep: Vec<usize> = (0..12).filter(|&i| i != held).collect();
            let sub_reps = RepresentationSet::new(reps.data().select_rows(&keep), 1, "t", None).unwrap();
            let sub_labels = LabelSet::new(keep.iter().map(|&i| labels.labels()[i]).collect(), None, None).unwrap();
            let refit = fit_sliced_gaussians(&sub_reps, &sub_labels, &dirs).unwrap();
            let y = labels.labels()[held] as usize;
            let expected: f64 = (0..5)
                .map(|j| refit.direction_term(j, dot(reps.data().row(held), dirs.direction(j)), y))
                .sum::<f64>()
                / 5.0;
            assert!((loo.values()[held] - expected).abs() < 1e-10);
        }
    }

    #[test]
    fn scores_round_trip_on_disk() {
        let (reps, labels) = set(&[&[0.0], &[2.0], &[10.0], &[12.0], &[1.0]], &[0, 0, 1, 1, 1]);
        let scores = estimate_psmi(&reps, &labels, 3, 4, FitScope::InSample).unwrap();
        let dir = tempfile::tempdir().unwrap();
        scores.write(dir.path().join("p.mema"), dir.path().join("p.json")).unwrap();
        let back = PsmiScores::read(dir.path().join("p.mema"), dir.path().join("p.json")).unwrap();
        assert_eq!(back, scores);
    }
}
