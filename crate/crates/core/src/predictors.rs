//! Memorization predictors, selectable by name.
//!
//! Every predictor returns [`PredictorScores`] with a declared orientation;
//! [`PredictorScores::oriented`] always treats larger values as more likely
//! memorized.

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::datastore::{read_json, read_tensor, write_json, write_tensor, DType, LabelSet, RepresentationSet, Tensor};
use crate::error::{Error, Result};
use crate::lira::{local_lira_score, logit_gap, LiraConfig, ShadowSuite};
use crate::matrix::Matrix;
use crate::psmi::{estimate_psmi, FitScope, DEFAULT_DIRECTIONS};
use crate::stats::log_sum_exp;

pub const DEFAULT_PCA_DIM: usize = 500;
/// Covariance ridge, relative to the mean PCA-space variance.
pub const MAHALANOBIS_RIDGE: f64 = 1e-6;

/// Logits of one checkpoint.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitRecord {
    logits: Matrix,
    checkpoint_tag: String,
    sample_ids: Vec<u64>,
}

impl LogitRecord {
    pub fn new(logits: Matrix, checkpoint_tag: impl Into<String>, sample_ids: Option<Vec<u64>>) -> Result<Self> {
        if let Some(index) = logits.first_non_finite() {
            return Err(Error::NonFinite { index });
        }
        let sample_ids = sample_ids.unwrap_or_else(|| (0..logits.rows() as u64).collect());
        if sample_ids.len() != logits.rows() {
            return Err(Error::CountMismatch {
                left: logits.rows(),
                right: sample_ids.len(),
            });
        }
        Ok(Self {
            logits,
            checkpoint_tag: checkpoint_tag.into(),
            sample_ids,
        })
    }

    pub fn logits(&self) -> &Matrix {
        &self.logits
    }

    pub fn checkpoint_tag(&self) -> &str {
        &self.checkpoint_tag
    }

    pub fn sample_ids(&self) -> &[u64] {
        &self.sample_ids
    }

    fn check(&self, labels: &LabelSet) -> Result<()> {
        if self.logits.rows() != labels.len() {
            return Err(Error::CountMismatch {
                left: self.logits.rows(),
                right: labels.len(),
            });
        }
        if self.logits.cols() != labels.class_count() {
            return Err(Error::DimensionMismatch {
                expected: labels.class_count(),
                found: self.logits.cols(),
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Orientation {
    HigherMeansMemorized,
    LowerMeansMemorized,
}

impl Orientation {
    pub fn flipped(self) -> Self {
        match self {
            Self::HigherMeansMemorized => Self::LowerMeansMemorized,
            Self::LowerMeansMemorized => Self::HigherMeansMemorized,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ScoresSidecar {
    name: String,
    orientation: Orientation,
    samples: usize,
    provenance: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictorScores {
    name: String,
    raw: Vec<f64>,
    orientation: Orientation,
    provenance: BTreeMap<String, String>,
}

impl PredictorScores {
    pub fn new(name: impl Into<String>, raw: Vec<f64>, orientation: Orientation) -> Result<Self> {
        if let Some(index) = raw.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        Ok(Self {
            name: name.into(),
            raw,
            orientation,
            provenance: BTreeMap::new(),
        })
    }

    pub fn with_provenance(mut self, key: &str, value: impl ToString) -> Self {
        self.provenance.insert(key.to_string(), value.to_string());
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn raw(&self) -> &[f64] {
        &self.raw
    }

    pub fn orientation(&self) -> Orientation {
        self.orientation
    }

    pub fn provenance(&self) -> &BTreeMap<String, String> {
        &self.provenance
    }

    pub fn len(&self) -> usize {
        self.raw.len()
    }

    pub fn is_empty(&self) -> bool {
        self.raw.is_empty()
    }

    /// Scores where larger means more likely memorized.
    pub fn oriented(&self) -> Vec<f64> {
        match self.orientation {
            Orientation::HigherMeansMemorized => self.raw.clone(),
            Orientation::LowerMeansMemorized => self.raw.iter().map(|v| -v).collect(),
        }
    }

    /// Same ranking, opposite sign convention.
    pub fn flipped(&self) -> Self {
        Self {
            raw: self.raw.iter().map(|v| -v).collect(),
            orientation: self.orientation.flipped(),
            ..self.clone()
        }
    }

    /// Writes `<stem>.mema` (raw scores) and `<stem>.json`.
    pub fn write(&self, dir: &Path, stem: &str) -> Result<()> {
        let t = Tensor::from_f64(vec![self.raw.len()], &self.raw, DType::F64)?;
        write_tensor(dir.join(format!("{stem}.mema")), &t)?;
        write_json(
            dir.join(format!("{stem}.json")),
            &ScoresSidecar {
                name: self.name.clone(),
                orientation: self.orientation,
                samples: self.raw.len(),
                provenance: self.provenance.clone(),
            },
        )
    }

    pub fn read(dir: &Path, stem: &str) -> Result<Self> {
        let raw = read_tensor(dir.join(format!("{stem}.mema")))?.to_f64();
        let side: ScoresSidecar = read_json(dir.join(format!("{stem}.json")))?;
        if side.samples != raw.len() {
            return Err(Error::CountMismatch {
                left: raw.len(),
                right: side.samples,
            });
        }
        Ok(Self {
            provenance: side.provenance,
            ..Self::new(side.name, raw, side.orientation)?
        })
    }
}

/// Cross-entropy of each sample; higher means memorized.
pub fn loss_scores(logits: &LogitRecord, labels: &LabelSet) -> Result<PredictorScores> {
    logits.check(labels)?;
    let raw = logits
        .logits
        .iter_rows()
        .zip(labels.labels())
        .map(|(row, &y)| log_sum_exp(row) - row[y as usize])
        .collect();
    PredictorScores::new("loss", raw, Orientation::HigherMeansMemorized)
}

/// Negated logit gap, so a small or negative gap scores high.
pub fn logit_gap_scores(logits: &LogitRecord, labels: &LabelSet) -> Result<PredictorScores> {
    if labels.class_count() < 2 {
        return Err(Error::InvalidArgument("logit gap needs at least 2 classes".into()));
    }
    logits.check(labels)?;
    let raw = logits
        .logits
        .iter_rows()
        .zip(labels.labels())
        .map(|(row, &y)| -logit_gap(row, y as usize))
        .collect();
    PredictorScores::new("logit_gap", raw, Orientation::HigherMeansMemorized)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MahalanobisOptions {
    pub pca_dim: usize,
    /// Score each point against the mean and covariance of the others.
    pub exclude_self: bool,
}

impl Default for MahalanobisOptions {
    fn default() -> Self {
        Self {
            pca_dim: DEFAULT_PCA_DIM,
            exclude_self: false,
        }
    }
}

/// Mahalanobis distance to the data mean in the top principal components.
pub fn mahalanobis_scores(reps: &RepresentationSet, options: &MahalanobisOptions) -> Result<PredictorScores> {
    let x = reps.data();
    let (n, d) = (x.rows(), x.cols());
    if n < 3 {
        return Err(Error::InvalidArgument(format!("Mahalanobis scores need n >= 3, got {n}")));
    }
    if options.exclude_self && n < 4 {
        return Err(Error::InvalidArgument("exclude-self scoring needs n >= 4".into()));
    }
    let q = options.pca_dim.min(d).min(n - 1).max(1);
    let mut centered = DMatrix::from_row_slice(n, d, x.as_slice());
    for j in 0..d {
        let m = centered.column(j).mean();
        centered.column_mut(j).add_scalar_mut(-m);
    }
    let cov = centered.transpose() * &centered / (n - 1) as f64;
    if cov.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("non-finite covariance".into()));
    }
    if cov.trace() == 0.0 {
        return PredictorScores::new("mahalanobis", vec![0.0; n], Orientation::HigherMeansMemorized);
    }
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let mut basis = DMatrix::zeros(d, q);
    for (k, &c) in order[..q].iter().enumerate() {
        let mut v = eig.eigenvectors.column(c).into_owned();
        let lead = v.iter().copied().fold(0.0f64, |a, b| if b.abs() > a.abs() { b } else { a });
        if lead < 0.0 {
            v.neg_mut();
        }
        basis.set_column(k, &v);
    }
    let z = &centered * &basis;
    let sigma = z.transpose() * &z / (n - 1) as f64;
    let lambda = MAHALANOBIS_RIDGE * sigma.trace() / q as f64;
    let nf = n as f64;
    let (scale, c, k2) = if options.exclude_self {
        (
            (nf - 1.0) / (nf - 2.0),
            nf / ((nf - 1.0) * (nf - 2.0)),
            (nf / (nf - 1.0)).powi(2),
        )
    } else {
        (1.0, 0.0, 1.0)
    };
    let a = sigma * scale + DMatrix::identity(q, q) * lambda;
    let chol = a
        .cholesky()
        .ok_or_else(|| Error::Numerical("regularized covariance is not positive definite".into()))?;
    let raw = (0..n)
        .map(|i| {
            let v: DVector<f64> = z.row(i).transpose();
            let b = v.dot(&chol.solve(&v));
            let d2 = if options.exclude_self { k2 * b / (1.0 - c * b) } else { b };
            d2.max(0.0).sqrt()
        })
        .collect();
    PredictorScores::new("mahalanobis", raw, Orientation::HigherMeansMemorized)
}

/// Log-LiRA of the target model at a partially trained checkpoint.
pub fn early_memorization_scores(
    suite: &ShadowSuite,
    checkpoint: usize,
    config: &LiraConfig,
) -> Result<PredictorScores> {
    let s = local_lira_score(suite, suite.target_split(), checkpoint, config)?;
    Ok(
        PredictorScores::new("early_memorization", s.scores, Orientation::HigherMeansMemorized)?
            .with_provenance("checkpoint_epoch", s.checkpoint_epoch),
    )
}

/// Artifacts a predictor may draw on; all per-sample inputs are aligned with
/// `labels`.
#[derive(Clone, Copy)]
pub struct PredictorInputs<'a> {
    pub labels: &'a LabelSet,
    pub logits: Option<&'a LogitRecord>,
    pub representations: Option<&'a RepresentationSet>,
    /// Shadow suite and checkpoint index; the labels must then be those of
    /// the target model's training members in index order.
    pub shadows: Option<(&'a ShadowSuite, usize)>,
}

impl<'a> PredictorInputs<'a> {
    fn logits(&self) -> Result<&'a LogitRecord> {
        self.logits.ok_or_else(|| Error::MissingArtifact("logits".into()))
    }

    fn representations(&self) -> Result<&'a RepresentationSet> {
        self.representations
            .ok_or_else(|| Error::MissingArtifact("representations".into()))
    }
}

pub trait MemorizationPredictor: Send + Sync {
    fn name(&self) -> &str;

    /// Whether scores depend on the layer of the representations.
    fn uses_representations(&self) -> bool {
        false
    }

    fn score(&self, inputs: &PredictorInputs) -> Result<PredictorScores>;
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PsmiPredictor {
    pub directions: usize,
    pub seed: u64,
    pub scope: FitScope,
}

impl Default for PsmiPredictor {
    fn default() -> Self {
        Self {
            directions: DEFAULT_DIRECTIONS,
            seed: 0,
            scope: FitScope::InSample,
        }
    }
}

impl MemorizationPredictor for PsmiPredictor {
    fn name(&self) -> &str {
        "psmi"
    }

    fn uses_representations(&self) -> bool {
        true
    }

    fn score(&self, inputs: &PredictorInputs) -> Result<PredictorScores> {
        let reps = inputs.representations()?;
        let s = estimate_psmi(reps, inputs.labels, self.directions, self.seed, self.scope)?;
        Ok(
            PredictorScores::new("psmi", s.values().to_vec(), Orientation::LowerMeansMemorized)?
                .with_provenance("directions", self.directions)
                .with_provenance("seed", self.seed)
                .with_provenance("layer", reps.layer_index())
                .with_provenance("checkpoint", reps.checkpoint_tag()),
        )
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct LossPredictor;

impl MemorizationPredictor for LossPredictor {
    fn name(&self) -> &str {
        "loss"
    }

    fn score(&self, inputs: &PredictorInputs) -> Result<PredictorScores> {
        loss_scores(inputs.logits()?, inputs.labels)
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct LogitGapPredictor;

impl MemorizationPredictor for LogitGapPredictor {
    fn name(&self) -> &str {
        "logit_gap"
    }

    fn score(&self, inputs: &PredictorInputs) -> Result<PredictorScores> {
        logit_gap_scores(inputs.logits()?, inputs.labels)
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct MahalanobisPredictor {
    pub options: MahalanobisOptions,
}

impl MemorizationPredictor for MahalanobisPredictor {
    fn name(&self) -> &str {
        "mahalanobis"
    }

    fn uses_representations(&self) -> bool {
        true
    }

    fn score(&self, inputs: &PredictorInputs) -> Result<PredictorScores> {
        let reps = inputs.representations()?;
        if reps.len() != inputs.labels.len() {
            return Err(Error::CountMismatch {
                left: reps.len(),
                right: inputs.labels.len(),
            });
        }
        mahalanobis_scores(reps, &self.options)
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct EarlyMemorizationPredictor {
    pub config: LiraConfig,
}

impl MemorizationPredictor for EarlyMemorizationPredictor {
    fn name(&self) -> &str {
        "early_memorization"
    }

    fn score(&self, inputs: &PredictorInputs) -> Result<PredictorScores> {
        let (suite, checkpoint) = inputs
            .shadows
            .ok_or_else(|| Error::MissingArtifact("shadow observations".into()))?;
        let s = early_memorization_scores(suite, checkpoint, &self.config)?;
        if s.len() != inputs.labels.len() {
            return Err(Error::CountMismatch {
                left: s.len(),
                right: inputs.labels.len(),
            });
        }
        Ok(s)
    }
}

/// Predictors addressable by name.
pub struct PredictorRegistry {
    entries: BTreeMap<String, Box<dyn MemorizationPredictor>>,
}

impl Default for PredictorRegistry {
    fn default() -> Self {
        Self::with_settings(PsmiPredictor::default(), MahalanobisOptions::default(), LiraConfig::default())
    }
}

impl PredictorRegistry {
    pub fn empty() -> Self {
        Self {
            entries: BTreeMap::new(),
        }
    }

    /// The five standard predictors with the given settings.
    pub fn with_settings(psmi: PsmiPredictor, mahalanobis: MahalanobisOptions, lira: LiraConfig) -> Self {
        let mut r = Self::empty();
        r.register(Box::new(psmi));
        r.register(Box::new(LossPredictor));
        r.register(Box::new(LogitGapPredictor));
        r.register(Box::new(MahalanobisPredictor { options: mahalanobis }));
        r.register(Box::new(EarlyMemorizationPredictor { config: lira }));
        r
    }

    /// Adds or replaces a predictor under its own name.
    pub fn register(&mut self, predictor: Box<dyn MemorizationPredictor>) {
        self.entries.insert(predictor.name().to_string(), predictor);
    }

    pub fn names(&self) -> Vec<&str> {
        self.entries.keys().map(String::as_str).collect()
    }

    pub fn get(&self, name: &str) -> Result<&dyn MemorizationPredictor> {
        self.entries
            .get(name)
            .map(|b| b.as_ref())
            .ok_or_else(|| Error::UnknownName {
                kind: "predictor",
                name: name.to_string(),
            })
    }
}
