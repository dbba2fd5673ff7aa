use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("bad magic in {0}")]
    BadMagic(PathBuf),

    #[error("unsupported tensor {what}: {value}")]
    Unsupported { what: &'static str, value: u64 },

    #[error("payload length mismatch: expected {expected} bytes, found {found}")]
    PayloadLength { expected: usize, found: usize },

    #[error("product(shape) > 0 violated for shape {0:?}")]
    EmptyShape(Vec<usize>),

    #[error("rank {0} exceeds the maximum of 3")]
    RankTooLarge(usize),

    #[error("non-finite value at flat index {index}")]
    NonFinite { index: usize },

    #[error("count mismatch: {left} vs {right}")]
    CountMismatch { left: usize, right: usize },

    #[error("label out of range: {label} with class count {class_count}")]
    LabelOutOfRange { label: u32, class_count: usize },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("class {class} has {count} samples, at least {required} required")]
    ClassTooSmall {
        class: usize,
        count: usize,
        required: usize,
    },

    #[error("insufficient in/out observations for samples {sample_ids:?}")]
    InsufficientObservations { sample_ids: Vec<usize> },

    #[error("quantile threshold undefined: ties span the cut at value {value}")]
    QuantileTie { value: f64 },

    #[error("median loss never decreased by {fraction} (final median {final_median}, baseline {baseline})")]
    CriterionNotReached {
        fraction: f64,
        baseline: f64,
        final_median: f64,
    },

    #[error("training diverged at step {step}")]
    Divergence { step: usize },

    #[error("shadow run for split {split_id} failed: {source}")]
    ShadowRun {
        split_id: u32,
        #[source]
        source: Box<Error>,
    },

    #[error("bisection not bracketed: f(lo) = {f_lo}, f(hi) = {f_hi}")]
    NotBracketed { f_lo: f64, f_hi: f64 },

    #[error("missing artifact: {0}")]
    MissingArtifact(String),

    #[error("unknown {kind} '{name}'")]
    UnknownName { kind: &'static str, name: String },

    #[error("manifest error: {0}")]
    Manifest(String),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("numerical failure: {0}")]
    Numerical(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short machine-readable tag for error reports.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Io { .. } => "io",
            Error::BadMagic(_) => "bad_magic",
            Error::Unsupported { .. } => "unsupported",
            Error::PayloadLength { .. } => "payload_length_mismatch",
            Error::EmptyShape(_) => "empty_shape",
            Error::RankTooLarge(_) => "rank_too_large",
            Error::NonFinite { .. } => "non_finite",
            Error::CountMismatch { .. } => "count_mismatch",
            Error::LabelOutOfRange { .. } => "label_out_of_range",
            Error::DimensionMismatch { .. } => "dimension_mismatch",
            Error::InvalidArgument(_) => "invalid_argument",
            Error::ClassTooSmall { .. } => "class_too_small",
            Error::InsufficientObservations { .. } => "insufficient_observations",
            Error::QuantileTie { .. } => "quantile_tie",
            Error::CriterionNotReached { .. } => "criterion_not_reached",
            Error::Divergence { .. } => "divergence",
            Error::ShadowRun { .. } => "shadow_run",
            Error::NotBracketed { .. } => "not_bracketed",
            Error::MissingArtifact(_) => "missing_artifact",
            Error::UnknownName { .. } => "unknown_name",
            Error::Manifest(_) => "manifest",
            Error::Json(_) => "json",
            Error::Numerical(_) => "numerical",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
