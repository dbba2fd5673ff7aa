//! Pointwise sliced mutual information between representations and labels.
//!
//! Each random direction gets a per-class Gaussian fit of the projected
//! representations; a sample's PSMI is the average over directions of
//! `log p(z | y) - log p(z)`, with `p(z)` the prior-weighted mixture.

mod bound;
mod directions;
mod estimator;

pub use bound::{
    binary_entropy_nats, incomplete_beta, separation_gamma, smi_lower_bound, BoundOptions,
    SeparationSource, SsmSeparationCertificate,
};
pub use directions::{sample_directions, DirectionSet};
pub use estimator::{
    estimate_psmi, fit_sliced_gaussians, fit_sliced_gaussians_with, psmi_predict, psmi_scores,
    smi_estimate, FitScope, PsmiScores, SlicedGaussianModel, SmiEstimate, VARIANCE_FLOOR_SCALE,
};

/// Direction count used unless configured otherwise.
pub const DEFAULT_DIRECTIONS: usize = 2000;
