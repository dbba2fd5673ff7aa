//! Synthetic two-class data, a small MLP classifier and the shadow-model suite
//! trained on it.

mod classifier;
mod shadow;
mod mixture;

pub use classifier::{
    checkpoint_epoch, checkpoint_tag, cross_entropy, gradient_check, random_batch,
    train_classifier, CheckpointRecord, Forward, Gradient, GradientCheck, TinyClassifier,
    TrainConfig, TrainRun, FD_STEP, RELATIVE_FLOOR,
};
pub use mixture::{
    gaussian_draws, sample_mixture, ClassMixture, OutlierLaw, OutlierLawRegistry,
    PreparedMixture, MixtureConfig, MixtureSample, WideGaussian,
};
pub use shadow::{
    run_gaps, run_shadow_suite, shadow_train_seed, train_shadow, ShadowConfig, ShadowOutput,
};
