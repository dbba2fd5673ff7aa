//! Predicting which training samples a classifier memorizes, from the
//! geometry of its early representations.

pub mod datastore;
pub mod error;
pub mod eval;
pub mod layout;
pub mod lira;
pub mod matrix;
pub mod pipeline;
pub mod predictors;
pub mod psmi;
pub mod rng;
pub mod stats;
pub mod synthetic;

pub use error::{Error, Result};
pub use matrix::Matrix;
