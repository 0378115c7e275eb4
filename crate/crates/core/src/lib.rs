//! Compressive-sensing image recovery by total variation plus a nonlocal-means
//! regularizer, solved with an augmented-Lagrangian alternating-direction scheme.
//!
//! The pipeline is:
//!
//! 1. [`image_io`] loads a grayscale image normalized to `[0, 1]`.
//! 2. [`sensing`] draws a seeded dense Gaussian operator `A` and measures `b = A u`.
//! 3. [`solver::recover`] reconstructs `u` from `b`, alternating a shrinkage step on
//!    the difference field, a steepest-descent step on `u`, and a nonlocal-means
//!    smoothing step on the split copy `x`.
//! 4. [`bench`] runs grids of images, ratios and seeds against the TV-only baseline
//!    (`alpha = 0`) and writes CSV.

pub mod bench;
pub mod cli;
pub mod error;
pub mod image_io;
pub mod regularizers;
pub mod sensing;
pub mod solver;

pub use error::{Error, Result};
pub use image_io::Image;
pub use regularizers::{DifferenceField, NlmParams, NonlocalWeights};
pub use sensing::{MeasurementOperator, Measurements};
pub use solver::{recover, RecoveryResult, SolverParams};

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm_sq(a: &[f64]) -> f64 {
    dot(a, a)
}
