//! The two regularizing operators: finite differences for total variation and
//! the nonlocal-means weight operator.

pub mod difference;
pub mod nonlocal;

pub use difference::{apply_d, apply_dt, DifferenceField};
pub use nonlocal::{
    apply_w, compute_weights, nonlocal_residual, raw_similarity, NlmParams, NonlocalWeights,
    SelfWeight,
};
