//! Cauchy–Schwarz divergence estimators, closed forms, conditional two-sample
//! tests and a small domain-adaptation trainer.

pub mod autodiff;
pub mod closed_forms;
pub mod divergences;
pub mod error;
pub mod kernel;
pub mod rng;
pub mod sweeps;
pub mod uda;

pub use divergences::{
    ccs_estimate, ckl_chain_estimate, class_cmmd_estimate, cmmd_estimate, cs_estimate, kl_knn_estimate,
    mmd_sq_estimate, DivergenceReport, Estimate, EstimateFlag, EstimatorKind, LabeledDomain,
};
pub use error::{Error, Result};
pub use kernel::{GramMatrix, KernelSpec, SampleMatrix};
