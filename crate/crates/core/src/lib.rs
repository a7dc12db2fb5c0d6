//! Sequential target-trial emulation with inverse probability weights for
//! missing eligibility data, a plasmode simulator of health-record cohorts,
//! and a Monte-Carlo benchmark harness.
//!
//! The numerical kernels (`glm`, `linalg`, `stats`) are generic over
//! [`scalar::Scalar`]; the aliases below fix the two supported precisions.

pub mod benchmark;
pub mod domain;
pub mod estimate;
pub mod expansion;
pub mod glm;
pub mod inference;
pub mod io;
pub mod linalg;
pub mod pipeline;
pub mod provenance;
pub mod scalar;
pub mod simulator;
pub mod spline;
pub mod stats;
pub mod terms;
pub mod weights;

pub use scalar::Scalar;

/// Double-precision design matrix, the precision used by the pipeline.
pub type Matrix = linalg::Matrix<f64>;
pub type Matrix32 = linalg::Matrix<f32>;
/// Double-precision logistic fit.
pub type GlmFit = glm::GlmFit<f64>;
pub type GlmFit32 = glm::GlmFit<f32>;
pub type Cholesky = linalg::Cholesky<f64>;
pub type Cholesky32 = linalg::Cholesky<f32>;
