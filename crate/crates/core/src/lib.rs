//! Quantile universal thresholds for sparse estimators.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cv;
pub mod error;
pub mod linalg;
pub mod model;
pub mod pipeline;
pub mod qut;
pub mod rng;
pub mod simlab;
pub mod solvers;
pub mod variance;
pub mod zerothresh;

pub use error::{QutError, Result};
pub use model::{family_mean, support_of, GlmFamily, ProblemInstance, SparseFit, SupportMetrics, ThresholdResult, Z_TOL};
pub use solvers::SolverConfig;
pub use zerothresh::{lambda0, lambda0_glm, lambda0_matrix, membership_d, PenaltySpec};
