//! Optimizers whose zero sets the zero-thresholding catalogue describes.

use serde::{Deserialize, Serialize};

use crate::error::{QutError, Result};

mod glm;
mod lasso;
mod mle;
mod sqrt_lasso;
mod svd;
mod tv1d;

pub use glm::{glm_lasso_fit, glm_lasso_fit_from, glm_lasso_objective, glm_kkt_residual, GlmLasso};
pub use lasso::{lasso_fit, lasso_fit_warm, lasso_objective, lasso_path, GaussianLasso};
pub use mle::{mle_refit, null_mle, NullMle};
pub use sqrt_lasso::{sqrt_lasso_fit, sqrt_lasso_objective};
pub use svd::svd_soft_threshold;
pub use tv1d::{total_variation, tv1d_fit};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    /// Target for the subgradient optimality residual.
    pub conv_tol: f64,
    /// Cap on coordinate-descent sweeps.
    pub max_iter: usize,
    pub z_tol: f64,
    pub line_search_shrink: f64,
    /// Cap on outer Newton steps for likelihood problems.
    pub max_newton: usize,
    /// Coefficients beyond this magnitude signal a non-existent estimate.
    pub divergence_cap: f64,
    /// Standardize penalized columns before fitting and back-transform.
    pub standardize: bool,
}

impl SolverConfig {
    pub fn gaussian() -> Self {
        Self {
            conv_tol: 1e-8,
            max_iter: 100_000,
            z_tol: crate::model::Z_TOL,
            line_search_shrink: 0.5,
            max_newton: 100,
            divergence_cap: 1e6,
            standardize: false,
        }
    }

    pub fn glm() -> Self {
        Self { conv_tol: 1e-7, ..Self::gaussian() }
    }

    pub fn for_family(family: crate::model::GlmFamily) -> Self {
        if family.is_gaussian() {
            Self::gaussian()
        } else {
            Self::glm()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.conv_tol > 0.0) || self.max_iter == 0 || self.max_newton == 0 {
            return Err(QutError::InvalidInput("solver tolerances and iteration caps must be positive".into()));
        }
        if !(self.line_search_shrink > 0.0 && self.line_search_shrink < 1.0) {
            return Err(QutError::InvalidInput("line-search shrink factor must lie in (0, 1)".into()));
        }
        Ok(())
    }
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self::gaussian()
    }
}

#[inline]
pub(crate) fn soft_threshold(z: f64, t: f64) -> f64 {
    if z > t {
        z - t
    } else if z < -t {
        z + t
    } else {
        0.0
    }
}

/// Distance from `grad` to `lambda * d|beta|`.
#[inline]
pub(crate) fn l1_stationarity_gap(grad: f64, beta: f64, lambda: f64) -> f64 {
    if beta > 0.0 {
        (grad - lambda).abs()
    } else if beta < 0.0 {
        (grad + lambda).abs()
    } else {
        (grad.abs() - lambda).max(0.0)
    }
}
