use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::cv::{cv_lasso, CvOptions};
use crate::error::{QutError, Result};
use crate::model::ProblemInstance;
use crate::pipeline::{qut_pipeline, FitPenalty, PipelineOptions, SigmaChoice};
use crate::qut::{DesignMode, DEFAULT_ALPHA, DEFAULT_MC_SAMPLES};
use crate::rng::derive_seed;
use crate::solvers::{glm_lasso_fit, lasso_fit, mle_refit, SolverConfig};

/// Tuning rules compared in the simulations. `Oracle` only makes sense
/// for path-based metrics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    QutLasso,
    QutSqrtLasso,
    CvMin,
    Cv1se,
    Oracle,
}

impl Method {
    pub const FITTING: [Method; 4] = [Method::QutLasso, Method::QutSqrtLasso, Method::CvMin, Method::Cv1se];

    pub fn name(&self) -> &'static str {
        match self {
            Method::QutLasso => "qut-lasso",
            Method::QutSqrtLasso => "qut-sqrt-lasso",
            Method::CvMin => "cv-min",
            Method::Cv1se => "cv-1se",
            Method::Oracle => "oracle",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = QutError;

    fn from_str(s: &str) -> Result<Self> {
        [Method::QutLasso, Method::QutSqrtLasso, Method::CvMin, Method::Cv1se, Method::Oracle]
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| QutError::InvalidInput(format!("unknown method '{s}'")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MethodSettings {
    pub alpha: f64,
    pub mc_samples: usize,
    pub cv_folds: usize,
    pub variance_tol: f64,
    /// Known noise level for Gaussian data; estimated when absent.
    pub sigma: Option<f64>,
    pub design_mode: DesignMode,
}

impl Default for MethodSettings {
    fn default() -> Self {
        Self {
            alpha: DEFAULT_ALPHA,
            mc_samples: DEFAULT_MC_SAMPLES,
            cv_folds: 10,
            variance_tol: 1e-4,
            sigma: None,
            design_mode: DesignMode::Fixed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodOutcome {
    pub lambda: f64,
    /// Support of the penalized fit.
    pub support: Vec<usize>,
    /// Coefficients used for prediction: the refit when one was made.
    pub beta0: Vec<f64>,
    pub beta: Vec<f64>,
    pub sigma2: Option<f64>,
    pub refit_failed: bool,
}

/// Runs one tuning rule. QUT and CV-min are refitted by maximum
/// likelihood on the selected support; CV-1se keeps the penalized fit.
pub fn run_method(inst: &ProblemInstance, method: Method, settings: &MethodSettings, seed: u64) -> Result<MethodOutcome> {
    let cfg = SolverConfig::for_family(inst.family());
    match method {
        Method::QutLasso | Method::QutSqrtLasso => {
            let opts = PipelineOptions {
                alpha: settings.alpha,
                mc_samples: settings.mc_samples,
                seed,
                design_mode: settings.design_mode,
                penalty: if method == Method::QutLasso { FitPenalty::Lasso } else { FitPenalty::SqrtLasso },
                sigma: settings.sigma.map_or(SigmaChoice::Estimate, SigmaChoice::Known),
                lambda: None,
                refit: true,
                variance_tol: settings.variance_tol,
            };
            let report = qut_pipeline(inst, &opts)?;
            let fit = report.final_fit();
            Ok(MethodOutcome {
                lambda: report.lambda,
                support: report.penalized.support.clone(),
                beta0: fit.beta0.clone(),
                beta: fit.beta.clone(),
                sigma2: report.sigma2,
                refit_failed: report.refit.is_none(),
            })
        }
        Method::CvMin | Method::Cv1se => {
            let cv = cv_lasso(
                inst,
                &CvOptions { folds: settings.cv_folds, seed: derive_seed(seed, 21), ..Default::default() },
                &cfg,
            )?;
            let lambda = if method == Method::CvMin { cv.lambda_min() } else { cv.lambda_1se() };
            let fit = if inst.family().is_gaussian() { lasso_fit(inst, lambda, &cfg)? } else { glm_lasso_fit(inst, lambda, &cfg)? };
            let (refit, refit_failed) = if method == Method::CvMin {
                match mle_refit(inst, &fit.support, &cfg) {
                    Ok(r) => (Some(r), false),
                    Err(_) => (None, true),
                }
            } else {
                (None, false)
            };
            let used = refit.as_ref().unwrap_or(&fit);
            Ok(MethodOutcome {
                lambda,
                support: fit.support.clone(),
                beta0: used.beta0.clone(),
                beta: used.beta.clone(),
                sigma2: None,
                refit_failed,
            })
        }
        Method::Oracle => Err(QutError::InvalidInput("the oracle is only defined along a path".into())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_round_trip() {
        for m in [Method::QutLasso, Method::QutSqrtLasso, Method::CvMin, Method::Cv1se, Method::Oracle] {
            assert_eq!(m.name().parse::<Method>().unwrap(), m);
        }
        assert!("nope".parse::<Method>().is_err());
    }
}
