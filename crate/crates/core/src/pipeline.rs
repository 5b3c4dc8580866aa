//! End-to-end fit: null MLE, threshold, penalized fit, maximum-likelihood refit.

use serde::{Deserialize, Serialize};

use crate::error::{QutError, Result};
use crate::model::{ProblemInstance, SparseFit, ThresholdResult};
use crate::qut::{compute_qut, DesignMode, NullSampler, NullStatistic, DEFAULT_ALPHA, DEFAULT_MC_SAMPLES};
use crate::rng::derive_seed;
use crate::solvers::{glm_lasso_fit, lasso_fit, mle_refit, null_mle, sqrt_lasso_fit, NullMle, SolverConfig};
use crate::variance::{sigma2_refitted_qut, RefittedQutOptions, VarianceEstimate};
use crate::zerothresh::PenaltySpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum FitPenalty {
    #[default]
    Lasso,
    SqrtLasso,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SigmaChoice {
    Known(f64),
    /// Refitted-QUT estimate when the instance carries no noise level.
    #[default]
    Estimate,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PipelineOptions {
    pub alpha: f64,
    pub mc_samples: usize,
    pub seed: u64,
    pub design_mode: DesignMode,
    pub penalty: FitPenalty,
    pub sigma: SigmaChoice,
    /// Fit at this penalty instead of the Monte Carlo threshold.
    pub lambda: Option<f64>,
    pub refit: bool,
    pub variance_tol: f64,
}

impl Default for PipelineOptions {
    fn default() -> Self {
        Self {
            alpha: DEFAULT_ALPHA,
            mc_samples: DEFAULT_MC_SAMPLES,
            seed: 0,
            design_mode: DesignMode::Fixed,
            penalty: FitPenalty::Lasso,
            sigma: SigmaChoice::Estimate,
            lambda: None,
            refit: true,
            variance_tol: 1e-4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineReport {
    pub threshold: Option<ThresholdResult>,
    pub lambda: f64,
    /// Constrained null MLE of the unpenalized coefficients on the data.
    pub null_beta0: Vec<f64>,
    pub sigma2: Option<f64>,
    pub variance: Option<VarianceEstimate>,
    pub penalized: SparseFit,
    pub refit: Option<SparseFit>,
    /// Why the refit was not produced; the penalized fit stands in.
    pub refit_error: Option<String>,
}

impl PipelineReport {
    /// The refit when available, otherwise the penalized fit.
    pub fn final_fit(&self) -> &SparseFit {
        self.refit.as_ref().unwrap_or(&self.penalized)
    }
}

fn threshold(sampler: NullSampler, stat: NullStatistic, opts: &PipelineOptions) -> Result<ThresholdResult> {
    let t = compute_qut(&sampler.with_design_mode(opts.design_mode), &stat, opts.alpha, opts.mc_samples)?;
    if !t.is_finite() {
        return Err(QutError::QuantileInfinite { infinite_fraction: t.infinite_fraction });
    }
    Ok(t)
}

/// Threshold, fit and refit for any family. Gaussian lasso needs a noise
/// level: a known value, the instance's own, or the refitted-QUT estimate.
pub fn qut_pipeline(inst: &ProblemInstance, opts: &PipelineOptions) -> Result<PipelineReport> {
    let family = inst.family();
    let cfg = SolverConfig::for_family(family);
    let null_beta0 = match null_mle(inst, &cfg)? {
        NullMle::Found { beta0, .. } => beta0,
        NullMle::NonExistent => return Err(QutError::OutsideDomain),
    };
    let qut_seed = derive_seed(opts.seed, 11);
    let mut variance = None;
    let mut sigma2 = None;
    let (thresh, penalized) = if family.is_gaussian() {
        match opts.penalty {
            FitPenalty::Lasso => {
                let sigma = match (opts.sigma, inst.sigma()) {
                    (SigmaChoice::Known(s), _) => s,
                    (SigmaChoice::Estimate, Some(s)) => s,
                    (SigmaChoice::Estimate, None) => {
                        let est = sigma2_refitted_qut(
                            inst,
                            &RefittedQutOptions {
                                alpha: opts.alpha,
                                mc_samples: opts.mc_samples,
                                tol: opts.variance_tol,
                                seed: derive_seed(opts.seed, 12),
                                ..Default::default()
                            },
                        )?;
                        let s = est.sigma2.sqrt();
                        variance = Some(est);
                        s
                    }
                };
                sigma2 = Some(sigma * sigma);
                let t = match opts.lambda {
                    Some(_) => None,
                    None => Some(threshold(
                        NullSampler::new(inst, qut_seed).with_sigma(sigma)?.with_intercept_beta0(null_beta0.clone())?,
                        NullStatistic::Penalty(PenaltySpec::Lasso),
                        opts,
                    )?),
                };
                let lambda = opts.lambda.or(t.as_ref().map(|t| t.lambda_qut)).expect("threshold or override");
                (t, lasso_fit(inst, lambda, &cfg)?)
            }
            FitPenalty::SqrtLasso => {
                let t = match opts.lambda {
                    Some(_) => None,
                    None => Some(threshold(
                        NullSampler::new(inst, qut_seed),
                        NullStatistic::Penalty(PenaltySpec::SqrtLasso),
                        opts,
                    )?),
                };
                let lambda = opts.lambda.or(t.as_ref().map(|t| t.lambda_qut)).expect("threshold or override");
                (t, sqrt_lasso_fit(inst, lambda, &cfg)?)
            }
        }
    } else {
        if opts.penalty != FitPenalty::Lasso {
            return Err(QutError::IncompatiblePenalty("the square-root lasso is defined for Gaussian responses".into()));
        }
        let t = match opts.lambda {
            Some(_) => None,
            None => Some(threshold(
                NullSampler::new(inst, qut_seed).with_intercept_beta0(null_beta0.clone())?,
                NullStatistic::Glm,
                opts,
            )?),
        };
        let lambda = opts.lambda.or(t.as_ref().map(|t| t.lambda_qut)).expect("threshold or override");
        (t, glm_lasso_fit(inst, lambda, &cfg)?)
    };

    let (refit, refit_error) = if opts.refit {
        match mle_refit(inst, &penalized.support, &cfg) {
            Ok(f) => (Some(f), None),
            Err(e) => (None, Some(e.to_string())),
        }
    } else {
        (None, None)
    };
    Ok(PipelineReport {
        lambda: penalized.lambda,
        threshold: thresh,
        null_beta0,
        sigma2,
        variance,
        penalized,
        refit,
        refit_error,
    })
}

/// GLM form of the pipeline with the default options otherwise.
pub fn qut_pipeline_glm(inst: &ProblemInstance, alpha: f64, mc_samples: usize, seed: u64) -> Result<(ThresholdResult, SparseFit)> {
    let report = qut_pipeline(inst, &PipelineOptions { alpha, mc_samples, seed, ..Default::default() })?;
    let fit = report.final_fit().clone();
    Ok((report.threshold.expect("threshold computed"), fit))
}
