use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::metrics::{summarize, support_metrics};
use super::methods::MethodSettings;
use super::rep_seed;
use super::scenario::{generate_scenario, ScenarioSpec, TRUE_INTERCEPT};
use crate::error::{QutError, Result};
use crate::model::ProblemInstance;
use crate::pipeline::{qut_pipeline, PipelineOptions};
use crate::qut::{compute_qut, NullSampler, NullStatistic};
use crate::solvers::{glm_lasso_fit, SolverConfig};

/// Source of the intercept fed to the null sampler.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InterceptArm {
    /// The true intercept.
    Oracle,
    /// Null MLE on the observed response.
    Initial,
    /// Intercept of the refit after a first thresholded fit.
    Final,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityRecord {
    pub rep: usize,
    pub arm: InterceptArm,
    pub beta0: f64,
    pub lambda: f64,
    pub tpr: f64,
    pub fdr: f64,
    pub s_hat: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivitySummary {
    pub median_beta0_initial: f64,
    pub median_beta0_final: f64,
    /// Median over replications of `|TPr(oracle) - TPr(final)|`.
    pub median_abs_tpr_diff: f64,
    pub median_abs_tpr_diff_initial: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityReport {
    pub records: Vec<SensitivityRecord>,
    pub summary: SensitivitySummary,
}

fn arm_record(
    inst: &ProblemInstance,
    support: &[usize],
    rep: usize,
    arm: InterceptArm,
    beta0: f64,
    settings: &MethodSettings,
    seed: u64,
) -> Result<SensitivityRecord> {
    let sampler = NullSampler::new(inst, seed).with_intercept_beta0(vec![beta0])?.with_design_mode(settings.design_mode);
    let t = compute_qut(&sampler, &NullStatistic::Glm, settings.alpha, settings.mc_samples)?;
    if !t.is_finite() {
        return Err(QutError::QuantileInfinite { infinite_fraction: t.infinite_fraction });
    }
    let fit = glm_lasso_fit(inst, t.lambda_qut, &SolverConfig::for_family(inst.family()))?;
    let m = support_metrics(&fit.support, support)?;
    Ok(SensitivityRecord { rep, arm, beta0, lambda: t.lambda_qut, tpr: m.tpr, fdr: m.fdr, s_hat: m.s_hat })
}

/// Thresholds under three intercepts for the null sampler, with the same
/// Monte Carlo seed in every arm of a replication.
pub fn run_sensitivity_study(spec: &ScenarioSpec, settings: &MethodSettings) -> Result<SensitivityReport> {
    spec.validate()?;
    if spec.family.is_gaussian() {
        return Err(QutError::InvalidInput("the intercept only enters the null model for non-Gaussian families".into()));
    }
    let per_rep: Vec<Vec<SensitivityRecord>> = (0..spec.replications)
        .into_par_iter()
        .map(|rep| {
            let data = generate_scenario(spec, rep)?;
            let inst = &data.instance;
            let seed = rep_seed(spec.seed, rep, 300);
            let report = qut_pipeline(
                inst,
                &PipelineOptions {
                    alpha: settings.alpha,
                    mc_samples: settings.mc_samples,
                    seed,
                    design_mode: settings.design_mode,
                    ..Default::default()
                },
            )?;
            let initial = report.null_beta0[0];
            let fin = report.final_fit().beta0[0];
            let arms = [(InterceptArm::Oracle, TRUE_INTERCEPT), (InterceptArm::Initial, initial), (InterceptArm::Final, fin)];
            arms.iter()
                .map(|&(arm, b)| arm_record(inst, &data.support, rep, arm, b, settings, seed))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;
    let records: Vec<SensitivityRecord> = per_rep.iter().flatten().cloned().collect();
    let pick = |arm: InterceptArm| -> Vec<&SensitivityRecord> { records.iter().filter(|r| r.arm == arm).collect() };
    let (oracle, initial, fin) = (pick(InterceptArm::Oracle), pick(InterceptArm::Initial), pick(InterceptArm::Final));
    let diff = |other: &[&SensitivityRecord]| -> f64 {
        let d: Vec<f64> = oracle.iter().zip(other).map(|(a, b)| (a.tpr - b.tpr).abs()).collect();
        summarize(&d).median
    };
    let summary = SensitivitySummary {
        median_beta0_initial: summarize(&initial.iter().map(|r| r.beta0).collect::<Vec<_>>()).median,
        median_beta0_final: summarize(&fin.iter().map(|r| r.beta0).collect::<Vec<_>>()).median,
        median_abs_tpr_diff: diff(&fin),
        median_abs_tpr_diff_initial: diff(&initial),
    };
    Ok(SensitivityReport { records, summary })
}
