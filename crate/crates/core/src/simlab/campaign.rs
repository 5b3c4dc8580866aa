use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::methods::{run_method, Method, MethodSettings};
use super::metrics::{rmse_metric, summarize, support_metrics, Summary};
use super::rep_seed;
use super::scenario::{generate_scenario, ScenarioSpec};
use crate::error::{QutError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationRecord {
    pub scenario: String,
    pub rep: usize,
    pub method: Method,
    pub tpr: f64,
    pub fdr: f64,
    pub rmse: f64,
    pub s_hat: usize,
    pub s_star: usize,
    pub lambda: f64,
    pub sigma2: Option<f64>,
    pub refit_failed: bool,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSummary {
    pub scenario: String,
    pub method: Method,
    pub replications: usize,
    pub failures: usize,
    pub tpr: Summary,
    pub fdr: Summary,
    pub rmse: Summary,
    /// `sqrt(mean(rmse^2))`: the root of the expected squared error.
    pub rmse_pooled: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    pub records: Vec<ReplicationRecord>,
    pub summary: Vec<ScenarioSummary>,
}

impl SimReport {
    pub fn summary_for(&self, scenario: &str, method: Method) -> Option<&ScenarioSummary> {
        self.summary.iter().find(|s| s.scenario == scenario && s.method == method)
    }
}

fn one_replication(spec: &ScenarioSpec, rep: usize, methods: &[Method], settings: &MethodSettings) -> Result<Vec<ReplicationRecord>> {
    let data = generate_scenario(spec, rep)?;
    let label = spec.label();
    let mut out = Vec::with_capacity(methods.len());
    for (k, &method) in methods.iter().enumerate() {
        let seed = rep_seed(spec.seed, rep, 100 + k as u64);
        let record = match run_method(&data.instance, method, settings, seed) {
            Ok(o) => {
                let m = support_metrics(&o.support, &data.support)?;
                ReplicationRecord {
                    scenario: label.clone(),
                    rep,
                    method,
                    tpr: m.tpr,
                    fdr: m.fdr,
                    rmse: rmse_metric(&o.beta, &data.beta_star, spec.omega, spec.snr)?,
                    s_hat: m.s_hat,
                    s_star: m.s_star,
                    lambda: o.lambda,
                    sigma2: o.sigma2,
                    refit_failed: o.refit_failed,
                    error: None,
                }
            }
            Err(e) => ReplicationRecord {
                scenario: label.clone(),
                rep,
                method,
                tpr: f64::NAN,
                fdr: f64::NAN,
                rmse: f64::NAN,
                s_hat: 0,
                s_star: data.support.len(),
                lambda: f64::NAN,
                sigma2: None,
                refit_failed: false,
                error: Some(e.to_string()),
            },
        };
        out.push(record);
    }
    Ok(out)
}

fn pooled_rms(values: &[f64]) -> f64 {
    let v: Vec<f64> = values.iter().copied().filter(|x| x.is_finite()).collect();
    if v.is_empty() {
        return f64::NAN;
    }
    (v.iter().map(|x| x * x).sum::<f64>() / v.len() as f64).sqrt()
}

/// Support-recovery and prediction metrics of each tuning rule over the
/// replications of each scenario. Per-replication failures are recorded
/// and excluded from the summaries.
pub fn run_table2_campaign(specs: &[ScenarioSpec], methods: &[Method], settings: &MethodSettings) -> Result<SimReport> {
    if methods.contains(&Method::Oracle) {
        return Err(QutError::InvalidInput("the oracle has no fitted model to score".into()));
    }
    let mut records = Vec::new();
    let mut summary = Vec::new();
    for spec in specs {
        spec.validate()?;
        let reps: Vec<Vec<ReplicationRecord>> = (0..spec.replications)
            .into_par_iter()
            .map(|rep| one_replication(spec, rep, methods, settings))
            .collect::<Result<_>>()?;
        let reps: Vec<ReplicationRecord> = reps.into_iter().flatten().collect();
        for &method in methods {
            let rows: Vec<&ReplicationRecord> = reps.iter().filter(|r| r.method == method).collect();
            let col = |f: fn(&ReplicationRecord) -> f64| -> Vec<f64> { rows.iter().filter(|r| r.error.is_none()).map(|r| f(r)).collect() };
            summary.push(ScenarioSummary {
                scenario: spec.label(),
                method,
                replications: rows.len(),
                failures: rows.iter().filter(|r| r.error.is_some()).count(),
                tpr: summarize(&col(|r| r.tpr)),
                fdr: summarize(&col(|r| r.fdr)),
                rmse: summarize(&col(|r| r.rmse)),
                rmse_pooled: pooled_rms(&col(|r| r.rmse)),
            });
        }
        records.extend(reps);
    }
    Ok(SimReport { records, summary })
}
