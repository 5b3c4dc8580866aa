use nalgebra::DVector;
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::methods::{run_method, Method, MethodSettings};
use super::metrics::{summarize, Summary};
use super::rep_seed;
use crate::error::{QutError, Result};
use crate::model::{GlmFamily, ProblemInstance};
use crate::rng::stream_rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HoldoutMetric {
    /// Mean squared error of the predicted mean.
    Mse,
    /// Correct-classification rate at predicted probability 0.5.
    Accuracy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HoldoutRecord {
    pub split: usize,
    pub train_size: usize,
    pub test_size: usize,
    pub s_hat: usize,
    pub metric: HoldoutMetric,
    pub test_score: f64,
    pub refit_failed: bool,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HoldoutReport {
    pub method: Method,
    pub records: Vec<HoldoutRecord>,
    pub model_size: Summary,
    pub test_score: Summary,
    /// How often each column was selected, by column index.
    pub selection_counts: Vec<usize>,
}

/// Repeated random train/test splits; training gets `ceil(f N)` rows.
pub fn run_holdout(
    inst: &ProblemInstance,
    method: Method,
    settings: &MethodSettings,
    split_fraction: f64,
    repeats: usize,
    seed: u64,
) -> Result<HoldoutReport> {
    if !(split_fraction > 0.0 && split_fraction < 1.0) {
        return Err(QutError::InvalidInput(format!("split fraction must lie in (0, 1), got {split_fraction}")));
    }
    if repeats == 0 {
        return Err(QutError::InvalidInput("at least one split is required".into()));
    }
    let n = inst.n();
    let n_train = ((split_fraction * n as f64) - 1e-9).ceil() as usize;
    if n_train < 2 || n_train >= n {
        return Err(QutError::InvalidInput(format!("split leaves {n_train} training rows out of {n}")));
    }
    let metric = if inst.family() == GlmFamily::Bernoulli { HoldoutMetric::Accuracy } else { HoldoutMetric::Mse };
    let outcomes: Vec<(HoldoutRecord, Vec<usize>)> = (0..repeats)
        .into_par_iter()
        .map(|split| {
            let mut perm: Vec<usize> = (0..n).collect();
            perm.shuffle(&mut stream_rng(rep_seed(seed, split, 400), 0));
            let (mut train, mut test) = (perm[..n_train].to_vec(), perm[n_train..].to_vec());
            train.sort_unstable();
            test.sort_unstable();
            let tr = inst.select_rows(&train);
            let te = inst.select_rows(&test);
            let base = HoldoutRecord {
                split,
                train_size: train.len(),
                test_size: test.len(),
                s_hat: 0,
                metric,
                test_score: f64::NAN,
                refit_failed: false,
                error: None,
            };
            match run_method(&tr, method, settings, rep_seed(seed, split, 401)) {
                Ok(o) => {
                    let eta = te.linear_predictor(&DVector::from_vec(o.beta0.clone()), &DVector::from_vec(o.beta.clone()));
                    let family = te.family();
                    let score = match metric {
                        HoldoutMetric::Accuracy => {
                            let correct = te
                                .y()
                                .iter()
                                .zip(eta.iter())
                                .filter(|(&y, &t)| (family.mean(t) > 0.5) == (y > 0.5))
                                .count();
                            correct as f64 / test.len() as f64
                        }
                        HoldoutMetric::Mse => {
                            te.y().iter().zip(eta.iter()).map(|(&y, &t)| (y - family.mean(t)).powi(2)).sum::<f64>()
                                / test.len() as f64
                        }
                    };
                    let rec = HoldoutRecord { s_hat: o.support.len(), test_score: score, refit_failed: o.refit_failed, ..base };
                    (rec, o.support)
                }
                Err(e) => (HoldoutRecord { error: Some(e.to_string()), ..base }, Vec::new()),
            }
        })
        .collect();
    let mut selection_counts = vec![0; inst.p()];
    for (_, s) in &outcomes {
        for &j in s {
            selection_counts[j] += 1;
        }
    }
    let records: Vec<HoldoutRecord> = outcomes.into_iter().map(|(r, _)| r).collect();
    let ok: Vec<&HoldoutRecord> = records.iter().filter(|r| r.error.is_none()).collect();
    Ok(HoldoutReport {
        method,
        model_size: summarize(&ok.iter().map(|r| r.s_hat as f64).collect::<Vec<_>>()),
        test_score: summarize(&ok.iter().map(|r| r.test_score).collect::<Vec<_>>()),
        selection_counts,
        records,
    })
}
