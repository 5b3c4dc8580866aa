use serde::{Deserialize, Serialize};
use statrs::statistics::{Data, Distribution, OrderStatistics};

use crate::error::{QutError, Result};
use crate::model::SupportMetrics;
use crate::simlab::scenario::equicorrelated_quadratic;

fn contains_all(set: &[usize], sub: &[usize]) -> bool {
    sub.iter().all(|j| set.contains(j))
}

/// True-positive and false-discovery proportions of a selected set; an
/// empty selection has no false discoveries.
pub fn support_metrics(s_hat: &[usize], s_star: &[usize]) -> Result<SupportMetrics> {
    if s_star.is_empty() {
        return Err(QutError::InvalidInput("the true support is empty".into()));
    }
    let hits = s_hat.iter().filter(|j| s_star.contains(j)).count();
    let fdr = if s_hat.is_empty() { 0.0 } else { (s_hat.len() - hits) as f64 / s_hat.len() as f64 };
    Ok(SupportMetrics { tpr: hits as f64 / s_star.len() as f64, fdr, oir: None, s_hat: s_hat.len(), s_star: s_star.len() })
}

/// Prediction error relative to the signal: `sqrt(d^T Sigma_omega d / snr)`, `d = beta_hat - beta_star`.
pub fn rmse_metric(beta_hat: &[f64], beta_star: &[f64], omega: f64, snr: f64) -> Result<f64> {
    if beta_hat.len() != beta_star.len() {
        return Err(QutError::Dimension(format!("{} vs {} coefficients", beta_hat.len(), beta_star.len())));
    }
    let d: Vec<f64> = beta_hat.iter().zip(beta_star).map(|(a, b)| a - b).collect();
    Ok((equicorrelated_quadratic(&d, omega) / snr).sqrt())
}

/// `s_min / |S_hat|` when `S_hat` contains the true support, else 0. The
/// smallest screening model is searched over the path and `S_hat` itself.
pub fn oir_metric(path: &[Vec<usize>], s_hat: &[usize], s_star: &[usize]) -> Result<f64> {
    if s_star.is_empty() {
        return Err(QutError::InvalidInput("the true support is empty".into()));
    }
    if !contains_all(s_hat, s_star) {
        return Ok(0.0);
    }
    let s_min = path
        .iter()
        .filter(|s| contains_all(s, s_star))
        .map(|s| s.len())
        .chain(std::iter::once(s_hat.len()))
        .min()
        .expect("non-empty");
    Ok(s_min as f64 / s_hat.len() as f64)
}

/// Best achievable rate along the path: 1 when some point screens, else 0.
pub fn oracle_oir(path: &[Vec<usize>], s_star: &[usize]) -> f64 {
    if path.iter().any(|s| contains_all(s, s_star)) {
        1.0
    } else {
        0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub count: usize,
    pub mean: f64,
    pub std_error: f64,
    pub median: f64,
    pub iqr: f64,
}

/// Mean, standard error, median and interquartile range of finite values.
pub fn summarize(values: &[f64]) -> Summary {
    let v: Vec<f64> = values.iter().cloned().filter(|x| x.is_finite()).collect();
    if v.is_empty() {
        return Summary { count: 0, mean: f64::NAN, std_error: f64::NAN, median: f64::NAN, iqr: f64::NAN };
    }
    let n = v.len();
    let mut data = Data::new(v);
    let mean = data.mean().unwrap_or(f64::NAN);
    let sd = if n > 1 { data.std_dev().unwrap_or(0.0) } else { 0.0 };
    Summary {
        count: n,
        mean,
        std_error: sd / (n as f64).sqrt(),
        median: data.median(),
        iqr: data.interquartile_range(),
    }
}
