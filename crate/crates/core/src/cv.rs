//! Lambda grids, truncated regularization paths and K-fold cross-validation.

use nalgebra::DVector;
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{QutError, Result};
use crate::model::{ProblemInstance, SparseFit};
use crate::rng::{derive_seed, stream_rng, tag};
use crate::solvers::{GaussianLasso, GlmLasso, SolverConfig};
use crate::zerothresh::lambda0_glm;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PathOptions {
    pub grid_len: usize,
    /// Smallest grid value as a fraction of the largest.
    pub min_ratio: f64,
    /// Stop once the fit explains this fraction of the null deviance.
    pub max_deviance_ratio: f64,
}

impl Default for PathOptions {
    fn default() -> Self {
        Self { grid_len: 100, min_ratio: 1e-3, max_deviance_ratio: 0.999 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CvOptions {
    pub folds: usize,
    pub seed: u64,
    pub path: PathOptions,
}

impl Default for CvOptions {
    fn default() -> Self {
        Self { folds: 10, seed: 0, path: PathOptions::default() }
    }
}

/// `len` log-spaced values from `lambda_max` down to `lambda_max * min_ratio`.
pub fn lambda_grid(lambda_max: f64, len: usize, min_ratio: f64) -> Vec<f64> {
    if len == 0 || !(lambda_max > 0.0) {
        return Vec::new();
    }
    if len == 1 {
        return vec![lambda_max];
    }
    let step = min_ratio.ln() / (len - 1) as f64;
    (0..len).map(|k| lambda_max * (step * k as f64).exp()).collect()
}

/// Fits along a descending grid with warm starts, stopping early once the
/// model is nearly saturated: support size reaches `N - P0 - 1` or the
/// deviance ratio exceeds `max_deviance_ratio`. The returned path may be
/// shorter than the grid.
pub fn regularization_path(
    inst: &ProblemInstance,
    lambdas: &[f64],
    cfg: &SolverConfig,
    max_deviance_ratio: f64,
) -> Result<Vec<SparseFit>> {
    let limit = inst.n().saturating_sub(inst.p0() + 1);
    let mut out = Vec::with_capacity(lambdas.len());
    if inst.family().is_gaussian() {
        let solver = GaussianLasso::new(inst, cfg)?;
        let null_dev = solver.residualized_response().norm_squared();
        let mut warm: Option<Vec<f64>> = None;
        for &lam in lambdas {
            let fit = solver.fit(lam, warm.as_deref())?;
            let dev = gaussian_rss(inst, &fit);
            let stop = fit.support_size() >= limit || (null_dev > 0.0 && 1.0 - dev / null_dev > max_deviance_ratio);
            warm = Some(fit.beta.clone());
            out.push(fit);
            if stop {
                break;
            }
        }
    } else {
        let solver = GlmLasso::new(inst, cfg)?;
        let null_dev = deviance(inst, solver.null_beta0(), &vec![0.0; inst.p()]);
        let mut start: Option<(Vec<f64>, Vec<f64>)> = None;
        for &lam in lambdas {
            let fit = solver.fit(lam, start.as_ref().map(|(a, b)| (a.as_slice(), b.as_slice())))?;
            if !fit.converged {
                break;
            }
            let dev = deviance(inst, &fit.beta0, &fit.beta);
            let stop = fit.support_size() >= limit || (null_dev > 0.0 && 1.0 - dev / null_dev > max_deviance_ratio);
            start = Some((fit.beta0.clone(), fit.beta.clone()));
            out.push(fit);
            if stop {
                break;
            }
        }
    }
    Ok(out)
}

fn gaussian_rss(inst: &ProblemInstance, fit: &SparseFit) -> f64 {
    let eta = inst.linear_predictor(&DVector::from_column_slice(&fit.beta0), &DVector::from_column_slice(&fit.beta));
    (inst.y() - eta).norm_squared()
}

/// Total unit deviance of a fit on the instance's own rows.
pub fn deviance(inst: &ProblemInstance, beta0: &[f64], beta: &[f64]) -> f64 {
    let family = inst.family();
    let eta = inst.linear_predictor(&DVector::from_column_slice(beta0), &DVector::from_column_slice(beta));
    inst.y().iter().zip(eta.iter()).map(|(&y, &t)| family.unit_deviance(y, family.mean(t))).sum()
}

/// Largest lambda of the path: the lasso or GLM zero-threshold of the data.
pub fn path_lambda_max(inst: &ProblemInstance, cfg: &SolverConfig) -> Result<f64> {
    let lmax = lambda0_glm(inst, cfg)?;
    if lmax.is_infinite() {
        return Err(QutError::OutsideDomain);
    }
    Ok(lmax)
}

/// Fold label of every row, from a seeded shuffle dealt round-robin.
pub fn fold_assignment(n: usize, folds: usize, seed: u64) -> Vec<usize> {
    let k = folds.clamp(1, n.max(1));
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut stream_rng(derive_seed(seed, tag::FOLDS), 0));
    let mut label = vec![0; n];
    for (pos, &row) in perm.iter().enumerate() {
        label[row] = pos % k;
    }
    label
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvResult {
    pub lambdas: Vec<f64>,
    /// Mean held-out error per grid point; `+inf` past a truncated path.
    pub mean_error: Vec<f64>,
    pub std_error: Vec<f64>,
    pub index_min: usize,
    pub index_1se: usize,
}

impl CvResult {
    pub fn lambda_min(&self) -> f64 {
        self.lambdas[self.index_min]
    }

    /// Largest lambda whose error is within one standard error of the minimum.
    pub fn lambda_1se(&self) -> f64 {
        self.lambdas[self.index_1se]
    }
}

/// K-fold cross-validation of the lasso (Gaussian: squared error; other
/// families: mean unit deviance) on a grid below the full-data zero-threshold.
pub fn cv_lasso(inst: &ProblemInstance, opts: &CvOptions, cfg: &SolverConfig) -> Result<CvResult> {
    if opts.folds < 2 || opts.folds > inst.n() {
        return Err(QutError::InvalidInput(format!("need 2 <= folds <= N, got {} folds for N = {}", opts.folds, inst.n())));
    }
    let lmax = path_lambda_max(inst, cfg)?;
    let lambdas = lambda_grid(lmax, opts.path.grid_len, opts.path.min_ratio);
    if lambdas.is_empty() {
        return Err(QutError::InvalidInput("empty lambda grid (zero threshold is zero)".into()));
    }
    let labels = fold_assignment(inst.n(), opts.folds, opts.seed);
    let errors: Vec<Vec<f64>> = (0..opts.folds)
        .into_par_iter()
        .map(|k| {
            let train: Vec<usize> = (0..inst.n()).filter(|&i| labels[i] != k).collect();
            let test: Vec<usize> = (0..inst.n()).filter(|&i| labels[i] == k).collect();
            let tr = inst.select_rows(&train);
            let te = inst.select_rows(&test);
            let path = regularization_path(&tr, &lambdas, cfg, opts.path.max_deviance_ratio)?;
            let mut err = vec![f64::INFINITY; lambdas.len()];
            for (e, fit) in err.iter_mut().zip(&path) {
                *e = deviance(&te, &fit.beta0, &fit.beta) / test.len() as f64;
            }
            Ok(err)
        })
        .collect::<Result<_>>()?;
    let k = opts.folds as f64;
    let mut mean_error = vec![0.0; lambdas.len()];
    let mut std_error = vec![0.0; lambdas.len()];
    for g in 0..lambdas.len() {
        let vals: Vec<f64> = errors.iter().map(|e| e[g]).collect();
        if vals.iter().any(|v| !v.is_finite()) {
            mean_error[g] = f64::INFINITY;
            std_error[g] = f64::INFINITY;
            continue;
        }
        let m = vals.iter().sum::<f64>() / k;
        let var = vals.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (k - 1.0);
        mean_error[g] = m;
        std_error[g] = (var / k).sqrt();
    }
    let index_min = (0..lambdas.len())
        .fold(0, |best, g| if mean_error[g] < mean_error[best] { g } else { best });
    let bound = mean_error[index_min] + std_error[index_min];
    let index_1se = (0..=index_min).find(|&g| mean_error[g] <= bound).unwrap_or(index_min);
    Ok(CvResult { lambdas, mean_error, std_error, index_min, index_1se })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::GlmFamily;
    use crate::rng::{sample_response, standard_normals};
    use nalgebra::DMatrix;
    use rand::Rng;

    fn sparse_gaussian(n: usize, p: usize, seed: u64) -> ProblemInstance {
        let mut rng = stream_rng(seed, 0);
        let x = DMatrix::from_fn(n, p, |_, _| rng.sample::<f64, _>(rand_distr::StandardNormal));
        let y = standard_normals(&mut rng, n) + x.column(0) * 2.0 - x.column(1) * 1.5;
        ProblemInstance::with_intercept(x, y, GlmFamily::Gaussian).unwrap()
    }

    #[test]
    fn grid_is_log_spaced() {
        let g = lambda_grid(10.0, 5, 1e-4);
        assert_eq!(g.len(), 5);
        assert_eq!(g[0], 10.0);
        assert!((g[4] - 1e-3).abs() < 1e-15);
        for w in g.windows(2) {
            assert!((w[1] / w[0] - 0.1).abs() < 1e-12);
        }
    }

    #[test]
    fn folds_are_balanced_and_seeded() {
        let a = fold_assignment(23, 5, 1);
        for k in 0..5 {
            let c = a.iter().filter(|&&f| f == k).count();
            assert!(c == 4 || c == 5);
        }
        assert_eq!(a, fold_assignment(23, 5, 1));
        assert_ne!(a, fold_assignment(23, 5, 2));
    }

    #[test]
    fn path_stops_before_saturation() {
        let inst = sparse_gaussian(20, 60, 3);
        let cfg = SolverConfig::default();
        let grid = lambda_grid(path_lambda_max(&inst, &cfg).unwrap(), 100, 1e-3);
        let path = regularization_path(&inst, &grid, &cfg, 0.999).unwrap();
        assert!(path.len() < grid.len());
        assert!(path[0].is_zero());
        assert!(path[..path.len() - 1].iter().all(|f| f.support_size() < 20 - 2));
    }

    #[test]
    fn cv_selects_true_signal() {
        let inst = sparse_gaussian(80, 30, 4);
        let cv = cv_lasso(&inst, &CvOptions { folds: 5, ..Default::default() }, &SolverConfig::default()).unwrap();
        assert!(cv.index_1se <= cv.index_min);
        assert!(cv.lambda_1se() >= cv.lambda_min());
        let fit = crate::solvers::lasso_fit(&inst, cv.lambda_min(), &SolverConfig::default()).unwrap();
        assert!(fit.support.contains(&0) && fit.support.contains(&1));
    }

    #[test]
    fn glm_cv_runs() {
        let mut rng = stream_rng(5, 0);
        let n = 60;
        let x = DMatrix::from_fn(n, 8, |_, _| rng.sample::<f64, _>(rand_distr::StandardNormal));
        let y = DVector::from_fn(n, |i, _| sample_response(&mut rng, GlmFamily::Poisson, 0.5 + 0.7 * x[(i, 0)]));
        let inst = ProblemInstance::with_intercept(x, y, GlmFamily::Poisson).unwrap();
        let cv = cv_lasso(&inst, &CvOptions { folds: 4, ..Default::default() }, &SolverConfig::glm()).unwrap();
        assert!(cv.mean_error[cv.index_min].is_finite());
        let fit = crate::solvers::glm_lasso_fit(&inst, cv.lambda_min(), &SolverConfig::glm()).unwrap();
        assert!(fit.support.contains(&0));
    }
}
