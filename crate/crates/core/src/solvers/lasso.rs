use nalgebra::{DMatrix, DVector};

use super::{l1_stationarity_gap, soft_threshold, SolverConfig};
use crate::error::{QutError, Result};
use crate::linalg::{col_dot, col_slice, Projector};
use crate::model::{ProblemInstance, SparseFit};

/// Outcome of a coordinate-descent run.
#[derive(Debug, Clone, Copy)]
pub(crate) struct CdOutcome {
    pub iterations: usize,
    pub kkt: f64,
    pub converged: bool,
}

/// Cyclic coordinate descent for `0.5 ||y - X b||^2 + lambda ||b||_1`,
/// updating `beta` in place. Columns are visited in index order.
pub(crate) fn coordinate_descent(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    col_sq: &[f64],
    lambda: f64,
    beta: &mut [f64],
    cfg: &SolverConfig,
) -> CdOutcome {
    let p = x.ncols();
    let fresh_residual = |beta: &[f64]| {
        let mut r = y.clone();
        for (j, &b) in beta.iter().enumerate() {
            if b != 0.0 {
                r.axpy(-b, &x.column(j), 1.0);
            }
        }
        r
    };
    let mut r = fresh_residual(beta);
    let scale = col_sq.iter().cloned().fold(0.0, f64::max).max(1.0);
    let inner_tol = 0.1 * cfg.conv_tol;
    let mut iterations = 0;
    let all: Vec<usize> = (0..p).collect();

    let sweep = |idx: &[usize], beta: &mut [f64], r: &mut DVector<f64>| -> f64 {
        let mut max_change: f64 = 0.0;
        let rs = r.as_mut_slice();
        for &j in idx {
            let cs = col_sq[j];
            if cs == 0.0 {
                continue;
            }
            let xj = col_slice(x, j);
            let g: f64 = xj.iter().zip(rs.iter()).map(|(a, b)| a * b).sum::<f64>() + cs * beta[j];
            let new = soft_threshold(g, lambda) / cs;
            let d = new - beta[j];
            if d != 0.0 {
                for (ri, xi) in rs.iter_mut().zip(xj) {
                    *ri -= d * xi;
                }
                beta[j] = new;
                max_change = max_change.max(cs * d.abs());
            }
        }
        max_change
    };

    loop {
        let full_change = sweep(&all, beta, &mut r);
        iterations += 1;
        let mut inner = 0;
        let mut tried: Option<Vec<usize>> = None;
        loop {
            if iterations >= cfg.max_iter {
                break;
            }
            let active: Vec<usize> = (0..p).filter(|&j| beta[j] != 0.0).collect();
            if active.is_empty() {
                break;
            }
            if inner >= ACTIVE_SOLVE_AFTER && tried.as_ref() != Some(&active) {
                match active_set_step(x, y, &active, beta, lambda) {
                    Some(true) => break,
                    Some(false) => {
                        r = fresh_residual(beta);
                        continue;
                    }
                    None => tried = Some(active.clone()),
                }
            }
            inner += 1;
            let change = sweep(&active, beta, &mut r);
            iterations += 1;
            if change <= inner_tol {
                break;
            }
        }
        r = fresh_residual(beta);
        let kkt = lasso_kkt(x, &r, beta, lambda);
        if kkt <= cfg.conv_tol {
            return CdOutcome { iterations, kkt, converged: true };
        }
        if iterations >= cfg.max_iter || full_change <= 1e-15 * scale {
            return CdOutcome { iterations, kkt, converged: false };
        }
    }
}

const ACTIVE_SOLVE_AFTER: usize = 10;

/// Solves `X_A^T (y - X_A b) = lambda sign(beta_A)` on the active set and
/// moves `beta` towards `b`. Returns `Some(true)` when `b` keeps the signs of
/// `beta_A` and is taken whole, `Some(false)` when the move stops where the
/// first coordinate reaches zero, and `None` when the system is singular.
fn active_set_step(x: &DMatrix<f64>, y: &DVector<f64>, active: &[usize], beta: &mut [f64], lambda: f64) -> Option<bool> {
    let xa = x.select_columns(active);
    let gram = xa.tr_mul(&xa);
    let mut rhs = xa.tr_mul(y);
    for (k, &j) in active.iter().enumerate() {
        rhs[k] -= lambda * beta[j].signum();
    }
    let b = gram.cholesky()?.solve(&rhs);
    if b.iter().any(|v| !v.is_finite()) {
        return None;
    }
    let mut t = 1.0;
    let mut blocking = None;
    for (k, &j) in active.iter().enumerate() {
        if b[k] * beta[j].signum() <= 0.0 {
            let tk = beta[j] / (beta[j] - b[k]);
            if tk < t {
                t = tk;
                blocking = Some(j);
            }
        }
    }
    for (k, &j) in active.iter().enumerate() {
        beta[j] += t * (b[k] - beta[j]);
    }
    match blocking {
        None => Some(true),
        Some(j) => {
            beta[j] = 0.0;
            Some(false)
        }
    }
}

pub(crate) fn lasso_kkt(x: &DMatrix<f64>, r: &DVector<f64>, beta: &[f64], lambda: f64) -> f64 {
    let rs = r.as_slice();
    (0..x.ncols())
        .map(|j| l1_stationarity_gap(col_dot(x, j, rs), beta[j], lambda))
        .fold(0.0, f64::max)
}

/// Gaussian lasso with the unpenalized block profiled out: `y` and `X` are
/// replaced by their residuals after projecting onto the range of `X0`.
#[derive(Debug, Clone)]
pub struct GaussianLasso {
    x0: DMatrix<f64>,
    x_orig: DMatrix<f64>,
    y_orig: DVector<f64>,
    x: DMatrix<f64>,
    y: DVector<f64>,
    col_sq: Vec<f64>,
    scale: Option<Vec<f64>>,
    cfg: SolverConfig,
}

impl GaussianLasso {
    pub fn new(inst: &ProblemInstance, cfg: &SolverConfig) -> Result<Self> {
        if !inst.family().is_gaussian() {
            return Err(QutError::InvalidInput("the lasso solver expects a Gaussian instance".into()));
        }
        cfg.validate()?;
        let proj = Projector::new(inst.x0());
        let mut x = proj.residualize(inst.x());
        let y = proj.residual(inst.y());
        let n = inst.n() as f64;
        let mut col_sq: Vec<f64> = (0..x.ncols()).map(|j| x.column(j).norm_squared()).collect();
        let scale = if cfg.standardize {
            let s: Vec<f64> = col_sq.iter().map(|&c| if c > 0.0 { (c / n).sqrt() } else { 1.0 }).collect();
            for (j, &sj) in s.iter().enumerate() {
                x.column_mut(j).unscale_mut(sj);
                col_sq[j] /= sj * sj;
            }
            Some(s)
        } else {
            None
        };
        // Columns annihilated by the projection carry no information.
        for c in col_sq.iter_mut() {
            if *c < 1e-24 {
                *c = 0.0;
            }
        }
        Ok(Self {
            x0: inst.x0().clone(),
            x_orig: inst.x().clone(),
            y_orig: inst.y().clone(),
            x,
            y,
            col_sq,
            scale,
            cfg: *cfg,
        })
    }

    /// `||X~^T y~||_inf`, the smallest lambda giving the zero solution
    /// (on the standardized scale when standardization is on).
    pub fn lambda_max(&self) -> f64 {
        let ys = self.y.as_slice();
        (0..self.x.ncols()).map(|j| col_dot(&self.x, j, ys).abs()).fold(0.0, f64::max)
    }

    pub fn residualized_response(&self) -> &DVector<f64> {
        &self.y
    }

    pub fn residualized_design(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub(crate) fn solve_internal(&self, lambda: f64, beta: &mut [f64]) -> CdOutcome {
        coordinate_descent(&self.x, &self.y, &self.col_sq, lambda, beta, &self.cfg)
    }

    /// Internal (possibly standardized) coefficients to the original scale.
    pub(crate) fn to_original(&self, internal: &[f64]) -> Vec<f64> {
        match &self.scale {
            Some(s) => internal.iter().zip(s).map(|(b, s)| b / s).collect(),
            None => internal.to_vec(),
        }
    }

    fn to_internal(&self, beta: &[f64]) -> Vec<f64> {
        match &self.scale {
            Some(s) => beta.iter().zip(s).map(|(b, s)| b * s).collect(),
            None => beta.to_vec(),
        }
    }

    /// Recovers the unpenalized coefficients by least squares on `X0`.
    pub(crate) fn recover_beta0(&self, beta: &[f64]) -> Vec<f64> {
        if self.x0.ncols() == 0 {
            return Vec::new();
        }
        let b = DVector::from_column_slice(beta);
        let partial = &self.y_orig - &self.x_orig * b;
        let svd = self.x0.clone().svd(true, true);
        svd.solve(&partial, 1e-12).map(|v| v.as_slice().to_vec()).unwrap_or_else(|_| vec![0.0; self.x0.ncols()])
    }

    pub fn fit(&self, lambda: f64, warm: Option<&[f64]>) -> Result<SparseFit> {
        if !(lambda >= 0.0) || lambda.is_infinite() {
            return Err(QutError::InvalidInput(format!("lambda must be finite and nonnegative, got {lambda}")));
        }
        let mut beta = match warm {
            Some(w) if w.len() == self.x.ncols() => self.to_internal(w),
            Some(w) => {
                return Err(QutError::Dimension(format!("warm start has {} entries, expected {}", w.len(), self.x.ncols())))
            }
            None => vec![0.0; self.x.ncols()],
        };
        let out = self.solve_internal(lambda, &mut beta);
        let beta = self.to_original(&beta);
        let beta0 = self.recover_beta0(&beta);
        Ok(SparseFit::new(beta0, beta, lambda, out.kkt, out.iterations, out.converged))
    }
}

/// Lasso fit by cyclic coordinate descent with exact soft-threshold updates.
pub fn lasso_fit(inst: &ProblemInstance, lambda: f64, cfg: &SolverConfig) -> Result<SparseFit> {
    GaussianLasso::new(inst, cfg)?.fit(lambda, None)
}

pub fn lasso_fit_warm(inst: &ProblemInstance, lambda: f64, cfg: &SolverConfig, warm: &[f64]) -> Result<SparseFit> {
    GaussianLasso::new(inst, cfg)?.fit(lambda, Some(warm))
}

/// Fits along `lambdas` in the given order, warm-starting each fit from the
/// previous one. Pass a descending grid for the usual path.
pub fn lasso_path(inst: &ProblemInstance, lambdas: &[f64], cfg: &SolverConfig) -> Result<Vec<SparseFit>> {
    let solver = GaussianLasso::new(inst, cfg)?;
    let mut out = Vec::with_capacity(lambdas.len());
    let mut warm: Option<Vec<f64>> = None;
    for &lam in lambdas {
        let fit = solver.fit(lam, warm.as_deref())?;
        warm = Some(fit.beta.clone());
        out.push(fit);
    }
    Ok(out)
}

/// `0.5 ||y - X0 b0 - X b||^2 + lambda ||b||_1`
pub fn lasso_objective(inst: &ProblemInstance, beta0: &[f64], beta: &[f64], lambda: f64) -> f64 {
    let eta = inst.linear_predictor(&DVector::from_column_slice(beta0), &DVector::from_column_slice(beta));
    0.5 * (inst.y() - eta).norm_squared() + lambda * beta.iter().map(|b| b.abs()).sum::<f64>()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::GlmFamily;
    use crate::rng::{standard_normals, stream_rng};
    use rand::Rng;

    fn random_instance(n: usize, p: usize, seed: u64, intercept: bool) -> ProblemInstance {
        let mut rng = stream_rng(seed, 0);
        let x = DMatrix::from_fn(n, p, |_, _| rng.sample::<f64, _>(rand_distr::StandardNormal));
        let y = standard_normals(&mut rng, n) + &x.column(0) * 1.5;
        if intercept {
            ProblemInstance::with_intercept(x, y, GlmFamily::Gaussian).unwrap()
        } else {
            ProblemInstance::without_x0(x, y, GlmFamily::Gaussian).unwrap()
        }
    }

    #[test]
    fn identity_design_soft_thresholds() {
        let inst = ProblemInstance::without_x0(
            DMatrix::identity(2, 2),
            DVector::from_vec(vec![3.0, -1.0]),
            GlmFamily::Gaussian,
        )
        .unwrap();
        let fit = lasso_fit(&inst, 1.0, &SolverConfig::default()).unwrap();
        assert_eq!(fit.beta, vec![2.0, 0.0]);
        assert_eq!(fit.support, vec![0]);
    }

    #[test]
    fn zero_at_lambda_max() {
        for seed in 0..5 {
            let inst = random_instance(15, 8, seed, true);
            let solver = GaussianLasso::new(&inst, &SolverConfig::default()).unwrap();
            let fit = solver.fit(solver.lambda_max(), None).unwrap();
            assert!(fit.is_zero());
            // intercept recovered as the mean
            let mean = inst.y().mean();
            assert!((fit.beta0[0] - mean).abs() < 1e-10);
        }
    }

    #[test]
    fn random_probe_objective_oracle() {
        let inst = random_instance(8, 5, 42, false);
        let lambda = 0.3;
        let fit = lasso_fit(&inst, lambda, &SolverConfig::default()).unwrap();
        assert!(fit.converged && fit.kkt_residual <= 1e-8);
        let best = lasso_objective(&inst, &[], &fit.beta, lambda);
        let mut rng = stream_rng(99, 1);
        for k in 0..10_000 {
            // probes both near the optimum and far away
            let radius = if k % 2 == 0 { 1e-3 } else { 2.0 };
            let probe: Vec<f64> = fit.beta.iter().map(|b| b + radius * (rng.random::<f64>() - 0.5)).collect();
            assert!(lasso_objective(&inst, &[], &probe, lambda) >= best - 1e-12);
        }
    }

    #[test]
    fn warm_path_matches_cold_fits() {
        let inst = random_instance(30, 12, 3, true);
        let lmax = GaussianLasso::new(&inst, &SolverConfig::default()).unwrap().lambda_max();
        let grid: Vec<f64> = (0..10).map(|k| lmax * 0.7f64.powi(k)).collect();
        let path = lasso_path(&inst, &grid, &SolverConfig::default()).unwrap();
        for (fit, &lam) in path.iter().zip(&grid) {
            let cold = lasso_fit(&inst, lam, &SolverConfig::default()).unwrap();
            for (a, b) in fit.beta.iter().zip(&cold.beta) {
                assert!((a - b).abs() < 1e-7);
            }
        }
        // objective non-increasing as lambda decreases along the path
        for w in path.windows(2) {
            let f1 = lasso_objective(&inst, &w[0].beta0, &w[0].beta, w[0].lambda);
            let f2 = lasso_objective(&inst, &w[1].beta0, &w[1].beta, w[1].lambda);
            assert!(f2 <= f1 + 1e-9);
        }
    }

    #[test]
    fn standardized_fit_back_transforms() {
        let mut inst = random_instance(25, 6, 8, false);
        let mut x = inst.x().clone();
        x.column_mut(0).scale_mut(10.0);
        inst = ProblemInstance::without_x0(x, inst.y().clone(), GlmFamily::Gaussian).unwrap();
        let cfg = SolverConfig { standardize: true, ..SolverConfig::default() };
        let fit = lasso_fit(&inst, 0.0, &cfg).unwrap();
        // lambda = 0 gives least squares regardless of scaling
        let ls = crate::linalg::least_squares(inst.x(), inst.y()).unwrap();
        for (a, b) in fit.beta.iter().zip(ls.iter()) {
            assert!((a - b).abs() < 1e-6, "{a} vs {b}");
        }
    }

    #[test]
    fn rejects_non_gaussian() {
        let inst = ProblemInstance::without_x0(DMatrix::identity(2, 2), DVector::from_vec(vec![0.0, 1.0]), GlmFamily::Bernoulli)
            .unwrap();
        assert!(lasso_fit(&inst, 1.0, &SolverConfig::default()).is_err());
    }
}
