use nalgebra::{DMatrix, DVector};

use super::mle::NullMle;
use super::{l1_stationarity_gap, null_mle, soft_threshold, SolverConfig};
use crate::error::{QutError, Result};
use crate::linalg::{col_dot, col_slice, inf_norm};
use crate::model::{GlmFamily, ProblemInstance, SparseFit};

fn l1(v: &[f64]) -> f64 {
    v.iter().map(|b| b.abs()).sum()
}

fn smooth_part(family: GlmFamily, y: &DVector<f64>, eta: &DVector<f64>) -> f64 {
    y.iter().zip(eta.iter()).map(|(&yi, &ti)| family.neg_loglik(yi, ti)).sum()
}

/// `-l(beta0, beta; y) + lambda ||beta||_1`
pub fn glm_lasso_objective(inst: &ProblemInstance, beta0: &[f64], beta: &[f64], lambda: f64) -> f64 {
    let eta = inst.linear_predictor(&DVector::from_column_slice(beta0), &DVector::from_column_slice(beta));
    smooth_part(inst.family(), inst.y(), &eta) + lambda * l1(beta)
}

/// Residual of the stationarity system: `X0^T (y - mu) = 0` and
/// `X^T (y - mu) in lambda d||beta||_1`.
pub fn glm_kkt_residual(inst: &ProblemInstance, beta0: &[f64], beta: &[f64], lambda: f64) -> f64 {
    let eta = inst.linear_predictor(&DVector::from_column_slice(beta0), &DVector::from_column_slice(beta));
    let family = inst.family();
    let resid: Vec<f64> = inst.y().iter().zip(eta.iter()).map(|(&y, &t)| y - family.mean(t)).collect();
    kkt_from_residual(inst, &resid, beta, lambda)
}

fn kkt_from_residual(inst: &ProblemInstance, resid: &[f64], beta: &[f64], lambda: f64) -> f64 {
    let unpen = (0..inst.p0()).map(|j| col_dot(inst.x0(), j, resid).abs()).fold(0.0, f64::max);
    let pen = (0..inst.p())
        .map(|j| l1_stationarity_gap(col_dot(inst.x(), j, resid), beta[j], lambda))
        .fold(0.0, f64::max);
    unpen.max(pen)
}

/// Lasso-penalized canonical GLM solved by proximal Newton: a quadratic
/// model of the negative log-likelihood, minimized by weighted coordinate
/// descent, followed by a backtracking line search on the true objective.
#[derive(Debug, Clone)]
pub struct GlmLasso<'a> {
    inst: &'a ProblemInstance,
    cfg: SolverConfig,
    null_beta0: Vec<f64>,
}

impl<'a> GlmLasso<'a> {
    /// Fails with `OutsideDomain` when the constrained null MLE does not
    /// exist, in which case the penalized problem has no solution either.
    pub fn new(inst: &'a ProblemInstance, cfg: &SolverConfig) -> Result<Self> {
        cfg.validate()?;
        let null_beta0 = match null_mle(inst, cfg)? {
            NullMle::Found { beta0, .. } => beta0,
            NullMle::NonExistent => return Err(QutError::OutsideDomain),
        };
        Ok(Self { inst, cfg: *cfg, null_beta0 })
    }

    pub fn null_beta0(&self) -> &[f64] {
        &self.null_beta0
    }

    /// `||X^T (y - mu(v))||_inf` at the null MLE `v`.
    pub fn lambda_max(&self) -> f64 {
        let family = self.inst.family();
        let eta = if self.inst.p0() > 0 {
            self.inst.x0() * DVector::from_column_slice(&self.null_beta0)
        } else {
            DVector::zeros(self.inst.n())
        };
        let resid: Vec<f64> = self.inst.y().iter().zip(eta.iter()).map(|(&y, &t)| y - family.mean(t)).collect();
        (0..self.inst.p()).map(|j| col_dot(self.inst.x(), j, &resid).abs()).fold(0.0, f64::max)
    }

    pub fn fit(&self, lambda: f64, start: Option<(&[f64], &[f64])>) -> Result<SparseFit> {
        if !(lambda >= 0.0) || lambda.is_infinite() {
            return Err(QutError::InvalidInput(format!("lambda must be finite and nonnegative, got {lambda}")));
        }
        let inst = self.inst;
        let family = inst.family();
        let (x0, x, y) = (inst.x0(), inst.x(), inst.y());
        let (n, p0, p) = (inst.n(), inst.p0(), inst.p());
        let cfg = &self.cfg;

        let (mut b0, mut b) = match start {
            Some((s0, s)) => {
                if s0.len() != p0 || s.len() != p {
                    return Err(QutError::Dimension("starting point has the wrong length".into()));
                }
                (s0.to_vec(), s.to_vec())
            }
            None => (self.null_beta0.clone(), vec![0.0; p]),
        };
        let mut eta = inst.linear_predictor(&DVector::from_column_slice(&b0), &DVector::from_column_slice(&b));
        let mut f = smooth_part(family, y, &eta) + lambda * l1(&b);
        if !f.is_finite() {
            return Err(QutError::InvalidInput("starting point has infinite objective".into()));
        }
        let mut total_sweeps = 0;
        let mut kkt = f64::INFINITY;

        for _outer in 0..cfg.max_newton {
            let mu: Vec<f64> = eta.iter().map(|&t| family.mean(t)).collect();
            let w: Vec<f64> = eta.iter().map(|&t| family.variance(t)).collect();
            let resid: Vec<f64> = y.iter().zip(&mu).map(|(a, b)| a - b).collect();
            kkt = kkt_from_residual(inst, &resid, &b, lambda);
            if kkt <= cfg.conv_tol {
                return Ok(SparseFit::new(b0, b, lambda, kkt, total_sweeps, true));
            }
            let g0: Vec<f64> = (0..p0).map(|j| col_dot(x0, j, &resid)).collect();
            let g: Vec<f64> = (0..p).map(|j| col_dot(x, j, &resid)).collect();

            // Quadratic model in the coefficient step, solved by CD on the
            // working residual u = (y - mu) - W (eta_new - eta).
            let weighted_sq = |m: &DMatrix<f64>, j: usize| -> f64 {
                col_slice(m, j).iter().zip(&w).map(|(v, wi)| wi * v * v).sum()
            };
            let h0: Vec<f64> = (0..p0).map(|j| weighted_sq(x0, j)).collect();
            let h: Vec<f64> = (0..p).map(|j| weighted_sq(x, j)).collect();
            let mut c0 = b0.clone();
            let mut c = b.clone();
            let mut u = resid.clone();
            let inner_tol = (0.01 * kkt).max(0.1 * cfg.conv_tol);

            let sweep = |pen_idx: &[usize], c0: &mut [f64], c: &mut [f64], u: &mut [f64]| -> f64 {
                let mut max_change: f64 = 0.0;
                for j in 0..p0 {
                    if h0[j] <= 1e-300 {
                        continue;
                    }
                    let col = col_slice(x0, j);
                    let grad: f64 = col.iter().zip(u.iter()).map(|(a, b)| a * b).sum();
                    let d = grad / h0[j];
                    if d != 0.0 {
                        c0[j] += d;
                        for ((ui, xi), wi) in u.iter_mut().zip(col).zip(&w) {
                            *ui -= d * wi * xi;
                        }
                        max_change = max_change.max(h0[j] * d.abs());
                    }
                }
                for &j in pen_idx {
                    if h[j] <= 1e-300 {
                        continue;
                    }
                    let col = col_slice(x, j);
                    let z: f64 = col.iter().zip(u.iter()).map(|(a, b)| a * b).sum::<f64>() + h[j] * c[j];
                    let new = soft_threshold(z, lambda) / h[j];
                    let d = new - c[j];
                    if d != 0.0 {
                        c[j] = new;
                        for ((ui, xi), wi) in u.iter_mut().zip(col).zip(&w) {
                            *ui -= d * wi * xi;
                        }
                        max_change = max_change.max(h[j] * d.abs());
                    }
                }
                max_change
            };

            let all: Vec<usize> = (0..p).collect();
            let mut inner_sweeps = 0;
            loop {
                let full = sweep(&all, &mut c0, &mut c, &mut u);
                inner_sweeps += 1;
                if full <= inner_tol || inner_sweeps >= cfg.max_iter {
                    break;
                }
                loop {
                    let active: Vec<usize> = (0..p).filter(|&j| c[j] != 0.0).collect();
                    let change = sweep(&active, &mut c0, &mut c, &mut u);
                    inner_sweeps += 1;
                    if change <= inner_tol || inner_sweeps >= cfg.max_iter {
                        break;
                    }
                }
            }
            total_sweeps += inner_sweeps;

            let d0: Vec<f64> = c0.iter().zip(&b0).map(|(a, b)| a - b).collect();
            let d: Vec<f64> = c.iter().zip(&b).map(|(a, b)| a - b).collect();
            let mut deta = DVector::zeros(n);
            for (j, &dj) in d0.iter().enumerate() {
                if dj != 0.0 {
                    deta.axpy(dj, &x0.column(j), 1.0);
                }
            }
            for (j, &dj) in d.iter().enumerate() {
                if dj != 0.0 {
                    deta.axpy(dj, &x.column(j), 1.0);
                }
            }
            let decrease = -(g0.iter().zip(&d0).map(|(a, b)| a * b).sum::<f64>()
                + g.iter().zip(&d).map(|(a, b)| a * b).sum::<f64>())
                + lambda * (l1(&c) - l1(&b));

            let mut t = 1.0;
            let mut accepted = false;
            for _ in 0..60 {
                let cand_b: Vec<f64> = if t == 1.0 {
                    c.clone()
                } else {
                    b.iter().zip(&d).map(|(bi, di)| bi + t * di).collect()
                };
                let cand_eta = &eta + &deta * t;
                let fc = smooth_part(family, y, &cand_eta) + lambda * l1(&cand_b);
                let tiny = 1e-13 * f.abs().max(1.0);
                if fc.is_finite() && (fc <= f + 1e-4 * t * decrease || fc <= f + tiny && decrease.abs() <= tiny) {
                    b0 = if t == 1.0 { c0.clone() } else { b0.iter().zip(&d0).map(|(bi, di)| bi + t * di).collect() };
                    b = cand_b;
                    eta = cand_eta;
                    f = fc;
                    accepted = true;
                    break;
                }
                t *= cfg.line_search_shrink;
            }
            if inf_norm(&b0).max(inf_norm(&b)) > cfg.divergence_cap {
                return Err(QutError::NonExistent("penalized GLM iterates diverged".into()));
            }
            if !accepted {
                break;
            }
        }

        let resid: Vec<f64> = y.iter().zip(eta.iter()).map(|(&yi, &t)| yi - family.mean(t)).collect();
        kkt = kkt.min(kkt_from_residual(inst, &resid, &b, lambda));
        if kkt <= cfg.conv_tol {
            return Ok(SparseFit::new(b0, b, lambda, kkt, total_sweeps, true));
        }
        Ok(SparseFit::new(b0, b, lambda, kkt, total_sweeps, false))
    }
}

/// Lasso GLM fit started at `(null MLE, 0)`.
pub fn glm_lasso_fit(inst: &ProblemInstance, lambda: f64, cfg: &SolverConfig) -> Result<SparseFit> {
    GlmLasso::new(inst, cfg)?.fit(lambda, None)
}

pub fn glm_lasso_fit_from(
    inst: &ProblemInstance,
    lambda: f64,
    cfg: &SolverConfig,
    start: (&[f64], &[f64]),
) -> Result<SparseFit> {
    GlmLasso::new(inst, cfg)?.fit(lambda, Some(start))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{sample_response, stream_rng};
    use crate::solvers::lasso_fit;
    use rand::Rng;

    fn random_glm(n: usize, p: usize, family: GlmFamily, seed: u64) -> ProblemInstance {
        let mut rng = stream_rng(seed, 7);
        let x = DMatrix::from_fn(n, p, |_, _| rng.sample::<f64, _>(rand_distr::StandardNormal));
        loop {
            let y = DVector::from_fn(n, |i, _| sample_response(&mut rng, family, 0.3 + 0.8 * x[(i, 0)]));
            let inst = ProblemInstance::with_intercept(x.clone(), y, family).unwrap();
            if crate::zerothresh::membership_d(&inst, &SolverConfig::glm()).unwrap() {
                return inst;
            }
        }
    }

    #[test]
    fn two_point_bernoulli_zero_solution() {
        let inst = ProblemInstance::with_intercept(
            DMatrix::from_column_slice(2, 1, &[1.0, -1.0]),
            DVector::from_vec(vec![0.0, 1.0]),
            GlmFamily::Bernoulli,
        )
        .unwrap();
        let fit = glm_lasso_fit(&inst, 1.5, &SolverConfig::glm()).unwrap();
        assert!(fit.is_zero());
        assert!(fit.beta0[0].abs() < 1e-12);
        let fit = glm_lasso_fit(&inst, 0.999, &SolverConfig::glm()).unwrap();
        assert!(!fit.is_zero());
        assert!(fit.converged);
    }

    #[test]
    fn gaussian_family_agrees_with_lasso_solver() {
        for seed in 0..50 {
            let inst = random_glm(30, 10, GlmFamily::Gaussian, seed);
            let lmax = GlmLasso::new(&inst, &SolverConfig::gaussian()).unwrap().lambda_max();
            let lambda = 0.3 * lmax;
            let a = glm_lasso_fit(&inst, lambda, &SolverConfig::gaussian()).unwrap();
            let b = lasso_fit(&inst, lambda, &SolverConfig::gaussian()).unwrap();
            for (u, v) in a.beta.iter().zip(&b.beta).chain(a.beta0.iter().zip(&b.beta0)) {
                assert!((u - v).abs() < 1e-6, "seed {seed}: {u} vs {v}");
            }
        }
    }

    #[test]
    fn converged_fits_satisfy_stationarity() {
        for (k, family) in [GlmFamily::Bernoulli, GlmFamily::Poisson, GlmFamily::BinomialScaled { trials: 4 }]
            .into_iter()
            .enumerate()
        {
            for seed in 0..10 {
                let inst = random_glm(40, 25, family, 100 * k as u64 + seed);
                let solver = GlmLasso::new(&inst, &SolverConfig::glm()).unwrap();
                let lambda = 0.2 * solver.lambda_max();
                let fit = solver.fit(lambda, None).unwrap();
                assert!(fit.converged, "{family:?} seed {seed}");
                assert!(glm_kkt_residual(&inst, &fit.beta0, &fit.beta, lambda) <= 1e-6);
            }
        }
    }

    #[test]
    fn fitted_predictor_is_unique_across_starts() {
        for seed in 0..10 {
            let inst = random_glm(30, 40, GlmFamily::Bernoulli, 500 + seed);
            let solver = GlmLasso::new(&inst, &SolverConfig::glm()).unwrap();
            let lambda = 0.3 * solver.lambda_max();
            let a = solver.fit(lambda, None).unwrap();
            let start = vec![0.1; inst.p()];
            let b = solver.fit(lambda, Some((&[-0.5], &start))).unwrap();
            let ea = inst.linear_predictor(&DVector::from_column_slice(&a.beta0), &DVector::from_column_slice(&a.beta));
            let eb = inst.linear_predictor(&DVector::from_column_slice(&b.beta0), &DVector::from_column_slice(&b.beta));
            assert!((ea - eb).amax() < 1e-6);
        }
    }

    #[test]
    fn outside_domain_is_reported() {
        let inst = ProblemInstance::with_intercept(DMatrix::identity(3, 2), DVector::zeros(3), GlmFamily::Poisson).unwrap();
        assert_eq!(glm_lasso_fit(&inst, 1.0, &SolverConfig::glm()).unwrap_err(), QutError::OutsideDomain);
    }
}
