//! Noise-variance estimators for high-dimensional Gaussian regression.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::cv::{cv_lasso, CvOptions};
use crate::error::{QutError, Result};
use crate::linalg::{numerical_rank, Projector};
use crate::model::{ProblemInstance, SparseFit};
use crate::qut::{compute_qut, NullSampler, NullStatistic, DEFAULT_ALPHA, DEFAULT_MC_SAMPLES};
use crate::rng::{derive_seed, stream_rng, tag};
use crate::solvers::{lasso_fit, GaussianLasso, SolverConfig};
use crate::zerothresh::PenaltySpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VarianceMethod {
    ResidualCv,
    Rcv,
    RefittedQut,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarianceEstimate {
    pub sigma2: f64,
    pub method: VarianceMethod,
    /// Row counts of the two halves for split-based methods.
    pub split_sizes: Option<(usize, usize)>,
    /// Selected-model sizes: one for residual-CV, one per half otherwise.
    pub model_sizes: Vec<usize>,
    pub iterations: usize,
    /// False when the fixed-point search found no sign change.
    pub converged: bool,
}

fn require_gaussian(inst: &ProblemInstance) -> Result<()> {
    if !inst.family().is_gaussian() {
        return Err(QutError::InvalidInput("variance estimators apply to Gaussian responses".into()));
    }
    Ok(())
}

/// `||y - X0 b0 - X b||^2 / (N - s)` for a fit with `s` selected columns.
pub fn residual_variance(inst: &ProblemInstance, fit: &SparseFit) -> Result<f64> {
    let s = fit.support_size();
    if s >= inst.n() {
        return Err(QutError::Saturated(format!("{s} selected columns for {} observations", inst.n())));
    }
    let eta = inst.linear_predictor(&DVector::from_column_slice(&fit.beta0), &DVector::from_column_slice(&fit.beta));
    Ok((inst.y() - eta).norm_squared() / (inst.n() - s) as f64)
}

/// Lasso tuned by K-fold CV-min, residual sum of squares over `N - s`.
pub fn sigma2_residual_cv(inst: &ProblemInstance, cv: &CvOptions) -> Result<VarianceEstimate> {
    require_gaussian(inst)?;
    let cfg = SolverConfig::gaussian();
    let res = cv_lasso(inst, cv, &cfg)?;
    let fit = lasso_fit(inst, res.lambda_min(), &cfg)?;
    Ok(VarianceEstimate {
        sigma2: residual_variance(inst, &fit)?,
        method: VarianceMethod::ResidualCv,
        split_sizes: None,
        model_sizes: vec![fit.support_size()],
        iterations: 1,
        converged: true,
    })
}

/// Seeded random halves; the first gets `ceil(N/2)` rows.
pub fn split_halves(n: usize, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut stream_rng(derive_seed(seed, tag::SPLIT), 0));
    let first = n.div_ceil(2);
    let mut a = perm[..first].to_vec();
    let mut b = perm[first..].to_vec();
    a.sort_unstable();
    b.sort_unstable();
    (a, b)
}

/// Residual mean square of `y` on `[X0, X_S]`, with `n - |S|` degrees of freedom.
pub fn cross_variance(target: &ProblemInstance, support: &[usize]) -> Result<f64> {
    let n = target.n();
    let m = support.len();
    if n <= m {
        return Err(QutError::Saturated(format!("{m} selected columns for {n} held-out rows")));
    }
    let p0 = target.p0();
    let mut design = DMatrix::zeros(n, p0 + m);
    design.columns_mut(0, p0).copy_from(target.x0());
    for (c, &j) in support.iter().enumerate() {
        design.set_column(p0 + c, &target.x().column(j));
    }
    if m > 0 && numerical_rank(&design) < p0 + m {
        return Err(QutError::RankDeficient("selected columns are dependent on the other half".into()));
    }
    Ok(Projector::new(&design).residual(target.y()).norm_squared() / (n - m) as f64)
}

fn rcv_from_supports(h1: &ProblemInstance, h2: &ProblemInstance, s1: &[usize], s2: &[usize]) -> Result<f64> {
    Ok(0.5 * (cross_variance(h2, s1)? + cross_variance(h1, s2)?))
}

/// Refitted cross-validation with a caller-supplied model selector.
pub fn sigma2_rcv_with<F>(inst: &ProblemInstance, split_seed: u64, selector: F) -> Result<VarianceEstimate>
where
    F: Fn(&ProblemInstance) -> Result<Vec<usize>> + Sync,
{
    require_gaussian(inst)?;
    if inst.n() < 4 {
        return Err(QutError::InvalidInput("refitted cross-validation needs at least four rows".into()));
    }
    let (a, b) = split_halves(inst.n(), split_seed);
    let h1 = inst.select_rows(&a);
    let h2 = inst.select_rows(&b);
    let (s1, s2) = rayon::join(|| selector(&h1), || selector(&h2));
    let (s1, s2) = (s1?, s2?);
    Ok(VarianceEstimate {
        sigma2: rcv_from_supports(&h1, &h2, &s1, &s2)?,
        method: VarianceMethod::Rcv,
        split_sizes: Some((a.len(), b.len())),
        model_sizes: vec![s1.len(), s2.len()],
        iterations: 1,
        converged: true,
    })
}

/// Refitted cross-validation with the lasso tuned by CV-min on each half.
pub fn sigma2_rcv(inst: &ProblemInstance, cv: &CvOptions, split_seed: u64) -> Result<VarianceEstimate> {
    let cfg = SolverConfig::gaussian();
    sigma2_rcv_with(inst, split_seed, |half| {
        let opts = CvOptions { folds: cv.folds.min(half.n()), ..*cv };
        let res = cv_lasso(half, &opts, &cfg)?;
        Ok(lasso_fit(half, res.lambda_min(), &cfg)?.support)
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RefittedQutOptions {
    pub alpha: f64,
    pub mc_samples: usize,
    /// Relative tolerance on the fixed-point gap and bracket width.
    pub tol: f64,
    pub max_steps: usize,
    pub seed: u64,
}

impl Default for RefittedQutOptions {
    fn default() -> Self {
        Self { alpha: DEFAULT_ALPHA, mc_samples: DEFAULT_MC_SAMPLES, tol: 1e-4, max_steps: 60, seed: 0 }
    }
}

/// Lasso threshold at unit noise level; the threshold at level `sigma`
/// is `sigma` times this value.
pub fn lambda_z(inst: &ProblemInstance, alpha: f64, mc_samples: usize, seed: u64) -> Result<f64> {
    let sampler = NullSampler::new(inst, seed).with_sigma(1.0)?;
    let t = compute_qut(&sampler, &NullStatistic::Penalty(PenaltySpec::Lasso), alpha, mc_samples)?;
    Ok(t.lambda_qut)
}

struct HalfProblem {
    inst: ProblemInstance,
    solver: GaussianLasso,
    lambda_z: f64,
}

impl HalfProblem {
    fn support(&self, sigma: f64) -> Result<Vec<usize>> {
        Ok(self.solver.fit(sigma * self.lambda_z, None)?.support)
    }
}

/// Fixed point of `sigma^2 = RCV(sigma^2)` where each half is fitted by the
/// lasso at its own threshold `sigma * lambda_Z`. The split is drawn once,
/// so the gap `g(s) = RCV(s) - s` is a deterministic function. Its smallest
/// downward sign change in `[1e-4 v, 10 v]`, with `v = ||(I - P_X0) y||^2 / N`,
/// is bracketed on a geometric grid and refined by bisection.
pub fn sigma2_refitted_qut(inst: &ProblemInstance, opts: &RefittedQutOptions) -> Result<VarianceEstimate> {
    require_gaussian(inst)?;
    if inst.n() < 4 {
        return Err(QutError::InvalidInput("refitted QUT needs at least four rows".into()));
    }
    if !(opts.tol > 0.0) || opts.max_steps == 0 {
        return Err(QutError::InvalidInput("tolerance and step cap must be positive".into()));
    }
    let cfg = SolverConfig::gaussian();
    let (a, b) = split_halves(inst.n(), opts.seed);
    let make = |rows: &[usize], stream: u64| -> Result<HalfProblem> {
        let half = inst.select_rows(rows);
        let lz = lambda_z(&half, opts.alpha, opts.mc_samples, derive_seed(opts.seed, stream))?;
        Ok(HalfProblem { solver: GaussianLasso::new(&half, &cfg)?, inst: half, lambda_z: lz })
    };
    let (h1, h2) = rayon::join(|| make(&a, 1), || make(&b, 2));
    let (h1, h2) = (h1?, h2?);

    let v = Projector::new(inst.x0()).residual(inst.y()).norm_squared() / inst.n() as f64;
    if !(v > 0.0) {
        return Err(QutError::InvalidInput("response is constant after removing unpenalized covariates".into()));
    }
    let scale_tol = opts.tol * v;

    // g(s) with undefined RCV (too many selected columns) counted as positive.
    let gap = |s2: f64| -> Result<(f64, Vec<usize>)> {
        let sigma = s2.sqrt();
        let (s1, s2sup) = rayon::join(|| h1.support(sigma), || h2.support(sigma));
        let (s1, s2sup) = (s1?, s2sup?);
        let sizes = vec![s1.len(), s2sup.len()];
        match rcv_from_supports(&h1.inst, &h2.inst, &s1, &s2sup) {
            Ok(r) => Ok((r - s2, sizes)),
            Err(QutError::Saturated(_) | QutError::RankDeficient(_)) => Ok((f64::INFINITY, sizes)),
            Err(e) => Err(e),
        }
    };

    let mut evaluated: Vec<(f64, f64, Vec<usize>)> = Vec::new();
    let mut eval = |s: f64| -> Result<(f64, usize)> {
        let (g, sizes) = gap(s)?;
        let widest = sizes.iter().copied().max().unwrap_or(0);
        evaluated.push((s, g, sizes));
        Ok((g, widest))
    };
    // g can cross zero several times: each crossing from g > 0 below to
    // g <= 0 above is a fixed point. Scan down from the top of the bracket
    // and keep the smallest such crossing, stopping once a half model uses
    // half of its rows, where RCV has too few residual degrees of freedom.
    let floor = 1e-4 * v;
    let saturation = (h1.inst.n().min(h2.inst.n()) / 2).max(1);
    let mut steps = 0;
    let mut converged = false;
    let mut bracket = None;
    let mut upper = 10.0 * v;
    let mut g_upper = eval(upper)?.0;
    loop {
        let s = upper / std::f64::consts::SQRT_2;
        if s < floor {
            break;
        }
        let (g, widest) = eval(s)?;
        if g > 0.0 && g_upper <= 0.0 {
            bracket = Some((s, upper));
        }
        if widest >= saturation {
            break;
        }
        upper = s;
        g_upper = g;
    }
    if let Some((mut lo, mut hi)) = bracket {
        converged = true;
        while steps < opts.max_steps && hi - lo > scale_tol {
            steps += 1;
            let mid = 0.5 * (lo + hi);
            let g = eval(mid)?.0;
            if g.abs() <= scale_tol {
                break;
            }
            if g > 0.0 {
                lo = mid;
                // Between support changes g has slope -1, so RCV(mid) is the
                // root if the supports stay the same there.
                let jump = mid + g;
                if jump < hi {
                    let gj = eval(jump)?.0;
                    if gj.abs() <= scale_tol {
                        break;
                    }
                    if gj > 0.0 {
                        lo = jump;
                    } else {
                        hi = jump;
                    }
                }
            } else {
                hi = mid;
            }
        }
    }
    let (cell_lo, cell_hi) = bracket.unwrap_or((0.0, f64::INFINITY));
    let (sigma2, _, sizes) = evaluated
        .iter()
        .filter(|e| e.0 >= cell_lo && e.0 <= cell_hi)
        .min_by(|x, y| x.1.abs().total_cmp(&y.1.abs()).then(x.0.total_cmp(&y.0)))
        .cloned()
        .expect("the bracket ends were evaluated");
    Ok(VarianceEstimate {
        sigma2,
        method: VarianceMethod::RefittedQut,
        split_sizes: Some((a.len(), b.len())),
        model_sizes: sizes,
        iterations: steps,
        converged,
    })
}
