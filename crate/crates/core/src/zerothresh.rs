//! Closed-form zero-thresholding functions: for each estimator, the
//! smallest penalty at which every penalized coefficient is exactly zero.

use nalgebra::{DMatrix, DVector};

use crate::error::{QutError, Result};
use crate::linalg::{first_difference_dual, inf_norm, numerical_rank, pivot_order, Projector};
use crate::model::{GlmFamily, ProblemInstance};
use crate::solvers::{null_mle, tv1d_fit, NullMle, SolverConfig};

/// Largest design for which best-subset thresholds are enumerated.
pub const BEST_SUBSET_CAP: usize = 20;
/// Tolerance on `max |X^T X - I|` for branches that need an orthonormal design.
pub const ORTHONORMAL_TOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub enum PenaltySpec {
    Lasso,
    AdaptiveLasso { weights: Vec<f64> },
    LadLasso,
    SqrtLasso,
    GroupLasso { groups: Vec<Vec<usize>> },
    GroupSqrtLasso { groups: Vec<Vec<usize>> },
    /// `lambda ||B beta||_1` with `B` of full row rank.
    GeneralizedLasso { b: DMatrix<f64> },
    TotalVariation1D,
    BestSubset,
    SubbotinOrthonormal { nu: f64 },
    ElasticNet { lambda2: f64 },
    FusedLassoOrthonormal { lambda2: f64 },
    /// Response is the column-major vectorization of a matrix with `ncols` columns.
    LowRankTrace { ncols: usize },
    DensityTV,
}

impl PenaltySpec {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Lasso => "lasso",
            Self::AdaptiveLasso { .. } => "adaptive-lasso",
            Self::LadLasso => "lad-lasso",
            Self::SqrtLasso => "sqrt-lasso",
            Self::GroupLasso { .. } => "group-lasso",
            Self::GroupSqrtLasso { .. } => "group-sqrt-lasso",
            Self::GeneralizedLasso { .. } => "generalized-lasso",
            Self::TotalVariation1D => "tv1d",
            Self::BestSubset => "best-subset",
            Self::SubbotinOrthonormal { .. } => "subbotin",
            Self::ElasticNet { .. } => "elastic-net",
            Self::FusedLassoOrthonormal { .. } => "fused-lasso",
            Self::LowRankTrace { .. } => "low-rank",
            Self::DensityTV => "density-tv",
        }
    }

    /// Branches that accept unpenalized covariates by projecting them out.
    pub fn supports_x0(&self) -> bool {
        matches!(
            self,
            Self::Lasso
                | Self::AdaptiveLasso { .. }
                | Self::SqrtLasso
                | Self::GroupLasso { .. }
                | Self::GroupSqrtLasso { .. }
                | Self::ElasticNet { .. }
        )
    }
}

fn incompatible(msg: impl Into<String>) -> QutError {
    QutError::IncompatiblePenalty(msg.into())
}

pub fn check_orthonormal(x: &DMatrix<f64>) -> Result<()> {
    let gram = x.tr_mul(x);
    let dev = (gram - DMatrix::identity(x.ncols(), x.ncols())).amax();
    if dev > ORTHONORMAL_TOL {
        return Err(incompatible(format!("design is not orthonormal (max |X^T X - I| = {dev:e})")));
    }
    Ok(())
}

fn check_identity(x: &DMatrix<f64>) -> Result<()> {
    if !x.is_square() || (x - DMatrix::identity(x.nrows(), x.ncols())).amax() > ORTHONORMAL_TOL {
        return Err(incompatible("this penalty requires the identity design"));
    }
    Ok(())
}

fn check_groups(groups: &[Vec<usize>], p: usize) -> Result<()> {
    let mut seen = vec![false; p];
    for g in groups {
        if g.is_empty() {
            return Err(QutError::InvalidInput("empty group".into()));
        }
        for &j in g {
            if j >= p || seen[j] {
                return Err(QutError::InvalidInput(format!("groups do not partition the {p} columns (index {j})")));
            }
            seen[j] = true;
        }
    }
    if seen.iter().any(|s| !s) {
        return Err(QutError::InvalidInput("groups do not cover every column".into()));
    }
    Ok(())
}

fn xt_inf(x: &DMatrix<f64>, y: &DVector<f64>) -> f64 {
    if x.ncols() == 0 {
        return 0.0;
    }
    x.tr_mul(y).amax()
}

fn group_max(x: &DMatrix<f64>, y: &DVector<f64>, groups: &[Vec<usize>]) -> f64 {
    let xty = x.tr_mul(y);
    groups
        .iter()
        .map(|g| g.iter().map(|&j| xty[j] * xty[j]).sum::<f64>().sqrt())
        .fold(0.0, f64::max)
}

fn scale_invariant(num: f64, y: &DVector<f64>) -> Result<f64> {
    let norm = y.norm();
    if norm == 0.0 {
        return Err(QutError::InvalidInput("response is zero after removing unpenalized covariates".into()));
    }
    Ok(num / norm)
}

/// Zero-thresholding function of the penalized least-squares style estimators.
pub fn lambda0(inst: &ProblemInstance, penalty: &PenaltySpec) -> Result<f64> {
    if inst.p0() > 0 && !penalty.supports_x0() {
        return Err(incompatible(format!("{} does not take unpenalized covariates", penalty.name())));
    }
    let x = inst.x();
    let y = if inst.p0() > 0 { Projector::new(inst.x0()).residual(inst.y()) } else { inst.y().clone() };
    match penalty {
        PenaltySpec::Lasso | PenaltySpec::ElasticNet { .. } => {
            if let PenaltySpec::ElasticNet { lambda2 } = penalty {
                if !(*lambda2 >= 0.0) {
                    return Err(QutError::InvalidInput("lambda2 must be nonnegative".into()));
                }
            }
            Ok(xt_inf(x, &y))
        }
        PenaltySpec::AdaptiveLasso { weights } => {
            if weights.len() != inst.p() || weights.iter().any(|w| !(*w > 0.0) || !w.is_finite()) {
                return Err(QutError::InvalidInput("adaptive weights must be positive, one per column".into()));
            }
            let xty = x.tr_mul(&y);
            Ok(xty.iter().zip(weights).map(|(v, w)| (v * w).abs()).fold(0.0, f64::max))
        }
        PenaltySpec::LadLasso => {
            let s = y.map(|v| if v > 0.0 { 1.0 } else if v < 0.0 { -1.0 } else { 0.0 });
            Ok(xt_inf(x, &s))
        }
        PenaltySpec::SqrtLasso => scale_invariant(xt_inf(x, &y), &y),
        PenaltySpec::GroupLasso { groups } => {
            check_groups(groups, inst.p())?;
            Ok(group_max(x, &y, groups))
        }
        PenaltySpec::GroupSqrtLasso { groups } => {
            check_groups(groups, inst.p())?;
            scale_invariant(group_max(x, &y, groups), &y)
        }
        PenaltySpec::GeneralizedLasso { b } => generalized_lasso(x, &y, b),
        PenaltySpec::TotalVariation1D => {
            check_identity(x)?;
            Ok(inf_norm(&first_difference_dual(y.as_slice())))
        }
        PenaltySpec::BestSubset => best_subset(x, &y),
        PenaltySpec::SubbotinOrthonormal { nu } => {
            if !(*nu >= 0.0 && *nu < 1.0) {
                return Err(QutError::InvalidInput(format!("nu must lie in [0, 1), got {nu}")));
            }
            check_orthonormal(x)?;
            let m = xt_inf(x, &y);
            Ok((m / (2.0 - nu)).powf(2.0 - nu) / (2.0 * (1.0 - nu)).powf(nu - 1.0))
        }
        PenaltySpec::FusedLassoOrthonormal { lambda2 } => {
            if !(*lambda2 >= 0.0) {
                return Err(QutError::InvalidInput("lambda2 must be nonnegative".into()));
            }
            check_orthonormal(x)?;
            let z = x.tr_mul(&y);
            Ok(inf_norm(&tv1d_fit(z.as_slice(), *lambda2)?))
        }
        PenaltySpec::LowRankTrace { ncols } => {
            check_identity(x)?;
            if *ncols == 0 || !inst.n().is_multiple_of(*ncols) {
                return Err(QutError::Dimension(format!("{} entries cannot form a matrix with {ncols} columns", inst.n())));
            }
            let m = DMatrix::from_column_slice(inst.n() / ncols, *ncols, y.as_slice());
            Ok(lambda0_matrix(&m))
        }
        PenaltySpec::DensityTV => density_tv(y.as_slice()),
    }
}

/// Largest singular value: the zero-threshold of singular-value soft thresholding.
pub fn lambda0_matrix(y: &DMatrix<f64>) -> f64 {
    if y.is_empty() {
        return 0.0;
    }
    y.singular_values().max()
}

fn generalized_lasso(x: &DMatrix<f64>, y: &DVector<f64>, b: &DMatrix<f64>) -> Result<f64> {
    let (m, p) = b.shape();
    if p != x.ncols() {
        return Err(QutError::Dimension(format!("B has {p} columns, X has {}", x.ncols())));
    }
    if m == 0 {
        return Ok(0.0);
    }
    if numerical_rank(b) < m {
        return Err(incompatible("B must have full row rank"));
    }
    let order = pivot_order(b);
    let (sel, rest) = order.split_at(m);
    let b_sel_inv = b
        .select_columns(sel)
        .try_inverse()
        .ok_or_else(|| QutError::Numerical("selected block of B is singular".into()))?;
    let a1 = x.select_columns(sel) * &b_sel_inv;
    let r = if rest.is_empty() {
        y.clone()
    } else {
        let a2 = x.select_columns(rest) - &a1 * b.select_columns(rest);
        Projector::new(&a2).residual(y)
    };
    Ok(a1.tr_mul(&r).amax())
}

fn best_subset(x: &DMatrix<f64>, y: &DVector<f64>) -> Result<f64> {
    let p = x.ncols();
    if p > BEST_SUBSET_CAP {
        return Err(QutError::TooManyColumns { p, cap: BEST_SUBSET_CAP });
    }
    let rank = numerical_rank(x);
    let mut delta = vec![0.0f64; rank + 1];
    let scale = x.amax().max(1.0);
    let mut basis: Vec<DVector<f64>> = Vec::with_capacity(rank);
    subsets(x, y, 0, 0.0, &mut basis, &mut delta, rank, 1e-10 * scale);
    Ok((1..=rank).map(|k| 0.5 * delta[k] / k as f64).fold(0.0, f64::max))
}

/// Depth-first enumeration of column subsets in increasing index order,
/// carrying an orthonormal basis so `||P y||^2` updates incrementally.
#[allow(clippy::too_many_arguments)]
fn subsets(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    start: usize,
    proj: f64,
    basis: &mut Vec<DVector<f64>>,
    delta: &mut [f64],
    rank: usize,
    tol: f64,
) {
    let depth = basis.len();
    if depth == rank {
        return;
    }
    for j in start..x.ncols() {
        let mut q = x.column(j).into_owned();
        for u in basis.iter() {
            let c = u.dot(&q);
            q.axpy(-c, u, 1.0);
        }
        let norm = q.norm();
        let gain = if norm > tol {
            q /= norm;
            q.dot(y).powi(2)
        } else {
            q.fill(0.0);
            0.0
        };
        let total = proj + gain;
        if total > delta[depth + 1] {
            delta[depth + 1] = total;
        }
        basis.push(q);
        subsets(x, y, j + 1, total, basis, delta, rank, tol);
        basis.pop();
    }
}

fn density_tv(obs: &[f64]) -> Result<f64> {
    let n = obs.len();
    if n < 2 {
        return Err(QutError::InvalidInput("need at least two observations".into()));
    }
    let mut s = obs.to_vec();
    s.sort_by(f64::total_cmp);
    let mut a = vec![0.0; n];
    a[0] = (s[1] - s[0]) / 2.0;
    a[n - 1] = (s[n - 1] - s[n - 2]) / 2.0;
    for i in 1..n - 1 {
        a[i] = (s[i + 1] - s[i - 1]) / 2.0;
    }
    let total: f64 = a.iter().sum();
    let mut cum = 0.0;
    let mut best: f64 = 0.0;
    for (k, ak) in a.iter().enumerate().take(n - 1) {
        cum += ak;
        best = best.max((n as f64 * cum - (k + 1) as f64 * total).abs());
    }
    Ok(best)
}

/// Whether the response lies in the set where the null MLE exists. For
/// an intercept-only block the set has a closed form; otherwise it is
/// decided by whether the null MLE iteration converges.
pub fn membership_d(inst: &ProblemInstance, cfg: &SolverConfig) -> Result<bool> {
    let family = inst.family();
    if family.is_gaussian() || inst.p0() == 0 {
        return Ok(true);
    }
    if inst.is_intercept_only() {
        let y = inst.y().as_slice();
        return Ok(match family {
            GlmFamily::Gaussian => true,
            GlmFamily::Poisson => y.iter().any(|&v| v > 0.0),
            GlmFamily::Bernoulli | GlmFamily::BinomialScaled { .. } => {
                y.iter().any(|&v| v > 0.0) && y.iter().any(|&v| v < 1.0)
            }
        });
    }
    Ok(matches!(null_mle(inst, cfg)?, NullMle::Found { .. }))
}

/// Zero-threshold of the lasso-penalized GLM: `||X^T (y - mu(v))||_inf`
/// with `v` the null MLE, or `+inf` when that MLE does not exist. Without
/// unpenalized covariates the null parameter is taken as `v = 0`.
pub fn lambda0_glm(inst: &ProblemInstance, cfg: &SolverConfig) -> Result<f64> {
    let family = inst.family();
    let eta = if inst.p0() == 0 {
        DVector::zeros(inst.n())
    } else {
        match null_mle(inst, cfg)? {
            NullMle::NonExistent => return Ok(f64::INFINITY),
            NullMle::Found { beta0, .. } => inst.x0() * DVector::from_vec(beta0),
        }
    };
    let resid = DVector::from_fn(inst.n(), |i, _| inst.y()[i] - family.mean(eta[i]));
    Ok(xt_inf(inst.x(), &resid))
}
