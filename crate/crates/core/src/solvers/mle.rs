use nalgebra::{DMatrix, DVector};

use super::SolverConfig;
use crate::error::{QutError, Result};
use crate::linalg::{inf_norm, least_squares, numerical_rank};
use crate::model::{GlmFamily, ProblemInstance, SparseFit};
use crate::zerothresh::membership_d;

/// Outcome of the constrained null MLE (`beta = 0`).
#[derive(Debug, Clone, PartialEq)]
pub enum NullMle {
    Found { beta0: Vec<f64>, iterations: usize },
    /// No solution of the score equation exists; the response lies outside
    /// the domain `D`.
    NonExistent,
}

impl NullMle {
    pub fn beta0(&self) -> Option<&[f64]> {
        match self {
            NullMle::Found { beta0, .. } => Some(beta0),
            NullMle::NonExistent => None,
        }
    }
}

pub(crate) struct MleOutcome {
    pub coef: DVector<f64>,
    pub iterations: usize,
    pub score_norm: f64,
}

fn neg_loglik(family: GlmFamily, y: &DVector<f64>, eta: &DVector<f64>) -> f64 {
    y.iter().zip(eta.iter()).map(|(&yi, &ti)| family.neg_loglik(yi, ti)).sum()
}

/// Fitted means pinned to the boundary of the mean space: the signature of
/// an MLE escaping to infinity (separation, or zero counts).
fn saturated(family: GlmFamily, y: &DVector<f64>, eta: &DVector<f64>) -> bool {
    y.iter().zip(eta.iter()).any(|(&yi, &ti)| {
        let mu = family.mean(ti);
        match family {
            GlmFamily::Gaussian => false,
            GlmFamily::Bernoulli | GlmFamily::BinomialScaled { .. } => {
                (mu < 1e-10 && yi == 0.0) || (mu > 1.0 - 1e-10 && yi == 1.0)
            }
            GlmFamily::Poisson => mu < 1e-10 && yi == 0.0,
        }
    })
}

fn starting_point(design: &DMatrix<f64>, y: &DVector<f64>, family: GlmFamily) -> DVector<f64> {
    let ybar = y.mean();
    let mu0 = y.map(|v| match family {
        GlmFamily::Gaussian => v,
        GlmFamily::Bernoulli | GlmFamily::BinomialScaled { .. } => (v + 0.5) / 2.0,
        GlmFamily::Poisson => ((v + ybar) / 2.0).max(0.1),
    });
    let target = mu0.map(|m| family.link(m));
    least_squares(design, &target).unwrap_or_else(|_| DVector::zeros(design.ncols()))
}

/// Unpenalized GLM maximum likelihood by damped Newton iterations.
/// Returns `NonExistent` when iterates diverge.
pub(crate) fn glm_mle(
    design: &DMatrix<f64>,
    y: &DVector<f64>,
    family: GlmFamily,
    cfg: &SolverConfig,
) -> Result<MleOutcome> {
    let k = design.ncols();
    if k == 0 {
        return Ok(MleOutcome { coef: DVector::zeros(0), iterations: 0, score_norm: 0.0 });
    }
    if family.is_gaussian() {
        let coef = least_squares(design, y)?;
        let score = design.tr_mul(&(y - design * &coef));
        return Ok(MleOutcome { coef, iterations: 1, score_norm: inf_norm(score.as_slice()) });
    }
    let mut coef = starting_point(design, y, family);
    let mut eta = design * &coef;
    let mut f = neg_loglik(family, y, &eta);
    let mut score_norm = f64::INFINITY;
    for it in 0..cfg.max_newton {
        let mu = eta.map(|t| family.mean(t));
        let w = eta.map(|t| family.variance(t));
        let score = design.tr_mul(&(y - &mu));
        score_norm = inf_norm(score.as_slice());
        let mut wd = design.clone();
        for (mut row, &wi) in wd.row_iter_mut().zip(w.iter()) {
            row *= wi;
        }
        let hess = design.tr_mul(&wd);
        let step = match hess.cholesky() {
            Some(ch) => ch.solve(&score),
            None => {
                if saturated(family, y, &eta) {
                    return Err(QutError::NonExistent("information matrix became singular".into()));
                }
                return Err(QutError::RankDeficient("singular information matrix".into()));
            }
        };
        if step.iter().any(|v| !v.is_finite()) {
            return Err(QutError::NonExistent("non-finite Newton step".into()));
        }
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..60 {
            let cand = &coef + &step * t;
            let cand_eta = design * &cand;
            let fc = neg_loglik(family, y, &cand_eta);
            if fc.is_finite() && fc <= f + 1e-12 * f.abs().max(1.0) {
                coef = cand;
                eta = cand_eta;
                f = fc;
                accepted = true;
                break;
            }
            t *= cfg.line_search_shrink;
        }
        if !accepted {
            break;
        }
        if inf_norm(coef.as_slice()) > cfg.divergence_cap {
            return Err(QutError::NonExistent("coefficients exceeded the divergence cap".into()));
        }
        let step_norm = t * inf_norm(step.as_slice());
        if step_norm <= 1e-10 * (1.0 + inf_norm(coef.as_slice())) {
            let mu = eta.map(|t| family.mean(t));
            let score = design.tr_mul(&(y - &mu));
            score_norm = inf_norm(score.as_slice());
            if saturated(family, y, &eta) {
                return Err(QutError::NonExistent("fitted means reached the boundary".into()));
            }
            return Ok(MleOutcome { coef, iterations: it + 1, score_norm });
        }
    }
    if saturated(family, y, &eta) {
        Err(QutError::NonExistent("fitted means reached the boundary".into()))
    } else {
        Err(QutError::Numerical(format!("Newton iterations did not converge (score {score_norm:e})")))
    }
}

/// Solves `X0^T y = X0^T mu(v)` for the unpenalized coefficients.
pub fn null_mle(inst: &ProblemInstance, cfg: &SolverConfig) -> Result<NullMle> {
    let family = inst.family();
    if inst.p0() == 0 {
        return Ok(NullMle::Found { beta0: Vec::new(), iterations: 0 });
    }
    if inst.is_intercept_only() {
        if !membership_d(inst, cfg)? {
            return Ok(NullMle::NonExistent);
        }
        return Ok(NullMle::Found { beta0: vec![family.link(inst.y().mean())], iterations: 0 });
    }
    if family.is_gaussian() {
        let svd = inst.x0().clone().svd(true, true);
        let v = svd.solve(inst.y(), 1e-12).map_err(|e| QutError::Numerical(e.to_string()))?;
        return Ok(NullMle::Found { beta0: v.as_slice().to_vec(), iterations: 1 });
    }
    match glm_mle(inst.x0(), inst.y(), family, cfg) {
        Ok(out) => Ok(NullMle::Found { beta0: out.coef.as_slice().to_vec(), iterations: out.iterations }),
        Err(QutError::NonExistent(_)) => Ok(NullMle::NonExistent),
        Err(e) => Err(e),
    }
}

/// Unpenalized MLE over `X0` and the selected columns of `X`.
pub fn mle_refit(inst: &ProblemInstance, support: &[usize], cfg: &SolverConfig) -> Result<SparseFit> {
    let p0 = inst.p0();
    if let Some(&bad) = support.iter().find(|&&j| j >= inst.p()) {
        return Err(QutError::InvalidInput(format!("support index {bad} out of range")));
    }
    let mut cols = support.to_vec();
    cols.sort_unstable();
    cols.dedup();
    let k = p0 + cols.len();
    if k > inst.n() {
        return Err(QutError::RankDeficient(format!("{k} coefficients for {} observations", inst.n())));
    }
    let mut design = DMatrix::zeros(inst.n(), k);
    design.columns_mut(0, p0).copy_from(inst.x0());
    for (c, &j) in cols.iter().enumerate() {
        design.set_column(p0 + c, &inst.x().column(j));
    }
    if numerical_rank(&design) < k {
        return Err(QutError::RankDeficient("selected columns are linearly dependent".into()));
    }
    let out = glm_mle(&design, inst.y(), inst.family(), cfg)?;
    let beta0 = out.coef.rows(0, p0).iter().cloned().collect();
    let mut beta = vec![0.0; inst.p()];
    for (c, &j) in cols.iter().enumerate() {
        beta[j] = out.coef[p0 + c];
    }
    Ok(SparseFit::new(beta0, beta, 0.0, out.score_norm, out.iterations, true))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ones(n: usize) -> DMatrix<f64> {
        DMatrix::from_element(n, 1, 1.0)
    }

    #[test]
    fn gaussian_null_mle_is_mean() {
        let y = DVector::from_vec(vec![1.0, 2.0, 6.0]);
        let inst = ProblemInstance::new(ones(3), DMatrix::zeros(3, 0), y, GlmFamily::Gaussian).unwrap();
        let v = null_mle(&inst, &SolverConfig::default()).unwrap();
        assert!((v.beta0().unwrap()[0] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn bernoulli_null_mle_is_logit_mean() {
        let y = DVector::from_vec(vec![1.0, 0.0, 0.0, 1.0, 1.0]);
        let inst = ProblemInstance::new(ones(5), DMatrix::zeros(5, 0), y, GlmFamily::Bernoulli).unwrap();
        let v = null_mle(&inst, &SolverConfig::glm()).unwrap();
        assert!((v.beta0().unwrap()[0] - (0.6f64 / 0.4).ln()).abs() < 1e-12);
    }

    #[test]
    fn poisson_zero_counts_have_no_null_mle() {
        let y = DVector::zeros(4);
        let inst = ProblemInstance::new(ones(4), DMatrix::zeros(4, 0), y, GlmFamily::Poisson).unwrap();
        assert_eq!(null_mle(&inst, &SolverConfig::glm()).unwrap(), NullMle::NonExistent);
    }

    #[test]
    fn general_x0_newton_matches_score_equation() {
        // two unpenalized columns: intercept and a trend
        let n = 20;
        let x0 = DMatrix::from_fn(n, 2, |i, j| if j == 0 { 1.0 } else { i as f64 / n as f64 });
        let y = DVector::from_fn(n, |i, _| ((i * 7) % 5) as f64);
        let inst = ProblemInstance::new(x0.clone(), DMatrix::zeros(n, 0), y.clone(), GlmFamily::Poisson).unwrap();
        let v = null_mle(&inst, &SolverConfig::glm()).unwrap();
        let v = DVector::from_column_slice(v.beta0().unwrap());
        let mu = (&x0 * v).map(f64::exp);
        let score = x0.tr_mul(&(y - mu));
        assert!(inf_norm(score.as_slice()) < 1e-7);
    }

    #[test]
    fn separated_general_x0_is_nonexistent() {
        let n = 10;
        let x0 = DMatrix::from_fn(n, 2, |i, j| if j == 0 { 1.0 } else { i as f64 });
        let y = DVector::from_fn(n, |i, _| if i >= 5 { 1.0 } else { 0.0 });
        let inst = ProblemInstance::new(x0, DMatrix::zeros(n, 0), y, GlmFamily::Bernoulli).unwrap();
        assert_eq!(null_mle(&inst, &SolverConfig::glm()).unwrap(), NullMle::NonExistent);
    }

    #[test]
    fn refit_examples() {
        let y = DVector::from_vec(vec![1.0, 2.0, 4.0]);
        let x = DMatrix::from_row_slice(3, 3, &[2.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 1.0, 3.0]);
        let with_int = ProblemInstance::with_intercept(x.clone(), y.clone(), GlmFamily::Gaussian).unwrap();
        let fit = mle_refit(&with_int, &[], &SolverConfig::default()).unwrap();
        assert!((fit.beta0[0] - 7.0 / 3.0).abs() < 1e-12);
        assert!(fit.is_zero());

        let no_int = ProblemInstance::without_x0(x.clone(), y.clone(), GlmFamily::Gaussian).unwrap();
        let fit = mle_refit(&no_int, &[0, 1, 2], &SolverConfig::default()).unwrap();
        let exact = x.clone().lu().solve(&y).unwrap();
        for (a, b) in fit.beta.iter().zip(exact.iter()) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn refit_reports_separation() {
        let n = 12;
        let x = DMatrix::from_fn(n, 2, |i, j| if j == 0 { i as f64 - 5.5 } else { ((i * 5) % 3) as f64 });
        let y = DVector::from_fn(n, |i, _| if i >= 6 { 1.0 } else { 0.0 });
        let inst = ProblemInstance::with_intercept(x, y, GlmFamily::Bernoulli).unwrap();
        assert!(matches!(mle_refit(&inst, &[0], &SolverConfig::glm()), Err(QutError::NonExistent(_))));
        assert!(mle_refit(&inst, &[1], &SolverConfig::glm()).is_ok());
    }

    #[test]
    fn refit_rejects_dependent_columns() {
        let x = DMatrix::from_row_slice(4, 2, &[1.0, 2.0, 2.0, 4.0, 3.0, 6.0, 4.0, 8.0]);
        let y = DVector::from_vec(vec![1.0, 0.0, 2.0, 1.0]);
        let inst = ProblemInstance::without_x0(x, y, GlmFamily::Gaussian).unwrap();
        assert!(matches!(mle_refit(&inst, &[0, 1], &SolverConfig::default()), Err(QutError::RankDeficient(_))));
    }
}
