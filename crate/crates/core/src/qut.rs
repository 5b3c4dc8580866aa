//! Monte Carlo quantile universal thresholds: draws of the zero-threshold
//! under the null model and their upper quantile.

use nalgebra::DVector;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{QutError, Result};
use crate::linalg::Projector;
use crate::model::{ProblemInstance, ThresholdResult};
use crate::rng::{derive_seed, sample_response, standard_normals, stream_rng, tag};
use crate::solvers::SolverConfig;
use crate::zerothresh::{lambda0, lambda0_glm, PenaltySpec};

pub const DEFAULT_ALPHA: f64 = 0.05;
pub const DEFAULT_MC_SAMPLES: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DesignMode {
    #[default]
    Fixed,
    /// Rows of `[X0, X]` are resampled with replacement for every draw.
    RandomBootstrapRows,
}

/// Which zero-threshold is evaluated on the null responses.
#[derive(Debug, Clone, PartialEq)]
pub enum NullStatistic {
    /// A least-squares catalogue entry with Gaussian null noise.
    Penalty(PenaltySpec),
    /// The lasso-penalized GLM of the template's family.
    Glm,
}

/// Generator of null responses `Y0` with linear predictor `X0 beta0`.
#[derive(Debug, Clone)]
pub struct NullSampler {
    template: ProblemInstance,
    design_mode: DesignMode,
    sigma: f64,
    intercept_beta0: Vec<f64>,
    seed: u64,
}

impl NullSampler {
    /// Fixed design, `beta0 = 0`, and the template's noise level (1 if unset).
    pub fn new(template: &ProblemInstance, seed: u64) -> Self {
        Self {
            template: template.clone(),
            design_mode: DesignMode::Fixed,
            sigma: template.sigma().unwrap_or(1.0),
            intercept_beta0: vec![0.0; template.p0()],
            seed,
        }
    }

    pub fn with_design_mode(mut self, mode: DesignMode) -> Self {
        self.design_mode = mode;
        self
    }

    pub fn with_sigma(mut self, sigma: f64) -> Result<Self> {
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(QutError::InvalidInput(format!("sigma must be positive, got {sigma}")));
        }
        self.sigma = sigma;
        Ok(self)
    }

    pub fn with_intercept_beta0(mut self, beta0: Vec<f64>) -> Result<Self> {
        if beta0.len() != self.template.p0() {
            return Err(QutError::Dimension(format!(
                "{} null coefficients for {} unpenalized columns",
                beta0.len(),
                self.template.p0()
            )));
        }
        if beta0.iter().any(|b| !b.is_finite()) {
            return Err(QutError::InvalidInput("null coefficients must be finite".into()));
        }
        self.intercept_beta0 = beta0;
        Ok(self)
    }

    pub fn template(&self) -> &ProblemInstance {
        &self.template
    }

    pub fn design_mode(&self) -> DesignMode {
        self.design_mode
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn intercept_beta0(&self) -> &[f64] {
        &self.intercept_beta0
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }
}

/// Sampler state shared by all draws of one threshold computation.
pub(crate) struct Prepared<'a> {
    sampler: &'a NullSampler,
    stat: &'a NullStatistic,
    projector: Option<Projector>,
    eta: DVector<f64>,
    cfg: SolverConfig,
    pivotal: bool,
    base_seed: u64,
}

impl<'a> Prepared<'a> {
    pub(crate) fn new(sampler: &'a NullSampler, stat: &'a NullStatistic) -> Result<Self> {
        let inst = &sampler.template;
        let gaussian = inst.family().is_gaussian();
        if let NullStatistic::Penalty(spec) = stat {
            if !gaussian {
                return Err(QutError::IncompatiblePenalty(format!(
                    "{} has Gaussian null noise; use the GLM statistic for the {} family",
                    spec.name(),
                    inst.family().name()
                )));
            }
            if inst.p0() > 0 && !spec.supports_x0() {
                return Err(QutError::IncompatiblePenalty(format!("{} does not take unpenalized covariates", spec.name())));
            }
        }
        let pivotal = matches!(stat, NullStatistic::Penalty(PenaltySpec::Lasso | PenaltySpec::SqrtLasso));
        let projector = match sampler.design_mode {
            DesignMode::Fixed => Some(Projector::new(inst.x0())),
            DesignMode::RandomBootstrapRows => None,
        };
        let eta = null_predictor(inst, &sampler.intercept_beta0);
        Ok(Self {
            sampler,
            stat,
            projector,
            eta,
            cfg: SolverConfig::for_family(inst.family()),
            pivotal,
            base_seed: derive_seed(sampler.seed, tag::NULL_DRAWS),
        })
    }

    pub(crate) fn draw(&self, i: u64) -> Result<f64> {
        self.draw_with(i, self.pivotal)
    }

    /// One draw of the null statistic. The pivotal route evaluates the
    /// Gaussian lasso and square-root lasso statistics on projected noise
    /// directly; the generic route builds `Y0` and calls the catalogue.
    pub(crate) fn draw_with(&self, i: u64, pivotal: bool) -> Result<f64> {
        let mut rng = stream_rng(self.base_seed, i);
        let template = &self.sampler.template;
        let n = template.n();
        let resampled;
        let (design, eta) = match self.sampler.design_mode {
            DesignMode::Fixed => (template, self.eta.clone()),
            DesignMode::RandomBootstrapRows => {
                let rows: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
                resampled = template.select_rows(&rows);
                let eta = null_predictor(&resampled, &self.sampler.intercept_beta0);
                (&resampled, eta)
            }
        };
        let sigma = self.sampler.sigma;
        match self.stat {
            NullStatistic::Penalty(spec) => {
                let z = standard_normals(&mut rng, n);
                if pivotal {
                    let r = match &self.projector {
                        Some(p) => p.residual(&z),
                        None => Projector::new(design.x0()).residual(&z),
                    };
                    let m = if design.p() == 0 { 0.0 } else { design.x().tr_mul(&r).amax() };
                    return Ok(match spec {
                        PenaltySpec::SqrtLasso => {
                            let norm = r.norm();
                            if norm == 0.0 {
                                return Err(QutError::Interpolation);
                            }
                            m / norm
                        }
                        _ => sigma * m,
                    });
                }
                let y0 = eta + z * sigma;
                lambda0(&design.with_response(y0)?, spec)
            }
            NullStatistic::Glm => {
                let family = template.family();
                let y0 = if family.is_gaussian() {
                    eta + standard_normals(&mut rng, n) * sigma
                } else {
                    eta.map(|t| sample_response(&mut rng, family, t))
                };
                lambda0_glm(&design.with_response(y0)?, &self.cfg)
            }
        }
    }
}

fn null_predictor(inst: &ProblemInstance, beta0: &[f64]) -> DVector<f64> {
    if inst.p0() == 0 {
        DVector::zeros(inst.n())
    } else {
        inst.x0() * DVector::from_column_slice(beta0)
    }
}

/// One draw `i` of the null-thresholding statistic. Draw `i` uses its own
/// random stream, so any subset of draws can be reproduced independently.
pub fn sample_null_stat(sampler: &NullSampler, stat: &NullStatistic, i: u64) -> Result<f64> {
    Prepared::new(sampler, stat)?.draw(i)
}

/// All `m` null draws in draw order.
pub fn null_draws(sampler: &NullSampler, stat: &NullStatistic, m: usize) -> Result<Vec<f64>> {
    let prepared = Prepared::new(sampler, stat)?;
    (0..m as u64).into_par_iter().map(|i| prepared.draw(i)).collect()
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(QutError::InvalidInput(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    Ok(())
}

/// The `ceil((1 - alpha) M)`-th smallest draw, with infinite draws last.
pub fn upper_quantile(draws: &[f64], alpha: f64) -> Result<f64> {
    check_alpha(alpha)?;
    if draws.is_empty() {
        return Err(QutError::InvalidInput("no draws".into()));
    }
    if draws.iter().any(|v| v.is_nan()) {
        return Err(QutError::Numerical("null draw is NaN".into()));
    }
    let mut sorted = draws.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(sorted[quantile_index(alpha, sorted.len())])
}

fn quantile_index(alpha: f64, m: usize) -> usize {
    let k = ((1.0 - alpha) * m as f64 - 1e-9).ceil() as usize;
    k.clamp(1, m) - 1
}

/// Monte Carlo threshold from `m` null draws. An infinite quantile is
/// returned as `lambda_qut = +inf`; callers decide whether that is fatal.
pub fn compute_qut(sampler: &NullSampler, stat: &NullStatistic, alpha: f64, m: usize) -> Result<ThresholdResult> {
    check_alpha(alpha)?;
    if m == 0 {
        return Err(QutError::InvalidInput("at least one Monte Carlo draw is required".into()));
    }
    let draws = null_draws(sampler, stat, m)?;
    threshold_from_draws(&draws, alpha, sampler.seed)
}

pub fn threshold_from_draws(draws: &[f64], alpha: f64, seed: u64) -> Result<ThresholdResult> {
    let lambda_qut = upper_quantile(draws, alpha)?;
    let infinite = draws.iter().filter(|v| v.is_infinite()).count();
    Ok(ThresholdResult {
        lambda_qut,
        alpha,
        mc_samples: draws.len(),
        infinite_fraction: infinite as f64 / draws.len() as f64,
        seed,
    })
}

/// Level `1/sqrt(pi log P)` at which the best-subset closed form holds.
pub fn alpha_p(p: usize) -> Result<f64> {
    if p < 2 {
        return Err(QutError::InvalidInput("the level 1/sqrt(pi log P) needs P >= 2".into()));
    }
    Ok(1.0 / (std::f64::consts::PI * (p as f64).ln()).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ClosedForm {
    BestSubsetOrthonormal { sigma: f64, p: usize },
    TV1D { sigma: f64, p: usize },
    GroupLassoOrthonormal { sigma: f64, p: usize, q: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClosedFormQut {
    pub lambda: f64,
    /// Asymptotic level implied by the formula, where it is known.
    pub implied_alpha: Option<f64>,
}

/// Asymptotic thresholds available in closed form.
pub fn closed_form_qut(kind: ClosedForm) -> Result<ClosedFormQut> {
    let sigma = match kind {
        ClosedForm::BestSubsetOrthonormal { sigma, .. }
        | ClosedForm::TV1D { sigma, .. }
        | ClosedForm::GroupLassoOrthonormal { sigma, .. } => sigma,
    };
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(QutError::InvalidInput(format!("sigma must be positive, got {sigma}")));
    }
    match kind {
        ClosedForm::BestSubsetOrthonormal { p, .. } => {
            let implied = alpha_p(p)?;
            Ok(ClosedFormQut { lambda: sigma * sigma * (p as f64).ln(), implied_alpha: Some(implied) })
        }
        ClosedForm::TV1D { p, .. } => {
            let ll = log_log(p)?;
            Ok(ClosedFormQut { lambda: sigma * (p as f64 * ll).sqrt() / 2.0, implied_alpha: None })
        }
        ClosedForm::GroupLassoOrthonormal { p, q, .. } => {
            if q == 0 {
                return Err(QutError::InvalidInput("group size must be positive".into()));
            }
            let ll = log_log(p)?;
            let q = q as f64;
            let radicand = 2.0 * (p as f64).ln() + (q - 1.0) * ll - 2.0 * ln_gamma(q / 2.0);
            if radicand < 0.0 {
                return Err(QutError::InvalidInput("too few groups for the asymptotic formula".into()));
            }
            Ok(ClosedFormQut { lambda: sigma * radicand.sqrt(), implied_alpha: None })
        }
    }
}

fn log_log(p: usize) -> Result<f64> {
    if p < 3 {
        return Err(QutError::InvalidInput(format!("log log P needs P >= 3, got {p}")));
    }
    Ok((p as f64).ln().ln())
}

/// Null statistics with an orthonormal design, where `X^T Y0` is itself
/// standard normal noise and can be drawn directly.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OrthonormalStatistic {
    /// `||Z||_inf^2 / 2`, the best-subset threshold.
    BestSubset,
    /// `max_g ||Z_g||_2` over `p` groups of size `q`.
    GroupMax { q: usize },
}

pub fn orthonormal_null_quantile(
    stat: OrthonormalStatistic,
    p: usize,
    sigma: f64,
    alpha: f64,
    m: usize,
    seed: u64,
) -> Result<ThresholdResult> {
    check_alpha(alpha)?;
    if m == 0 || p == 0 {
        return Err(QutError::InvalidInput("need at least one draw and one column".into()));
    }
    let base = derive_seed(seed, tag::NULL_DRAWS);
    let draws: Vec<f64> = (0..m as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream_rng(base, i);
            match stat {
                OrthonormalStatistic::BestSubset => {
                    let z = standard_normals(&mut rng, p);
                    let mx = sigma * z.amax();
                    0.5 * mx * mx
                }
                OrthonormalStatistic::GroupMax { q } => {
                    let z = standard_normals(&mut rng, p * q.max(1));
                    z.as_slice()
                        .chunks(q.max(1))
                        .map(|g| sigma * g.iter().map(|v| v * v).sum::<f64>().sqrt())
                        .fold(0.0, f64::max)
                }
            }
        })
        .collect();
    threshold_from_draws(&draws, alpha, seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::GlmFamily;
    use nalgebra::DMatrix;
    use statrs::distribution::{ContinuousCDF, Normal};

    fn gaussian_identity(p: usize) -> ProblemInstance {
        ProblemInstance::without_x0(DMatrix::identity(p, p), DVector::zeros(p), GlmFamily::Gaussian).unwrap()
    }

    fn lasso() -> NullStatistic {
        NullStatistic::Penalty(PenaltySpec::Lasso)
    }

    #[test]
    fn single_column_quantile() {
        let sampler = NullSampler::new(&gaussian_identity(1), 1);
        let t = compute_qut(&sampler, &lasso(), 0.05, 100_000).unwrap();
        assert!((t.lambda_qut - 1.959964).abs() < 0.02, "{}", t.lambda_qut);
        assert_eq!(t.infinite_fraction, 0.0);
    }

    #[test]
    fn identity_design_matches_max_normal_quantile() {
        let p = 10;
        let alpha = 0.05;
        let sampler = NullSampler::new(&gaussian_identity(p), 2);
        let t = compute_qut(&sampler, &lasso(), alpha, 40_000).unwrap();
        let exact = Normal::standard().inverse_cdf((1.0 + (1.0 - alpha).powf(1.0 / p as f64)) / 2.0);
        assert!((t.lambda_qut - exact).abs() < 0.03 * exact, "{} vs {exact}", t.lambda_qut);
    }

    #[test]
    fn single_draw_at_half() {
        let sampler = NullSampler::new(&gaussian_identity(3), 3);
        let t = compute_qut(&sampler, &lasso(), 0.5, 1).unwrap();
        assert_eq!(t.lambda_qut, sample_null_stat(&sampler, &lasso(), 0).unwrap());
    }

    #[test]
    fn quantile_convention() {
        let draws: Vec<f64> = (1..=100).map(f64::from).collect();
        assert_eq!(upper_quantile(&draws, 0.05).unwrap(), 95.0);
        assert_eq!(upper_quantile(&draws, 0.999).unwrap(), 1.0);
        assert_eq!(upper_quantile(&[2.0, f64::INFINITY, 1.0], 0.5).unwrap(), 2.0);
        assert_eq!(upper_quantile(&[2.0, f64::INFINITY, 1.0], 0.1).unwrap(), f64::INFINITY);
        assert!(upper_quantile(&draws, 0.0).is_err());
        assert!(upper_quantile(&draws, 1.0).is_err());
    }

    fn random_gaussian(n: usize, p: usize, seed: u64) -> ProblemInstance {
        let mut rng = stream_rng(seed, 0);
        let x = DMatrix::from_fn(n, p, |_, _| rng.sample::<f64, _>(rand_distr::StandardNormal));
        ProblemInstance::with_intercept(x, DVector::zeros(n), GlmFamily::Gaussian).unwrap()
    }

    #[test]
    fn intercept_is_ancillary() {
        let inst = random_gaussian(20, 30, 4);
        let a = NullSampler::new(&inst, 9).with_intercept_beta0(vec![0.0]).unwrap();
        let b = NullSampler::new(&inst, 9).with_intercept_beta0(vec![100.0]).unwrap();
        for stat in [lasso(), NullStatistic::Penalty(PenaltySpec::SqrtLasso)] {
            let da = null_draws(&a, &stat, 200).unwrap();
            let db = null_draws(&b, &stat, 200).unwrap();
            assert!(da.iter().zip(&db).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
    }

    #[test]
    fn pivotal_route_agrees_with_catalogue() {
        let inst = random_gaussian(15, 25, 5);
        let sampler = NullSampler::new(&inst, 11).with_intercept_beta0(vec![3.0]).unwrap().with_sigma(1.7).unwrap();
        for spec in [PenaltySpec::Lasso, PenaltySpec::SqrtLasso] {
            let stat = NullStatistic::Penalty(spec);
            let prepared = Prepared::new(&sampler, &stat).unwrap();
            for i in 0..50 {
                let fast = prepared.draw_with(i, true).unwrap();
                let slow = prepared.draw_with(i, false).unwrap();
                assert!((fast - slow).abs() < 1e-9 * fast.max(1.0), "{fast} vs {slow}");
            }
        }
        let prepared = Prepared::new(&sampler, &NullStatistic::Glm).unwrap();
        let via_lasso = Prepared::new(&sampler, &NullStatistic::Penalty(PenaltySpec::Lasso)).unwrap();
        for i in 0..20 {
            let a = prepared.draw(i).unwrap();
            let b = via_lasso.draw(i).unwrap();
            assert!((a - b).abs() < 1e-9 * a.max(1.0));
        }
    }

    #[test]
    fn sigma_scaling_is_exact() {
        let inst = random_gaussian(12, 20, 6);
        let one = NullSampler::new(&inst, 3);
        let two = NullSampler::new(&inst, 3).with_sigma(2.0).unwrap();
        let a = compute_qut(&one, &lasso(), 0.05, 500).unwrap().lambda_qut;
        let b = compute_qut(&two, &lasso(), 0.05, 500).unwrap().lambda_qut;
        assert_eq!(2.0 * a, b);
    }

    #[test]
    fn monotone_in_alpha() {
        let inst = random_gaussian(12, 20, 7);
        let sampler = NullSampler::new(&inst, 5);
        let mut prev = f64::INFINITY;
        for alpha in [0.01, 0.05, 0.1, 0.3, 0.7] {
            let l = compute_qut(&sampler, &lasso(), alpha, 700).unwrap().lambda_qut;
            assert!(l <= prev);
            prev = l;
        }
    }

    #[test]
    fn poisson_draws_outside_domain() {
        let n = 5;
        let inst = ProblemInstance::with_intercept(
            DMatrix::from_fn(n, 2, |i, j| (i + j) as f64 - 2.0),
            DVector::zeros(n),
            GlmFamily::Poisson,
        )
        .unwrap();
        let sampler = NullSampler::new(&inst, 8).with_intercept_beta0(vec![0.2f64.ln()]).unwrap();
        let t = compute_qut(&sampler, &NullStatistic::Glm, 0.05, 20_000).unwrap();
        let expect = (-1.0f64).exp();
        assert!((t.infinite_fraction - expect).abs() < 0.015, "{}", t.infinite_fraction);
        assert_eq!(t.lambda_qut, f64::INFINITY);
        let t = compute_qut(&sampler, &NullStatistic::Glm, 0.5, 2000).unwrap();
        assert!(t.lambda_qut.is_finite());
    }

    #[test]
    fn deterministic_across_pools() {
        let inst = random_gaussian(10, 15, 9);
        let sampler = NullSampler::new(&inst, 12).with_design_mode(DesignMode::RandomBootstrapRows);
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| compute_qut(&sampler, &lasso(), 0.05, 300).unwrap())
        };
        let a = run(1);
        let b = run(4);
        assert_eq!(a.lambda_qut.to_bits(), b.lambda_qut.to_bits());
        assert!(a.is_finite());
    }

    #[test]
    fn penalty_statistic_requires_gaussian() {
        let inst = ProblemInstance::with_intercept(DMatrix::zeros(3, 1), DVector::zeros(3), GlmFamily::Poisson).unwrap();
        let sampler = NullSampler::new(&inst, 0);
        assert!(matches!(compute_qut(&sampler, &lasso(), 0.05, 10), Err(QutError::IncompatiblePenalty(_))));
    }

    #[test]
    fn closed_forms() {
        let bs = closed_form_qut(ClosedForm::BestSubsetOrthonormal { sigma: 1.0, p: 1024 }).unwrap();
        assert!((bs.lambda - 1024f64.ln()).abs() < 1e-12);
        assert!((bs.implied_alpha.unwrap() - 1.0 / (std::f64::consts::PI * 1024f64.ln()).sqrt()).abs() < 1e-15);
        let g = closed_form_qut(ClosedForm::GroupLassoOrthonormal { sigma: 1.0, p: 4096, q: 1 }).unwrap();
        let expect = (2.0 * 4096f64.ln() - std::f64::consts::PI.ln()).sqrt();
        assert!((g.lambda - expect).abs() < 1e-12);
        let tv = closed_form_qut(ClosedForm::TV1D { sigma: 2.0, p: 100 }).unwrap();
        assert!((tv.lambda - (100.0 * 100f64.ln().ln()).sqrt()).abs() < 1e-12);
        assert!(closed_form_qut(ClosedForm::TV1D { sigma: 1.0, p: 2 }).is_err());
        assert!(closed_form_qut(ClosedForm::GroupLassoOrthonormal { sigma: 1.0, p: 2, q: 1 }).is_err());
    }

    #[test]
    fn orthonormal_helper_matches_design_route() {
        // With X = I the lasso statistic is ||Z||_inf; the helper squares and halves it.
        let p = 8;
        let direct = orthonormal_null_quantile(OrthonormalStatistic::GroupMax { q: 1 }, p, 1.0, 0.1, 2000, 4).unwrap();
        let sampler = NullSampler::new(&gaussian_identity(p), 4);
        let via = compute_qut(&sampler, &lasso(), 0.1, 2000).unwrap();
        assert_eq!(direct.lambda_qut, via.lambda_qut);
        let bs = orthonormal_null_quantile(OrthonormalStatistic::BestSubset, p, 1.0, 0.1, 2000, 4).unwrap();
        assert!((bs.lambda_qut - 0.5 * via.lambda_qut.powi(2)).abs() < 1e-12);
    }
}
