//! Domain types shared by every module: exponential-family responses,
//! problem instances, sparse fits and threshold results.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{QutError, Result};

/// Numeric-zero tolerance used when reading a support off a coefficient
/// vector. Solvers produce exact zeros; this only absorbs float noise.
pub const Z_TOL: f64 = 1e-8;

/// Canonical exponential family with log-likelihood `sum(y*theta - b(theta))`.
///
/// Binomial responses are stored pre-scaled by `1/trials`, so they live in
/// `{0, 1/m, ..., 1}` and share the Bernoulli cumulant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GlmFamily {
    Gaussian,
    Bernoulli,
    BinomialScaled { trials: u32 },
    Poisson,
}

fn softplus(theta: f64) -> f64 {
    if theta > 0.0 {
        theta + (-theta).exp().ln_1p()
    } else {
        theta.exp().ln_1p()
    }
}

fn logistic(theta: f64) -> f64 {
    if theta >= 0.0 {
        1.0 / (1.0 + (-theta).exp())
    } else {
        let e = theta.exp();
        e / (1.0 + e)
    }
}

impl GlmFamily {
    pub fn name(&self) -> &'static str {
        match self {
            GlmFamily::Gaussian => "gaussian",
            GlmFamily::Bernoulli => "bernoulli",
            GlmFamily::BinomialScaled { .. } => "binomial",
            GlmFamily::Poisson => "poisson",
        }
    }

    pub fn is_gaussian(&self) -> bool {
        matches!(self, GlmFamily::Gaussian)
    }

    /// Whether `theta` lies in the natural parameter space. All built-in
    /// families have `Theta = R`.
    pub fn theta_in_domain(&self, theta: f64) -> bool {
        theta.is_finite()
    }

    /// Cumulant function `b(theta)`.
    pub fn cumulant(&self, theta: f64) -> f64 {
        match self {
            GlmFamily::Gaussian => 0.5 * theta * theta,
            GlmFamily::Bernoulli | GlmFamily::BinomialScaled { .. } => softplus(theta),
            GlmFamily::Poisson => theta.exp(),
        }
    }

    /// Mean function `b'(theta)`.
    pub fn mean(&self, theta: f64) -> f64 {
        match self {
            GlmFamily::Gaussian => theta,
            GlmFamily::Bernoulli | GlmFamily::BinomialScaled { .. } => logistic(theta),
            GlmFamily::Poisson => theta.exp(),
        }
    }

    /// Variance function `b''(theta)`.
    pub fn variance(&self, theta: f64) -> f64 {
        match self {
            GlmFamily::Gaussian => 1.0,
            GlmFamily::Bernoulli | GlmFamily::BinomialScaled { .. } => {
                let p = logistic(theta);
                p * (1.0 - p)
            }
            GlmFamily::Poisson => theta.exp(),
        }
    }

    /// Inverse of the mean function, used for closed-form intercept MLEs.
    pub fn link(&self, mu: f64) -> f64 {
        match self {
            GlmFamily::Gaussian => mu,
            GlmFamily::Bernoulli | GlmFamily::BinomialScaled { .. } => (mu / (1.0 - mu)).ln(),
            GlmFamily::Poisson => mu.ln(),
        }
    }

    /// Negative log-likelihood contribution `b(theta) - y*theta`.
    pub fn neg_loglik(&self, y: f64, theta: f64) -> f64 {
        self.cumulant(theta) - y * theta
    }

    /// Unit deviance `2 [l(y; y) - l(mu; y)]`, used as the CV loss.
    pub fn unit_deviance(&self, y: f64, mu: f64) -> f64 {
        fn xlogy(x: f64, y: f64) -> f64 {
            if x == 0.0 {
                0.0
            } else {
                x * y.ln()
            }
        }
        match self {
            GlmFamily::Gaussian => (y - mu) * (y - mu),
            GlmFamily::Bernoulli | GlmFamily::BinomialScaled { .. } => {
                let mu = mu.clamp(1e-15, 1.0 - 1e-15);
                2.0 * (xlogy(y, y / mu) + xlogy(1.0 - y, (1.0 - y) / (1.0 - mu)))
            }
            GlmFamily::Poisson => {
                let mu = mu.max(1e-300);
                2.0 * (xlogy(y, y / mu) - (y - mu))
            }
        }
    }

    /// Checks that every response value lies in the family's support.
    pub fn validate_response(&self, y: &[f64]) -> Result<()> {
        for (i, &v) in y.iter().enumerate() {
            if !v.is_finite() {
                return Err(QutError::InvalidInput(format!("response {i} is not finite")));
            }
            let ok = match self {
                GlmFamily::Gaussian => true,
                GlmFamily::Bernoulli => v == 0.0 || v == 1.0,
                GlmFamily::BinomialScaled { trials } => {
                    let k = v * f64::from(*trials);
                    (0.0..=1.0).contains(&v) && (k - k.round()).abs() < 1e-9
                }
                GlmFamily::Poisson => v >= 0.0 && v.fract() == 0.0,
            };
            if !ok {
                return Err(QutError::InvalidInput(format!(
                    "response {i} = {v} is outside the support of the {} family",
                    self.name()
                )));
            }
        }
        Ok(())
    }
}

/// Applies `b'` elementwise.
pub fn family_mean(family: GlmFamily, theta: &[f64]) -> Result<Vec<f64>> {
    theta
        .iter()
        .map(|&t| {
            if family.theta_in_domain(t) {
                Ok(family.mean(t))
            } else {
                Err(QutError::InvalidInput(format!("theta = {t} outside the natural parameter space")))
            }
        })
        .collect()
}

/// Indices whose magnitude exceeds `z_tol`.
pub fn support_of(beta: &[f64], z_tol: f64) -> Vec<usize> {
    beta.iter()
        .enumerate()
        .filter(|(_, b)| b.abs() > z_tol)
        .map(|(i, _)| i)
        .collect()
}

/// Data of a sparse GLM problem: unpenalized block `x0`, penalized block `x`
/// and the response.
#[derive(Debug, Clone, PartialEq)]
pub struct ProblemInstance {
    x0: DMatrix<f64>,
    x: DMatrix<f64>,
    y: DVector<f64>,
    family: GlmFamily,
    sigma: Option<f64>,
}

impl ProblemInstance {
    pub fn new(x0: DMatrix<f64>, x: DMatrix<f64>, y: DVector<f64>, family: GlmFamily) -> Result<Self> {
        let n = y.len();
        if n == 0 {
            return Err(QutError::InvalidInput("empty response".into()));
        }
        if x0.nrows() != n || x.nrows() != n {
            return Err(QutError::Dimension(format!(
                "response has {n} rows, X0 has {}, X has {}",
                x0.nrows(),
                x.nrows()
            )));
        }
        if x0.iter().chain(x.iter()).any(|v| !v.is_finite()) {
            return Err(QutError::InvalidInput("design contains non-finite entries".into()));
        }
        family.validate_response(y.as_slice())?;
        Ok(Self { x0, x, y, family, sigma: None })
    }

    /// Instance whose unpenalized block is the intercept column.
    pub fn with_intercept(x: DMatrix<f64>, y: DVector<f64>, family: GlmFamily) -> Result<Self> {
        let n = y.len();
        Self::new(DMatrix::from_element(n, 1, 1.0), x, y, family)
    }

    /// Instance without unpenalized covariates.
    pub fn without_x0(x: DMatrix<f64>, y: DVector<f64>, family: GlmFamily) -> Result<Self> {
        let n = y.len();
        Self::new(DMatrix::zeros(n, 0), x, y, family)
    }

    pub fn with_sigma(mut self, sigma: f64) -> Result<Self> {
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(QutError::InvalidInput(format!("sigma must be positive, got {sigma}")));
        }
        if !self.family.is_gaussian() {
            return Err(QutError::InvalidInput("sigma only applies to the Gaussian family".into()));
        }
        self.sigma = Some(sigma);
        Ok(self)
    }

    pub fn x0(&self) -> &DMatrix<f64> {
        &self.x0
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn y(&self) -> &DVector<f64> {
        &self.y
    }

    pub fn family(&self) -> GlmFamily {
        self.family
    }

    pub fn sigma(&self) -> Option<f64> {
        self.sigma
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    pub fn p0(&self) -> usize {
        self.x0.ncols()
    }

    /// True when `x0` is exactly the all-ones column.
    pub fn is_intercept_only(&self) -> bool {
        self.x0.ncols() == 1 && self.x0.iter().all(|&v| v == 1.0)
    }

    /// Same design, new response. The response is validated against the family.
    pub fn with_response(&self, y: DVector<f64>) -> Result<Self> {
        if y.len() != self.n() {
            return Err(QutError::Dimension(format!("expected {} responses, got {}", self.n(), y.len())));
        }
        self.family.validate_response(y.as_slice())?;
        Ok(Self { y, ..self.clone() })
    }

    /// Instance restricted to the given rows (repetitions allowed).
    pub fn select_rows(&self, rows: &[usize]) -> Self {
        Self {
            x0: self.x0.select_rows(rows),
            x: self.x.select_rows(rows),
            y: self.y.select_rows(rows),
            family: self.family,
            sigma: self.sigma,
        }
    }

    /// Linear predictor `X0 beta0 + X beta`.
    pub fn linear_predictor(&self, beta0: &DVector<f64>, beta: &DVector<f64>) -> DVector<f64> {
        let mut eta = &self.x * beta;
        if self.p0() > 0 {
            eta += &self.x0 * beta0;
        }
        eta
    }
}

/// Result of a penalized or refitted fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparseFit {
    pub beta0: Vec<f64>,
    pub beta: Vec<f64>,
    pub lambda: f64,
    pub support: Vec<usize>,
    pub kkt_residual: f64,
    pub iterations: usize,
    pub converged: bool,
}

impl SparseFit {
    pub fn new(beta0: Vec<f64>, beta: Vec<f64>, lambda: f64, kkt_residual: f64, iterations: usize, converged: bool) -> Self {
        let support = support_of(&beta, Z_TOL);
        Self { beta0, beta, lambda, support, kkt_residual, iterations, converged }
    }

    pub fn is_zero(&self) -> bool {
        self.beta.iter().all(|&b| b == 0.0)
    }

    pub fn support_size(&self) -> usize {
        self.support.len()
    }
}

/// Monte Carlo quantile universal threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdResult {
    pub lambda_qut: f64,
    pub alpha: f64,
    pub mc_samples: usize,
    pub infinite_fraction: f64,
    pub seed: u64,
}

impl ThresholdResult {
    pub fn is_finite(&self) -> bool {
        self.lambda_qut.is_finite()
    }
}

/// Support-recovery metrics of one selected model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupportMetrics {
    pub tpr: f64,
    pub fdr: f64,
    pub oir: Option<f64>,
    pub s_hat: usize,
    pub s_star: usize,
}
