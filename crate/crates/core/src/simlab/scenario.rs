use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{QutError, Result};
use crate::model::{GlmFamily, ProblemInstance};
use crate::rng::{derive_seed, laplace, sample_response, standard_normals, stream_rng, tag};

/// Synthetic regression scenario with equicorrelated Gaussian columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub n: usize,
    pub p: usize,
    pub theta: f64,
    pub omega: f64,
    pub snr: f64,
    pub family: GlmFamily,
    pub replications: usize,
    pub seed: u64,
}

impl ScenarioSpec {
    pub fn s_star(&self) -> usize {
        ((self.n as f64).powf(self.theta) - 1e-9).ceil() as usize
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(QutError::InvalidInput(m));
        if self.n < 2 || self.p == 0 {
            return bad(format!("need N >= 2 and P >= 1, got N = {}, P = {}", self.n, self.p));
        }
        if !(self.theta > 0.0 && self.theta <= 1.0) {
            return bad(format!("theta must lie in (0, 1], got {}", self.theta));
        }
        if !(self.omega >= 0.0 && self.omega < 1.0) {
            return bad(format!("omega must lie in [0, 1), got {}", self.omega));
        }
        if !(self.snr > 0.0 && self.snr.is_finite()) {
            return bad(format!("snr must be positive, got {}", self.snr));
        }
        if self.s_star() > self.p {
            return bad(format!("s* = {} exceeds P = {}", self.s_star(), self.p));
        }
        if self.replications == 0 {
            return bad("at least one replication is required".into());
        }
        Ok(())
    }

    /// Short label such as `gaussian(0.5,0,1)`.
    pub fn label(&self) -> String {
        format!("{}({},{},{})", self.family.name(), self.theta, self.omega, self.snr)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedData {
    pub instance: ProblemInstance,
    pub beta0_star: f64,
    pub beta_star: Vec<f64>,
    pub support: Vec<usize>,
}

pub const TRUE_INTERCEPT: f64 = 1.0;

/// Rows i.i.d. with unit variances and pairwise correlation `omega`,
/// built from a shared factor: `x = sqrt(omega) g 1 + sqrt(1 - omega) z`.
pub fn equicorrelated_design<R: Rng>(rng: &mut R, n: usize, p: usize, omega: f64) -> DMatrix<f64> {
    let a = omega.sqrt();
    let b = (1.0 - omega).sqrt();
    let mut x = DMatrix::zeros(n, p);
    for i in 0..n {
        let g: f64 = rng.sample(rand_distr::StandardNormal);
        for j in 0..p {
            let z: f64 = rng.sample(rand_distr::StandardNormal);
            x[(i, j)] = a * g + b * z;
        }
    }
    x
}

/// `beta^T Sigma_omega beta` for the equicorrelation matrix.
pub fn equicorrelated_quadratic(beta: &[f64], omega: f64) -> f64 {
    let ss: f64 = beta.iter().map(|b| b * b).sum();
    let s: f64 = beta.iter().sum();
    (1.0 - omega) * ss + omega * s * s
}

/// Replication `rep` of the scenario; fully determined by `(spec, rep)`.
pub fn generate_scenario(spec: &ScenarioSpec, rep: usize) -> Result<GeneratedData> {
    spec.validate()?;
    let mut rng = stream_rng(derive_seed(spec.seed, tag::SCENARIO), rep as u64);
    let (n, p) = (spec.n, spec.p);
    let x = equicorrelated_design(&mut rng, n, p, spec.omega);
    let mut support = rand::seq::index::sample(&mut rng, p, spec.s_star()).into_vec();
    support.sort_unstable();
    let mut beta = vec![0.0; p];
    for &j in &support {
        beta[j] = laplace(&mut rng);
    }
    let q = equicorrelated_quadratic(&beta, spec.omega);
    if !(q > 0.0) {
        return Err(QutError::Numerical("generated coefficients have zero signal".into()));
    }
    let c = (spec.snr / q).sqrt();
    beta.iter_mut().for_each(|b| *b *= c);
    let eta = (&x * DVector::from_column_slice(&beta)).add_scalar(TRUE_INTERCEPT);
    let y = if spec.family.is_gaussian() {
        eta + standard_normals(&mut rng, n)
    } else {
        eta.map(|t| sample_response(&mut rng, spec.family, t))
    };
    let instance = ProblemInstance::with_intercept(x, y, spec.family)?;
    Ok(GeneratedData { instance, beta0_star: TRUE_INTERCEPT, beta_star: beta, support })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(theta: f64, omega: f64) -> ScenarioSpec {
        ScenarioSpec { n: 100, p: 50, theta, omega, snr: 2.0, family: GlmFamily::Gaussian, replications: 1, seed: 3 }
    }

    #[test]
    fn sparsity_levels() {
        assert_eq!(spec(0.5, 0.0).s_star(), 10);
        assert_eq!(spec(0.1, 0.0).s_star(), 2);
        assert!(ScenarioSpec { p: 5, ..spec(0.5, 0.0) }.validate().is_err());
    }

    #[test]
    fn snr_identity_and_reproducibility() {
        let s = spec(0.5, 0.4);
        let a = generate_scenario(&s, 2).unwrap();
        let b = generate_scenario(&s, 2).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.instance.y(), generate_scenario(&s, 3).unwrap().instance.y());
        assert!((equicorrelated_quadratic(&a.beta_star, 0.4) - 2.0).abs() < 1e-10);
        assert_eq!(a.support.len(), 10);
        assert!(a.support.iter().all(|&j| a.beta_star[j] != 0.0));
    }

    #[test]
    fn empirical_correlation() {
        let mut rng = stream_rng(4, 0);
        let x = equicorrelated_design(&mut rng, 10_000, 5, 0.3);
        let n = x.nrows() as f64;
        for i in 0..5 {
            for j in 0..i {
                let (a, b) = (x.column(i), x.column(j));
                let (ma, mb) = (a.mean(), b.mean());
                let cov = a.iter().zip(b.iter()).map(|(u, v)| (u - ma) * (v - mb)).sum::<f64>() / n;
                let r = cov / (a.variance() * b.variance()).sqrt();
                assert!((r - 0.3).abs() < 0.03, "{r}");
            }
        }
    }

    #[test]
    fn poisson_responses_are_counts() {
        let s = ScenarioSpec { family: GlmFamily::Poisson, snr: 0.5, ..spec(0.5, 0.0) };
        let d = generate_scenario(&s, 0).unwrap();
        assert!(d.instance.y().iter().all(|v| v.fract() == 0.0 && *v >= 0.0));
    }
}
