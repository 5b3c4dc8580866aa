//! Python bindings. Matrices are lists of rows, vectors are lists, and
//! structured results come back as dictionaries.

use nalgebra::{DMatrix, DVector};
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use serde::Serialize;

use qut_core::cv::CvOptions;
use qut_core::model::{GlmFamily, ProblemInstance};
use qut_core::pipeline::{qut_pipeline, FitPenalty, PipelineOptions, SigmaChoice};
use qut_core::qut::{closed_form_qut as closed_form, compute_qut as monte_carlo, ClosedForm, DesignMode, NullSampler, NullStatistic};
use qut_core::solvers::{self, SolverConfig};
use qut_core::variance::{self, RefittedQutOptions};
use qut_core::zerothresh::{self, PenaltySpec};
use qut_core::QutError;

fn err(e: QutError) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn to_py<'py, T: Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyValueError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

fn matrix(rows: Vec<Vec<f64>>) -> PyResult<DMatrix<f64>> {
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(PyValueError::new_err("all rows must have the same length"));
    }
    Ok(DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
}

fn family(name: &str, trials: u32) -> PyResult<GlmFamily> {
    match (name, trials) {
        ("gaussian", _) => Ok(GlmFamily::Gaussian),
        ("poisson", _) => Ok(GlmFamily::Poisson),
        ("bernoulli", _) | ("binomial", 1) => Ok(GlmFamily::Bernoulli),
        ("binomial", t) if t > 1 => Ok(GlmFamily::BinomialScaled { trials: t }),
        _ => Err(PyValueError::new_err(format!("unknown family '{name}' with {trials} trials"))),
    }
}

fn instance(x: Vec<Vec<f64>>, y: Vec<f64>, fam: GlmFamily, intercept: bool) -> PyResult<ProblemInstance> {
    let x = matrix(x)?;
    let y = DVector::from_vec(y);
    let inst = if intercept {
        ProblemInstance::with_intercept(x, y, fam)
    } else {
        ProblemInstance::without_x0(x, y, fam)
    };
    inst.map_err(err)
}

fn penalty(name: &str) -> PyResult<PenaltySpec> {
    Ok(match name {
        "lasso" => PenaltySpec::Lasso,
        "sqrt-lasso" => PenaltySpec::SqrtLasso,
        "lad-lasso" => PenaltySpec::LadLasso,
        "tv1d" => PenaltySpec::TotalVariation1D,
        "best-subset" => PenaltySpec::BestSubset,
        "density-tv" => PenaltySpec::DensityTV,
        _ => return Err(PyValueError::new_err(format!("unknown penalty '{name}'"))),
    })
}

/// Mean of the family at natural parameter `theta`.
#[pyfunction]
#[pyo3(signature = (family_name, theta, trials=1))]
fn family_mean(family_name: &str, theta: f64, trials: u32) -> PyResult<f64> {
    Ok(family(family_name, trials)?.mean(theta))
}

/// Indices of entries with magnitude above `tol`.
#[pyfunction]
#[pyo3(signature = (beta, tol=qut_core::Z_TOL))]
fn support_of(beta: Vec<f64>, tol: f64) -> Vec<usize> {
    qut_core::support_of(&beta, tol)
}

/// Smallest penalty at which the estimate is identically zero.
#[pyfunction]
#[pyo3(signature = (x, y, penalty_name="lasso", intercept=true))]
fn lambda0(x: Vec<Vec<f64>>, y: Vec<f64>, penalty_name: &str, intercept: bool) -> PyResult<f64> {
    let inst = instance(x, y, GlmFamily::Gaussian, intercept)?;
    zerothresh::lambda0(&inst, &penalty(penalty_name)?).map_err(err)
}

/// Zero-threshold of the GLM lasso; infinite outside the existence domain.
#[pyfunction]
#[pyo3(signature = (x, y, family_name, intercept=true, trials=1))]
fn lambda0_glm(x: Vec<Vec<f64>>, y: Vec<f64>, family_name: &str, intercept: bool, trials: u32) -> PyResult<f64> {
    let inst = instance(x, y, family(family_name, trials)?, intercept)?;
    zerothresh::lambda0_glm(&inst, &SolverConfig::glm()).map_err(err)
}

/// Lasso fit for any family at a fixed penalty.
#[pyfunction]
#[pyo3(signature = (x, y, lam, family_name="gaussian", intercept=true, trials=1))]
fn lasso_fit<'py>(
    py: Python<'py>,
    x: Vec<Vec<f64>>,
    y: Vec<f64>,
    lam: f64,
    family_name: &str,
    intercept: bool,
    trials: u32,
) -> PyResult<Bound<'py, PyAny>> {
    let fam = family(family_name, trials)?;
    let inst = instance(x, y, fam, intercept)?;
    let cfg = SolverConfig::for_family(fam);
    let fit = if fam.is_gaussian() {
        solvers::lasso_fit(&inst, lam, &cfg)
    } else {
        solvers::glm_lasso_fit(&inst, lam, &cfg)
    };
    to_py(py, &fit.map_err(err)?)
}

#[pyfunction]
#[pyo3(signature = (x, y, lam, intercept=true))]
fn sqrt_lasso_fit<'py>(py: Python<'py>, x: Vec<Vec<f64>>, y: Vec<f64>, lam: f64, intercept: bool) -> PyResult<Bound<'py, PyAny>> {
    let inst = instance(x, y, GlmFamily::Gaussian, intercept)?;
    to_py(py, &solvers::sqrt_lasso_fit(&inst, lam, &SolverConfig::gaussian()).map_err(err)?)
}

/// Total-variation denoising of a sequence.
#[pyfunction]
fn tv1d(y: Vec<f64>, lam: f64) -> PyResult<Vec<f64>> {
    solvers::tv1d_fit(&y, lam).map_err(err)
}

/// Soft thresholding of singular values.
#[pyfunction]
fn svd_soft_threshold(y: Vec<Vec<f64>>, lam: f64) -> PyResult<Vec<Vec<f64>>> {
    let out = solvers::svd_soft_threshold(&matrix(y)?, lam).map_err(err)?;
    Ok(out.row_iter().map(|r| r.iter().copied().collect()).collect())
}

/// Monte Carlo quantile universal threshold for the design of `x`.
#[pyfunction]
#[pyo3(signature = (x, penalty_name="lasso", family_name="gaussian", alpha=0.05, mc_samples=1000, seed=0, sigma=None, intercept=true, random_design=false, trials=1))]
#[allow(clippy::too_many_arguments)]
fn compute_qut<'py>(
    py: Python<'py>,
    x: Vec<Vec<f64>>,
    penalty_name: &str,
    family_name: &str,
    alpha: f64,
    mc_samples: usize,
    seed: u64,
    sigma: Option<f64>,
    intercept: bool,
    random_design: bool,
    trials: u32,
) -> PyResult<Bound<'py, PyAny>> {
    let fam = family(family_name, trials)?;
    let n = x.len();
    let y = vec![fam.mean(0.0); n];
    let inst = instance(x, y, fam, intercept)?;
    let mut sampler = NullSampler::new(&inst, seed);
    if let Some(s) = sigma {
        sampler = sampler.with_sigma(s).map_err(err)?;
    }
    if random_design {
        sampler = sampler.with_design_mode(DesignMode::RandomBootstrapRows);
    }
    let stat = if fam.is_gaussian() { NullStatistic::Penalty(penalty(penalty_name)?) } else { NullStatistic::Glm };
    py.detach(|| monte_carlo(&sampler, &stat, alpha, mc_samples)).map_err(err).and_then(|t| to_py(py, &t))
}

/// Closed-form threshold: `kind` is best-subset, tv1d or group-lasso.
#[pyfunction]
#[pyo3(signature = (kind, sigma, p, q=1))]
fn closed_form_qut(kind: &str, sigma: f64, p: usize, q: usize) -> PyResult<(f64, Option<f64>)> {
    let k = match kind {
        "best-subset" => ClosedForm::BestSubsetOrthonormal { sigma, p },
        "tv1d" => ClosedForm::TV1D { sigma, p },
        "group-lasso" => ClosedForm::GroupLassoOrthonormal { sigma, p, q },
        _ => return Err(PyValueError::new_err(format!("unknown closed form '{kind}'"))),
    };
    let r = closed_form(k).map_err(err)?;
    Ok((r.lambda, r.implied_alpha))
}

/// Noise variance by refitted QUT, refitted cross-validation or residual CV.
#[pyfunction]
#[pyo3(signature = (x, y, method="refitted-qut", alpha=0.05, mc_samples=1000, seed=0, folds=10, intercept=true))]
#[allow(clippy::too_many_arguments)]
fn estimate_sigma2<'py>(
    py: Python<'py>,
    x: Vec<Vec<f64>>,
    y: Vec<f64>,
    method: &str,
    alpha: f64,
    mc_samples: usize,
    seed: u64,
    folds: usize,
    intercept: bool,
) -> PyResult<Bound<'py, PyAny>> {
    let inst = instance(x, y, GlmFamily::Gaussian, intercept)?;
    let cv = CvOptions { folds, seed, ..Default::default() };
    let est = py.detach(|| match method {
        "refitted-qut" => {
            variance::sigma2_refitted_qut(&inst, &RefittedQutOptions { alpha, mc_samples, seed, ..Default::default() })
        }
        "rcv" => variance::sigma2_rcv(&inst, &cv, seed),
        "residual-cv" => variance::sigma2_residual_cv(&inst, &cv),
        _ => Err(QutError::InvalidInput(format!("unknown variance method '{method}'"))),
    });
    to_py(py, &est.map_err(err)?)
}

/// Full pipeline: threshold, penalized fit and maximum-likelihood refit.
#[pyfunction]
#[pyo3(signature = (x, y, family_name="gaussian", penalty_name="lasso", sigma=None, lam=None, alpha=0.05, mc_samples=1000, seed=0, refit=true, intercept=true, trials=1))]
#[allow(clippy::too_many_arguments)]
fn fit<'py>(
    py: Python<'py>,
    x: Vec<Vec<f64>>,
    y: Vec<f64>,
    family_name: &str,
    penalty_name: &str,
    sigma: Option<f64>,
    lam: Option<f64>,
    alpha: f64,
    mc_samples: usize,
    seed: u64,
    refit: bool,
    intercept: bool,
    trials: u32,
) -> PyResult<Bound<'py, PyAny>> {
    let inst = instance(x, y, family(family_name, trials)?, intercept)?;
    let penalty = match penalty_name {
        "lasso" => FitPenalty::Lasso,
        "sqrt-lasso" => FitPenalty::SqrtLasso,
        _ => return Err(PyValueError::new_err(format!("fit supports lasso and sqrt-lasso, got '{penalty_name}'"))),
    };
    let opts = PipelineOptions {
        alpha,
        mc_samples,
        seed,
        penalty,
        sigma: sigma.map_or(SigmaChoice::Estimate, SigmaChoice::Known),
        lambda: lam,
        refit,
        ..Default::default()
    };
    let report = py.detach(|| qut_pipeline(&inst, &opts)).map_err(err)?;
    to_py(py, &report)
}

/// True-positive and false-discovery proportions of a selected support.
#[pyfunction]
fn support_metrics<'py>(py: Python<'py>, s_hat: Vec<usize>, s_star: Vec<usize>) -> PyResult<Bound<'py, PyAny>> {
    to_py(py, &qut_core::simlab::support_metrics(&s_hat, &s_star).map_err(err)?)
}

#[pymodule]
fn qut(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(family_mean, m)?)?;
    m.add_function(wrap_pyfunction!(support_of, m)?)?;
    m.add_function(wrap_pyfunction!(lambda0, m)?)?;
    m.add_function(wrap_pyfunction!(lambda0_glm, m)?)?;
    m.add_function(wrap_pyfunction!(lasso_fit, m)?)?;
    m.add_function(wrap_pyfunction!(sqrt_lasso_fit, m)?)?;
    m.add_function(wrap_pyfunction!(tv1d, m)?)?;
    m.add_function(wrap_pyfunction!(svd_soft_threshold, m)?)?;
    m.add_function(wrap_pyfunction!(compute_qut, m)?)?;
    m.add_function(wrap_pyfunction!(closed_form_qut, m)?)?;
    m.add_function(wrap_pyfunction!(estimate_sigma2, m)?)?;
    m.add_function(wrap_pyfunction!(fit, m)?)?;
    m.add_function(wrap_pyfunction!(support_metrics, m)?)?;
    Ok(())
}
