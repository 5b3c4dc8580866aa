use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::methods::{run_method, Method, MethodSettings};
use super::metrics::{oir_metric, oracle_oir, summarize};
use super::rep_seed;
use crate::cv::{lambda_grid, regularization_path, PathOptions};
use crate::error::{QutError, Result};
use crate::model::{GlmFamily, ProblemInstance};
use crate::rng::{standard_normals, stream_rng};
use crate::solvers::SolverConfig;
use crate::zerothresh::{lambda0, PenaltySpec};

/// Grid of undersampling ratios `delta = N/P` and sparsities `rho = s*/N`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseGridSpec {
    pub p: usize,
    pub n_list: Vec<usize>,
    pub rho_list: Vec<f64>,
    /// Value of every nonzero coefficient.
    pub magnitude: f64,
    pub replications: usize,
    pub seed: u64,
}

impl PhaseGridSpec {
    pub fn s_star(n: usize, rho: f64) -> usize {
        ((rho * n as f64) - 1e-9).ceil().max(1.0) as usize
    }

    pub fn validate(&self) -> Result<()> {
        if self.p == 0 || self.n_list.is_empty() || self.rho_list.is_empty() || self.replications == 0 {
            return Err(QutError::InvalidInput("empty phase grid".into()));
        }
        for &n in &self.n_list {
            for &rho in &self.rho_list {
                if !(rho > 0.0 && rho <= 1.0) {
                    return Err(QutError::InvalidInput(format!("rho must lie in (0, 1], got {rho}")));
                }
                let s = Self::s_star(n, rho);
                if s > n || s > self.p || n < 4 {
                    return Err(QutError::InvalidInput(format!("s* = {s} is invalid for N = {n}, P = {}", self.p)));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseRecord {
    pub delta: f64,
    pub rho: f64,
    pub n: usize,
    pub s_star: usize,
    pub rep: usize,
    pub method: Method,
    pub oir: f64,
    pub error: Option<String>,
}

/// Mean rate of one method at one grid point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseCell {
    pub delta: f64,
    pub rho: f64,
    pub method: Method,
    pub oir: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseReport {
    pub records: Vec<PhaseRecord>,
    pub cells: Vec<PhaseCell>,
}

impl PhaseReport {
    pub fn cell(&self, n_over_p: f64, rho: f64, method: Method) -> Option<&PhaseCell> {
        self.cells
            .iter()
            .find(|c| (c.delta - n_over_p).abs() < 1e-12 && (c.rho - rho).abs() < 1e-12 && c.method == method)
    }
}

fn phase_instance(p: usize, n: usize, s: usize, magnitude: f64, seed: u64) -> Result<(ProblemInstance, Vec<usize>)> {
    let mut rng = stream_rng(seed, 0);
    let x = DMatrix::from_fn(n, p, |_, _| rand::Rng::sample::<f64, _>(&mut rng, rand_distr::StandardNormal));
    let mut support = rand::seq::index::sample(&mut rng, p, s).into_vec();
    support.sort_unstable();
    let mut beta = DVector::zeros(p);
    for &j in &support {
        beta[j] = magnitude;
    }
    let y = &x * beta + standard_normals(&mut rng, n);
    let inst = ProblemInstance::without_x0(x, y, GlmFamily::Gaussian)?.with_sigma(1.0)?;
    Ok((inst, support))
}

/// Oracle inclusive rate over a (delta, rho) grid. Data have no intercept
/// and unit noise, with the noise level treated as known.
pub fn run_phase_campaign(grid: &PhaseGridSpec, methods: &[Method], settings: &MethodSettings) -> Result<PhaseReport> {
    grid.validate()?;
    let settings = MethodSettings { sigma: Some(1.0), ..*settings };
    let cfg = SolverConfig::gaussian();
    let path_opts = PathOptions::default();
    let mut tasks = Vec::new();
    for &n in &grid.n_list {
        for (ri, &rho) in grid.rho_list.iter().enumerate() {
            for rep in 0..grid.replications {
                tasks.push((n, ri, rho, rep));
            }
        }
    }
    let records: Vec<Vec<PhaseRecord>> = tasks
        .par_iter()
        .map(|&(n, ri, rho, rep)| {
            let s = PhaseGridSpec::s_star(n, rho);
            let base = rep_seed(grid.seed, rep, ((n as u64) << 16) | ri as u64);
            let (inst, support) = phase_instance(grid.p, n, s, grid.magnitude, base)?;
            let lmax = lambda0(&inst, &PenaltySpec::Lasso)?;
            let lambdas = lambda_grid(lmax, path_opts.grid_len, path_opts.min_ratio);
            let path: Vec<Vec<usize>> = regularization_path(&inst, &lambdas, &cfg, path_opts.max_deviance_ratio)?
                .into_iter()
                .map(|f| f.support)
                .collect();
            let delta = n as f64 / grid.p as f64;
            let mut out = Vec::with_capacity(methods.len());
            for (k, &method) in methods.iter().enumerate() {
                let (oir, error) = if method == Method::Oracle {
                    (oracle_oir(&path, &support), None)
                } else {
                    match run_method(&inst, method, &settings, rep_seed(base, k, 7)) {
                        Ok(o) => (oir_metric(&path, &o.support, &support)?, None),
                        Err(e) => (0.0, Some(e.to_string())),
                    }
                };
                out.push(PhaseRecord { delta, rho, n, s_star: s, rep, method, oir, error });
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;
    let records: Vec<PhaseRecord> = records.into_iter().flatten().collect();
    let mut cells = Vec::new();
    for &n in &grid.n_list {
        let delta = n as f64 / grid.p as f64;
        for &rho in &grid.rho_list {
            for &method in methods {
                let v: Vec<f64> = records
                    .iter()
                    .filter(|r| r.n == n && r.rho == rho && r.method == method)
                    .map(|r| r.oir)
                    .collect();
                cells.push(PhaseCell { delta, rho, method, oir: summarize(&v).mean });
            }
        }
    }
    Ok(PhaseReport { records, cells })
}
