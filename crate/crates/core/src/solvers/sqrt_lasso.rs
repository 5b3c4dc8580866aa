use nalgebra::DVector;

use super::lasso::GaussianLasso;
use super::{l1_stationarity_gap, SolverConfig};
use crate::error::{QutError, Result};
use crate::linalg::col_dot;
use crate::model::{ProblemInstance, SparseFit};

const MAX_SCALE_UPDATES: usize = 1000;
const INTERPOLATION_NORM: f64 = 1e-10;

/// `||y - X0 b0 - X b||_2 + lambda ||b||_1`
pub fn sqrt_lasso_objective(inst: &ProblemInstance, beta0: &[f64], beta: &[f64], lambda: f64) -> f64 {
    let eta = inst.linear_predictor(&DVector::from_column_slice(beta0), &DVector::from_column_slice(beta));
    (inst.y() - eta).norm() + lambda * beta.iter().map(|b| b.abs()).sum::<f64>()
}

/// Square-root lasso by alternating a lasso fit at `lambda * s` with the
/// scale update `s = ||y - X b||_2`. The fixed point satisfies the
/// square-root lasso optimality system `X^T r / ||r|| in lambda d||b||_1`.
pub fn sqrt_lasso_fit(inst: &ProblemInstance, lambda: f64, cfg: &SolverConfig) -> Result<SparseFit> {
    if !(lambda >= 0.0) || lambda.is_infinite() {
        return Err(QutError::InvalidInput(format!("lambda must be finite and nonnegative, got {lambda}")));
    }
    let solver = GaussianLasso::new(inst, cfg)?;
    let x = solver.residualized_design();
    let y = solver.residualized_response();
    let mut scale = y.norm();
    if scale < INTERPOLATION_NORM {
        return Err(QutError::Interpolation);
    }
    let mut beta = vec![0.0; inst.p()];
    let mut iterations = 0;
    let mut converged = false;
    let mut resid = y.clone();
    for _ in 0..MAX_SCALE_UPDATES {
        let out = solver.solve_internal(lambda * scale, &mut beta);
        iterations += out.iterations;
        resid = y.clone();
        for (j, &b) in beta.iter().enumerate() {
            if b != 0.0 {
                resid.axpy(-b, &x.column(j), 1.0);
            }
        }
        let new_scale = resid.norm();
        if new_scale < INTERPOLATION_NORM {
            return Err(QutError::Interpolation);
        }
        let delta = (new_scale - scale).abs();
        scale = new_scale;
        if delta <= 1e-8 * scale {
            converged = out.converged;
            break;
        }
    }
    let rs = resid.as_slice();
    let kkt = (0..x.ncols())
        .map(|j| l1_stationarity_gap(col_dot(x, j, rs) / scale, beta[j], lambda))
        .fold(0.0, f64::max);
    let beta = solver.to_original(&beta);
    let beta0 = solver.recover_beta0(&beta);
    Ok(SparseFit::new(beta0, beta, lambda, kkt, iterations, converged))
}
