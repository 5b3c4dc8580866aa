use nalgebra::DMatrix;

use crate::error::{QutError, Result};

/// Singular-value soft thresholding: `U diag(max(d - lambda, 0)) V^T`, the
/// minimizer of `0.5 ||Y - X||_F^2 + lambda ||X||_*`.
pub fn svd_soft_threshold(y: &DMatrix<f64>, lambda: f64) -> Result<DMatrix<f64>> {
    if !(lambda >= 0.0) {
        return Err(QutError::InvalidInput(format!("lambda must be nonnegative, got {lambda}")));
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(QutError::InvalidInput("matrix has non-finite entries".into()));
    }
    if y.is_empty() {
        return Ok(y.clone());
    }
    let mut svd = y.clone().try_svd(true, true, f64::EPSILON, 0).ok_or_else(|| QutError::Numerical("SVD did not converge".into()))?;
    svd.singular_values.apply(|d| *d = (*d - lambda).max(0.0));
    svd.recompose().map_err(|e| QutError::Numerical(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream_rng;
    use rand::Rng;

    fn objective(y: &DMatrix<f64>, x: &DMatrix<f64>, lambda: f64) -> f64 {
        0.5 * (y - x).norm_squared() + lambda * x.singular_values().sum()
    }

    #[test]
    fn diagonal_example() {
        let y = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![5.0, 2.0]));
        let out = svd_soft_threshold(&y, 3.0).unwrap();
        let expect = DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 0.0]);
        assert!((out - expect).amax() < 1e-12);
    }

    #[test]
    fn zero_at_largest_singular_value() {
        let mut rng = stream_rng(3, 0);
        let y = DMatrix::from_fn(5, 3, |_, _| rng.random::<f64>() - 0.5);
        let dmax = y.singular_values().max();
        assert!(svd_soft_threshold(&y, dmax).unwrap().iter().all(|&v| v == 0.0));
        assert!(svd_soft_threshold(&y, 0.999 * dmax).unwrap().iter().any(|&v| v != 0.0));
    }

    #[test]
    fn random_probe_oracle_and_spectrum() {
        let mut rng = stream_rng(21, 0);
        let y = DMatrix::from_fn(6, 4, |_, _| rng.sample::<f64, _>(rand_distr::StandardNormal));
        let lambda = 1.0;
        let xhat = svd_soft_threshold(&y, lambda).unwrap();
        let best = objective(&y, &xhat, lambda);
        for k in 0..1000 {
            let radius = if k % 2 == 0 { 1e-3 } else { 0.5 };
            let probe = &xhat + DMatrix::from_fn(6, 4, |_, _| radius * (rng.random::<f64>() - 0.5));
            assert!(objective(&y, &probe, lambda) >= best - 1e-10);
        }
        let mut d: Vec<f64> = y.singular_values().iter().map(|d| (d - lambda).max(0.0)).collect();
        let mut e: Vec<f64> = xhat.singular_values().iter().cloned().collect();
        d.sort_by(f64::total_cmp);
        e.sort_by(f64::total_cmp);
        for (a, b) in d.iter().zip(&e) {
            assert!((a - b).abs() < 1e-10);
        }
    }
}
