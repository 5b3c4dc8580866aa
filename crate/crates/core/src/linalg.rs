//! Small dense linear-algebra helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector};

use crate::error::{QutError, Result};

fn rank_tolerance(a: &DMatrix<f64>, smax: f64) -> f64 {
    a.nrows().max(a.ncols()) as f64 * f64::EPSILON * smax
}

/// Orthogonal projector onto the column space of a matrix, stored as an
/// orthonormal basis.
#[derive(Debug, Clone)]
pub struct Projector {
    basis: DMatrix<f64>,
}

impl Projector {
    pub fn new(a: &DMatrix<f64>) -> Self {
        let n = a.nrows();
        if a.ncols() == 0 || n == 0 {
            return Self { basis: DMatrix::zeros(n, 0) };
        }
        let svd = a.clone().svd(true, false);
        let u = svd.u.expect("left singular vectors requested");
        let smax = svd.singular_values.iter().cloned().fold(0.0, f64::max);
        let tol = rank_tolerance(a, smax);
        let keep: Vec<usize> = (0..svd.singular_values.len())
            .filter(|&i| smax > 0.0 && svd.singular_values[i] > tol)
            .collect();
        Self { basis: u.select_columns(&keep) }
    }

    pub fn rank(&self) -> usize {
        self.basis.ncols()
    }

    pub fn project(&self, v: &DVector<f64>) -> DVector<f64> {
        if self.rank() == 0 {
            return DVector::zeros(v.len());
        }
        &self.basis * (self.basis.tr_mul(v))
    }

    /// `(I - P) v`
    pub fn residual(&self, v: &DVector<f64>) -> DVector<f64> {
        if self.rank() == 0 {
            return v.clone();
        }
        v - self.project(v)
    }

    /// `(I - P) M`, column by column.
    pub fn residualize(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        if self.rank() == 0 {
            return m.clone();
        }
        m - &self.basis * self.basis.tr_mul(m)
    }
}

pub fn numerical_rank(a: &DMatrix<f64>) -> usize {
    if a.ncols() == 0 || a.nrows() == 0 {
        return 0;
    }
    let sv = a.singular_values();
    let smax = sv.iter().cloned().fold(0.0, f64::max);
    if smax == 0.0 {
        return 0;
    }
    let tol = rank_tolerance(a, smax);
    sv.iter().filter(|&&s| s > tol).count()
}

/// Least-squares solution of `a x = b`; `a` must have full column rank.
pub fn least_squares(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    if a.nrows() != b.len() {
        return Err(QutError::Dimension(format!("{} rows vs {} responses", a.nrows(), b.len())));
    }
    if a.ncols() == 0 {
        return Ok(DVector::zeros(0));
    }
    if a.ncols() > a.nrows() {
        return Err(QutError::RankDeficient(format!("{} columns for {} rows", a.ncols(), a.nrows())));
    }
    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    let smin = svd.singular_values.iter().cloned().fold(f64::INFINITY, f64::min);
    if smax == 0.0 || smin <= 1e-10 * smax {
        return Err(QutError::RankDeficient(format!(
            "condition number exceeds 1e10 (smin = {smin:e}, smax = {smax:e})"
        )));
    }
    svd.solve(b, 0.0).map_err(|e| QutError::Numerical(e.to_string()))
}

/// Column order chosen by a column-pivoted QR factorization: entry `k` is
/// the original index of the `k`-th pivot column.
pub fn pivot_order(b: &DMatrix<f64>) -> Vec<usize> {
    let ncols = b.ncols();
    let qr = b.clone().col_piv_qr();
    let mut idx = DMatrix::from_fn(1, ncols, |_, j| j as f64);
    qr.p().permute_columns(&mut idx);
    idx.iter().map(|&v| v as usize).collect()
}

/// Solves `(B B^T) z = B y` where `B` is the `(n-1) x n` first-difference
/// matrix (`(B y)_k = y_{k+1} - y_k`). `B B^T` is the tridiagonal
/// `[-1, 2, -1]` matrix, solved by the Thomas algorithm.
pub fn first_difference_dual(y: &[f64]) -> Vec<f64> {
    let m = y.len().saturating_sub(1);
    if m == 0 {
        return Vec::new();
    }
    let rhs: Vec<f64> = y.windows(2).map(|w| w[1] - w[0]).collect();
    // forward sweep
    let mut c_prime = vec![0.0; m];
    let mut d_prime = vec![0.0; m];
    c_prime[0] = -1.0 / 2.0;
    d_prime[0] = rhs[0] / 2.0;
    for k in 1..m {
        let denom = 2.0 + c_prime[k - 1];
        c_prime[k] = -1.0 / denom;
        d_prime[k] = (rhs[k] + d_prime[k - 1]) / denom;
    }
    let mut z = vec![0.0; m];
    z[m - 1] = d_prime[m - 1];
    for k in (0..m - 1).rev() {
        z[k] = d_prime[k] - c_prime[k] * z[k + 1];
    }
    z
}

pub fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// First-difference matrix of size `(n-1) x n`.
pub fn first_difference_matrix(n: usize) -> DMatrix<f64> {
    let mut b = DMatrix::zeros(n.saturating_sub(1), n);
    for k in 0..n.saturating_sub(1) {
        b[(k, k)] = -1.0;
        b[(k, k + 1)] = 1.0;
    }
    b
}

/// Dot product of column `j` of a column-major matrix with a slice.
#[inline]
pub(crate) fn col_dot(x: &DMatrix<f64>, j: usize, v: &[f64]) -> f64 {
    let n = x.nrows();
    let col = &x.as_slice()[j * n..(j + 1) * n];
    col.iter().zip(v).map(|(a, b)| a * b).sum()
}

#[inline]
pub(crate) fn col_slice(x: &DMatrix<f64>, j: usize) -> &[f64] {
    let n = x.nrows();
    &x.as_slice()[j * n..(j + 1) * n]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn projector_on_constants() {
        let ones = DMatrix::from_element(4, 1, 1.0);
        let p = Projector::new(&ones);
        let r = p.residual(&DVector::from_vec(vec![1.0, 2.0, 3.0, 6.0]));
        let expect = [-2.0, -1.0, 0.0, 3.0];
        for (a, b) in r.iter().zip(expect) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn projector_drops_dependent_columns() {
        let a = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 1.0, 2.0, 1.0, 2.0]);
        assert_eq!(Projector::new(&a).rank(), 1);
        assert_eq!(numerical_rank(&a), 1);
    }

    #[test]
    fn least_squares_rejects_rank_deficiency() {
        let a = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 1.0, 2.0, 1.0, 2.0]);
        let b = DVector::from_vec(vec![1.0, 2.0, 3.0]);
        assert!(matches!(least_squares(&a, &b), Err(QutError::RankDeficient(_))));
    }

    #[test]
    fn pivot_order_skips_zero_column() {
        let b = DMatrix::from_row_slice(2, 3, &[0.0, 1.0, 0.0, 0.0, 0.0, 3.0]);
        let order = pivot_order(&b);
        assert_eq!(order.len(), 3);
        assert!(order[..2].contains(&1) && order[..2].contains(&2));
    }

    #[test]
    fn thomas_matches_cumulative_sum_identity() {
        // z_k = -sum_{i<=k} (y_i - mean(y)) solves B B^T z = B y.
        let y = [0.3, -1.2, 2.5, 0.0, 4.1, -0.7];
        let mean = y.iter().sum::<f64>() / y.len() as f64;
        let z = first_difference_dual(&y);
        let mut acc = 0.0;
        for k in 0..y.len() - 1 {
            acc -= y[k] - mean;
            assert!((z[k] - acc).abs() < 1e-12);
        }
        assert_eq!(first_difference_dual(&[0.0, 1.0]), vec![0.5]);
    }
}
