use crate::error::{QutError, Result};

/// `sum_i |x[i+1] - x[i]|`
pub fn total_variation(x: &[f64]) -> f64 {
    x.windows(2).map(|w| (w[1] - w[0]).abs()).sum()
}

/// Exact minimizer of `0.5 ||y - x||^2 + lambda sum_i |x[i+1] - x[i]|`
/// by Condat's direct (taut-string style) algorithm, linear time in practice.
pub fn tv1d_fit(y: &[f64], lambda: f64) -> Result<Vec<f64>> {
    if !(lambda >= 0.0) || lambda.is_infinite() {
        return Err(QutError::InvalidInput(format!("lambda must be finite and nonnegative, got {lambda}")));
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(QutError::InvalidInput("signal has non-finite entries".into()));
    }
    let n = y.len();
    if n <= 1 || lambda == 0.0 {
        return Ok(y.to_vec());
    }
    let mut out = vec![0.0; n];
    let (mut k, mut k0, mut kplus, mut kminus) = (0usize, 0usize, 0usize, 0usize);
    let (mut umin, mut umax) = (lambda, -lambda);
    let (mut vmin, mut vmax) = (y[0] - lambda, y[0] + lambda);
    loop {
        while k == n - 1 {
            if umin < 0.0 {
                while k0 <= kminus {
                    out[k0] = vmin;
                    k0 += 1;
                }
                k = k0;
                kminus = k0;
                vmin = y[k0];
                umin = lambda;
                umax = vmin + umin - vmax;
            } else if umax > 0.0 {
                while k0 <= kplus {
                    out[k0] = vmax;
                    k0 += 1;
                }
                k = k0;
                kplus = k0;
                vmax = y[k0];
                umax = -lambda;
                umin = vmax + umax - vmin;
            } else {
                vmin += umin / (k - k0 + 1) as f64;
                while k0 <= k {
                    out[k0] = vmin;
                    k0 += 1;
                }
                return Ok(out);
            }
        }
        umin += y[k + 1] - vmin;
        if umin < -lambda {
            while k0 <= kminus {
                out[k0] = vmin;
                k0 += 1;
            }
            k = k0;
            kplus = k0;
            kminus = k0;
            vmin = y[k0];
            vmax = vmin + 2.0 * lambda;
            umin = lambda;
            umax = -lambda;
            continue;
        }
        umax += y[k + 1] - vmax;
        if umax > lambda {
            while k0 <= kplus {
                out[k0] = vmax;
                k0 += 1;
            }
            k = k0;
            kplus = k0;
            kminus = k0;
            vmax = y[k0];
            vmin = vmax - 2.0 * lambda;
            umin = lambda;
            umax = -lambda;
            continue;
        }
        k += 1;
        if umin >= lambda {
            kminus = k;
            vmin += (umin - lambda) / (kminus - k0 + 1) as f64;
            umin = lambda;
        }
        if umax <= -lambda {
            kplus = k;
            vmax += (umax + lambda) / (kplus - k0 + 1) as f64;
            umax = -lambda;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{first_difference_dual, inf_norm};
    use crate::rng::stream_rng;
    use proptest::prelude::*;
    use rand::Rng;

    fn objective(y: &[f64], x: &[f64], lambda: f64) -> f64 {
        0.5 * y.iter().zip(x).map(|(a, b)| (a - b).powi(2)).sum::<f64>() + lambda * total_variation(x)
    }

    /// Projected coordinate descent on the box-constrained dual
    /// `min 0.5 ||y - B^T z||^2, |z| <= lambda`; the primal is `y - B^T z`.
    fn dual_oracle(y: &[f64], lambda: f64) -> Vec<f64> {
        let n = y.len();
        let mut z = vec![0.0; n - 1];
        let mut x = y.to_vec();
        for _ in 0..200_000 {
            let mut change: f64 = 0.0;
            for k in 0..n - 1 {
                let new = (z[k] + 0.5 * (x[k + 1] - x[k])).clamp(-lambda, lambda);
                let d = new - z[k];
                if d != 0.0 {
                    z[k] = new;
                    x[k] += d;
                    x[k + 1] -= d;
                    change = change.max(d.abs());
                }
            }
            if change < 1e-14 {
                break;
            }
        }
        x
    }

    #[test]
    fn two_point_example() {
        let x = tv1d_fit(&[0.0, 1.0], 0.25).unwrap();
        assert!((x[0] - 0.25).abs() < 1e-15 && (x[1] - 0.75).abs() < 1e-15);
    }

    #[test]
    fn zero_penalty_is_identity() {
        let y = [3.0, -1.0, 2.5];
        assert_eq!(tv1d_fit(&y, 0.0).unwrap(), y.to_vec());
    }

    #[test]
    fn constant_at_threshold() {
        let mut rng = stream_rng(9, 0);
        let y: Vec<f64> = (0..30).map(|_| rng.random::<f64>() * 4.0).collect();
        let lam0 = inf_norm(first_difference_dual(&y).as_slice());
        let mean = y.iter().sum::<f64>() / y.len() as f64;
        let x = tv1d_fit(&y, lam0 * 1.001).unwrap();
        assert!(x.iter().all(|v| (v - mean).abs() < 1e-12));
        let x = tv1d_fit(&y, lam0 * 0.999).unwrap();
        assert!(total_variation(&x) > 1e-10);
    }

    #[test]
    fn rejects_bad_lambda() {
        assert!(tv1d_fit(&[1.0, 2.0], -1.0).is_err());
    }

    proptest! {
        #[test]
        fn agrees_with_dual_oracle(seed in 0u64..500, n in 2usize..25, lambda in 0.01f64..3.0) {
            let mut rng = stream_rng(seed, 1);
            let y: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(rand_distr::StandardNormal) * 2.0).collect();
            let ours = tv1d_fit(&y, lambda).unwrap();
            let oracle = dual_oracle(&y, lambda);
            for (a, b) in ours.iter().zip(&oracle) {
                prop_assert!((a - b).abs() < 1e-6, "{a} vs {b}");
            }
            prop_assert!(objective(&y, &ours, lambda) <= objective(&y, &oracle, lambda) + 1e-10);
        }

        #[test]
        fn total_variation_non_increasing(seed in 0u64..200, n in 2usize..30) {
            let mut rng = stream_rng(seed, 2);
            let y: Vec<f64> = (0..n).map(|_| rng.random::<f64>() * 5.0).collect();
            let mut prev = f64::INFINITY;
            for k in 0..20 {
                let tv = total_variation(&tv1d_fit(&y, 0.1 * k as f64).unwrap());
                prop_assert!(tv <= prev + 1e-10);
                prev = tv;
            }
        }
    }
}
