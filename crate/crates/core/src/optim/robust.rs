//! Geman-McClure robust loss and its least-squares embedding.
//!
//! The loss is applied per residual group (one group per joint observation
//! or correspondence pair), so it stays rotation-invariant. Groups enter
//! the solver through exact reweighting: the scaled residual
//! `r' = sqrt(w) * r / sqrt(sigma^2 + |r|^2)` satisfies
//! `|r'|^2 = w * rho(|r|^2)`, and its analytic Jacobian is the chain rule
//! of that map, so Gauss-Newton on the scaled system minimizes the robust
//! energy directly.

use nalgebra::{DMatrix, DVector};
use num_traits::Float;

/// Parameters of the robust loss.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RobustLossParams {
    /// Saturation scale, same units as the wrapped residual.
    pub sigma: f64,
}

impl RobustLossParams {
    pub fn new(sigma: f64) -> Self {
        debug_assert!(sigma > 0.0);
        RobustLossParams { sigma }
    }
}

/// The Geman-McClure function of a squared residual norm:
/// `rho(s) = s / (sigma^2 + s)`, bounded by 1.
pub fn geman_mcclure(squared_norm: f64, sigma: f64) -> f64 {
    debug_assert!(squared_norm >= 0.0 && sigma > 0.0);
    squared_norm / (sigma * sigma + squared_norm)
}

/// Rescales a residual group (and optionally its Jacobian rows) so that the
/// squared norm of the output equals `weight * rho(|r|^2)`.
pub fn robustify_group(
    residual: &mut DVector<f64>,
    jacobian: Option<&mut DMatrix<f64>>,
    sigma: f64,
    weight: f64,
) {
    let s = residual.norm_squared();
    let denom = sigma * sigma + s;
    let scale = weight.sqrt() / denom.sqrt();
    if let Some(jac) = jacobian {
        // J' = scale * (I - r r^T / denom) J
        let rt_j = residual.transpose() * &*jac; // 1 x ncols
        for col in 0..jac.ncols() {
            for row in 0..jac.nrows() {
                jac[(row, col)] =
                    scale * (jac[(row, col)] - residual[row] * rt_j[(0, col)] / denom);
            }
        }
    }
    *residual *= scale;
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn closed_form_values() {
        assert_eq!(geman_mcclure(0.0, 100.0), 0.0);
        assert_eq!(geman_mcclure(100.0 * 100.0, 100.0), 0.5);
        // |x| = 100 sigma: rho = 1e8 / (1e4 + 1e8)
        let rho = geman_mcclure((100.0f64 * 100.0).powi(2), 100.0);
        assert!(rho > 0.9999);
        assert_abs_diff_eq!(rho, 1e8 / (1e4 + 1e8), epsilon = 1e-15);
    }

    #[test]
    fn monotone_and_bounded() {
        let mut prev = -1.0;
        for i in 0..2000 {
            let s = i as f64 * 37.5;
            let v = geman_mcclure(s, 50.0);
            assert!(v >= prev);
            assert!((0.0..1.0).contains(&v));
            prev = v;
        }
    }

    #[test]
    fn robustified_norm_equals_weighted_rho() {
        let mut r = DVector::from_vec(vec![3.0, 4.0]);
        robustify_group(&mut r, None, 10.0, 2.5);
        assert_abs_diff_eq!(
            r.norm_squared(),
            2.5 * geman_mcclure(25.0, 10.0),
            epsilon = 1e-14
        );
    }

    #[test]
    fn robustified_jacobian_matches_finite_differences() {
        // Raw residual r(x) = (x0^2 - x1, x0 + 3 x1), robustified.
        let f = |x: &DVector<f64>| {
            let mut r = DVector::from_vec(vec![x[0] * x[0] - x[1], x[0] + 3.0 * x[1]]);
            robustify_group(&mut r, None, 2.0, 1.7);
            r
        };
        let x = DVector::from_vec(vec![0.8, -0.4]);
        let mut r = DVector::from_vec(vec![x[0] * x[0] - x[1], x[0] + 3.0 * x[1]]);
        let mut jac = DMatrix::from_row_slice(2, 2, &[2.0 * x[0], -1.0, 1.0, 3.0]);
        robustify_group(&mut r, Some(&mut jac), 2.0, 1.7);

        let h = 1e-7;
        for j in 0..2 {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[j] += h;
            xm[j] -= h;
            let fd = (f(&xp) - f(&xm)) / (2.0 * h);
            for i in 0..2 {
                assert_abs_diff_eq!(jac[(i, j)], fd[i], epsilon = 1e-6);
            }
        }
    }
}
