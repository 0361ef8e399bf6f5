//! Axis-angle (Rodrigues) rotations and their derivatives.
//!
//! Axis-angle is the rotation parameterization used throughout: the vector
//! direction is the rotation axis, its norm the angle in radians. Small
//! angles fall back to series expansions so values and derivatives stay
//! finite (and exact at zero).

use nalgebra::{Matrix3, Vector3};
#[cfg_attr(feature = "std", allow(unused_imports))]
use num_traits::Float;

/// Angle below which `rodrigues` switches to its series expansion.
pub const SMALL_ANGLE: f64 = 1e-8;

/// Angle below which the rotation derivative uses its series expansion.
/// The closed form divides by the squared angle and loses precision well
/// before `SMALL_ANGLE`.
const SMALL_ANGLE_JAC: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum RotationError {
    #[error("matrix is not a rotation (orthonormality/determinant off by more than 1e-8)")]
    NotARotation,
}

fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Rotation matrix from an axis-angle vector.
///
/// Uses `R = I + c1 [a]x + c2 [a]x^2` with series coefficients below
/// `SMALL_ANGLE`, so `rodrigues(0) == I` exactly.
pub fn rodrigues(axis_angle: &Vector3<f64>) -> Matrix3<f64> {
    let theta2 = axis_angle.norm_squared();
    let theta = theta2.sqrt();
    let (c1, c2) = if theta < SMALL_ANGLE {
        (1.0 - theta2 / 6.0, 0.5 - theta2 / 24.0)
    } else {
        (theta.sin() / theta, (1.0 - theta.cos()) / theta2)
    };
    let k = skew(axis_angle);
    Matrix3::identity() + k * c1 + k * k * c2
}

/// Axis-angle vector from a rotation matrix; inverse of [`rodrigues`] for
/// angles in `[0, pi)`.
pub fn rodrigues_inv(r: &Matrix3<f64>) -> Result<Vector3<f64>, RotationError> {
    let orth = r.transpose() * r - Matrix3::identity();
    if orth.amax() > 1e-8 || (r.determinant() - 1.0).abs() > 1e-8 {
        return Err(RotationError::NotARotation);
    }
    // vee((R - R^T)/2) = sin(theta) * axis
    let v = Vector3::new(
        (r[(2, 1)] - r[(1, 2)]) * 0.5,
        (r[(0, 2)] - r[(2, 0)]) * 0.5,
        (r[(1, 0)] - r[(0, 1)]) * 0.5,
    );
    let cos_theta = ((r.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
    let theta = cos_theta.acos();
    if theta < 1e-7 {
        // sin(theta) ~ theta: v already is the axis-angle vector.
        return Ok(v);
    }
    if theta > core::f64::consts::PI - 1e-4 {
        // Near pi the skew part vanishes; recover the axis from the
        // symmetric part R = 2*axis*axis^T - I + O(pi - theta).
        let b = (r + Matrix3::identity()) * 0.5;
        let i = (0..3)
            .max_by(|&p, &q| b[(p, p)].partial_cmp(&b[(q, q)]).unwrap())
            .unwrap();
        let mut axis = Vector3::zeros();
        axis[i] = b[(i, i)].max(0.0).sqrt();
        for j in 0..3 {
            if j != i {
                axis[j] = b[(i, j)] / axis[i];
            }
        }
        axis.normalize_mut();
        // Choose the sign that agrees with the (possibly tiny) skew part.
        if axis.dot(&v) < 0.0 {
            axis = -axis;
        }
        return Ok(axis * theta);
    }
    Ok(v * (theta / theta.sin()))
}

/// Partial derivatives of `rodrigues(a)` with respect to the three
/// components of `a` (Gallego & Yezzi closed form away from zero).
pub fn rodrigues_jacobian(axis_angle: &Vector3<f64>) -> [Matrix3<f64>; 3] {
    let theta2 = axis_angle.norm_squared();
    let mut out = [Matrix3::zeros(); 3];
    if theta2.sqrt() < SMALL_ANGLE_JAC {
        // d/da_i of I + [a]x + 1/2 [a]x^2, accurate to O(theta^2).
        let k = skew(axis_angle);
        for (i, d) in out.iter_mut().enumerate() {
            let mut e = Vector3::zeros();
            e[i] = 1.0;
            let ei = skew(&e);
            *d = ei + (ei * k + k * ei) * 0.5;
        }
        return out;
    }
    let r = rodrigues(axis_angle);
    for (i, d) in out.iter_mut().enumerate() {
        let mut e = Vector3::zeros();
        e[i] = 1.0;
        let w = axis_angle.cross(&((Matrix3::identity() - r) * e));
        *d = (skew(axis_angle) * axis_angle[i] + skew(&w)) * (1.0 / theta2) * r;
    }
    out
}
