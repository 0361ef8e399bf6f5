//! Shape/pose blendshapes and joint regression.

use alloc::vec;
use alloc::vec::Vec;

use nalgebra::Vector3;

use super::{BodyModel, ModelError, PoseParams, ShapeParams};
use crate::rotation::rodrigues;

/// Shape blendshape displacement `B_S(beta)`: the linear combination of
/// the model's shape directions.
pub fn shape_blend(model: &BodyModel, beta: &ShapeParams) -> Result<Vec<Vector3<f64>>, ModelError> {
    let s = model.shape_count();
    if beta.coeffs.len() != s {
        return Err(ModelError::DimensionMismatch {
            what: "beta",
            expected: s,
            got: beta.coeffs.len(),
        });
    }
    let v = model.vertex_count();
    let mut out = vec![Vector3::zeros(); v];
    if s == 0 {
        return Ok(out);
    }
    for (i, d) in out.iter_mut().enumerate() {
        for axis in 0..3 {
            let row = &model.shape_dirs[(i * 3 + axis) * s..(i * 3 + axis + 1) * s];
            let mut acc = 0.0;
            for (c, dir) in beta.coeffs.iter().zip(row) {
                acc += c * dir;
            }
            d[axis] = acc;
        }
    }
    Ok(out)
}

/// Pose blendshape features: the vectorized `R(theta_k) - I` for the
/// non-root joints `k = 1..K`, row-major, `9*(K-1)` values.
pub fn pose_features(theta: &PoseParams) -> Vec<f64> {
    let k = theta.joint_count();
    let mut feat = Vec::with_capacity(9 * k.saturating_sub(1));
    for joint in theta.joints.iter().skip(1) {
        let r = rodrigues(joint);
        for row in 0..3 {
            for col in 0..3 {
                let delta = if row == col { 1.0 } else { 0.0 };
                feat.push(r[(row, col)] - delta);
            }
        }
    }
    feat
}

/// Pose blendshape displacement `B_P(theta)`; zero when the model carries
/// no pose directions or when all non-root joints are at zero.
pub fn pose_blend(model: &BodyModel, theta: &PoseParams) -> Result<Vec<Vector3<f64>>, ModelError> {
    let k = model.joint_count();
    if theta.joint_count() != k {
        return Err(ModelError::DimensionMismatch {
            what: "theta",
            expected: k,
            got: theta.joint_count(),
        });
    }
    let v = model.vertex_count();
    let mut out = vec![Vector3::zeros(); v];
    if model.pose_dirs.is_empty() {
        return Ok(out);
    }
    let p = model.pose_feature_count();
    let feat = pose_features(theta);
    for (i, d) in out.iter_mut().enumerate() {
        for axis in 0..3 {
            let row = &model.pose_dirs[(i * 3 + axis) * p..(i * 3 + axis + 1) * p];
            let mut acc = 0.0;
            for (f, dir) in feat.iter().zip(row) {
                acc += f * dir;
            }
            d[axis] = acc;
        }
    }
    Ok(out)
}

/// Rest-pose joint locations `J(beta)`: the regressor applied to the
/// shaped template.
pub fn joints_rest(model: &BodyModel, beta: &ShapeParams) -> Result<Vec<Vector3<f64>>, ModelError> {
    let shaped = shape_blend(model, beta)?;
    let k = model.joint_count();
    let mut joints = vec![Vector3::zeros(); k];
    for (j, out) in joints.iter_mut().enumerate() {
        let row = model.regressor_row(j);
        let mut acc = Vector3::zeros();
        for (v, w) in row.iter().enumerate() {
            if *w != 0.0 {
                acc += (model.template[v] + shaped[v]) * *w;
            }
        }
        *out = acc;
    }
    Ok(joints)
}

/// Constant derivative of the rest joints with respect to the shape
/// coefficients: `d j_k / d beta_s`, laid out `k*S + s`.
pub fn rest_joint_shape_jacobian(model: &BodyModel) -> Vec<Vector3<f64>> {
    let (k, s) = (model.joint_count(), model.shape_count());
    let mut out = vec![Vector3::zeros(); k * s];
    for j in 0..k {
        let row = model.regressor_row(j);
        for (v, w) in row.iter().enumerate() {
            if *w != 0.0 {
                for c in 0..s {
                    out[j * s + c] += model.shape_dir(v, c) * *w;
                }
            }
        }
    }
    out
}
