//! Forward kinematics along the joint tree, in the rest-relative form used
//! by skinning, plus its analytic derivatives.
//!
//! Joint `k`'s world transform acts on rest-space points as
//! `W_k(x) = x + (R_k - I)(x - j_k) + q_k`, where `R_k` is the accumulated
//! world rotation, `j_k` the rest joint, and `q_k` the displacement of the
//! posed joint from its rest position. At `theta = 0` the correction term
//! is exactly zero, so identity configurations are bit-exact.

use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{Matrix3, Vector3};

use super::{blend, BodyModel, ModelError, PoseParams, ShapeParams};
use crate::rotation::{rodrigues, rodrigues_jacobian};

/// World transforms of every joint relative to the rest pose.
#[derive(Debug, Clone, PartialEq)]
pub struct JointTransforms {
    /// Accumulated world rotation per joint.
    pub rotations: Vec<Matrix3<f64>>,
    /// Posed-minus-rest joint displacement `q_k`; zero at the root.
    pub shifts: Vec<Vector3<f64>>,
    /// Rest joints `J(beta)` the transforms were built around.
    pub rest_joints: Vec<Vector3<f64>>,
}

impl JointTransforms {
    pub fn joint_count(&self) -> usize {
        self.rotations.len()
    }

    /// Posed location of joint `k` (the transform applied to its rest joint).
    pub fn posed_joint(&self, k: usize) -> Vector3<f64> {
        self.rest_joints[k] + self.shifts[k]
    }

    /// The correction `(R_k - I)(x - j_k) + q_k` added by joint `k`'s
    /// transform; exactly zero in the identity configuration.
    pub fn correction(&self, k: usize, x: &Vector3<f64>) -> Vector3<f64> {
        (self.rotations[k] - Matrix3::identity()) * (x - self.rest_joints[k]) + self.shifts[k]
    }

    /// Applies joint `k`'s rigid transform to a rest-space point.
    pub fn apply(&self, k: usize, x: &Vector3<f64>) -> Vector3<f64> {
        x + self.correction(k, x)
    }

    /// The transform as an affine pair `(R, t)` with `W_k(x) = R x + t`.
    pub fn affine(&self, k: usize) -> (Matrix3<f64>, Vector3<f64>) {
        let r = self.rotations[k];
        let t = self.shifts[k] + self.rest_joints[k] - r * self.rest_joints[k];
        (r, t)
    }
}

/// Forward-kinematics world transforms for all joints.
pub fn global_transforms(
    model: &BodyModel,
    theta: &PoseParams,
    beta: &ShapeParams,
) -> Result<JointTransforms, ModelError> {
    let k = model.joint_count();
    if theta.joint_count() != k {
        return Err(ModelError::DimensionMismatch {
            what: "theta",
            expected: k,
            got: theta.joint_count(),
        });
    }
    let rest_joints = blend::joints_rest(model, beta)?;
    let mut rotations = vec![Matrix3::identity(); k];
    let mut shifts = vec![Vector3::zeros(); k];
    for &j in model.topo_order().iter() {
        let local = rodrigues(&theta.joints[j]);
        match model.parent[j] {
            None => {
                rotations[j] = local;
                // Root rotates about its own rest joint: q stays zero.
            }
            Some(p) => {
                rotations[j] = rotations[p] * local;
                let delta = rest_joints[j] - rest_joints[p];
                shifts[j] = shifts[p] + (rotations[p] - Matrix3::identity()) * delta;
            }
        }
    }
    Ok(JointTransforms {
        rotations,
        shifts,
        rest_joints,
    })
}

/// First derivatives of the joint transforms with respect to all pose
/// components (flat index `3k + axis`) and shape coefficients.
#[derive(Debug, Clone)]
pub struct KinematicsJacobian {
    /// `d R_k / d theta_m`, layout `k * 3K + m`; zero unless `m` belongs
    /// to `k` or one of its ancestors.
    pub drot_dtheta: Vec<Matrix3<f64>>,
    /// `d q_k / d theta_m`, same layout.
    pub dshift_dtheta: Vec<Vector3<f64>>,
    /// `d q_k / d beta_s`, layout `k * S + s`.
    pub dshift_dbeta: Vec<Vector3<f64>>,
    /// `d j_k / d beta_s`, layout `k * S + s`.
    pub drest_dbeta: Vec<Vector3<f64>>,
    /// Flat pose indices with nonzero influence per joint (self + ancestors).
    pub active_theta: Vec<Vec<usize>>,
}

impl KinematicsJacobian {
    /// `d posed_joint_k / d theta_m` (= `d q_k / d theta_m`).
    pub fn djoint_dtheta(&self, joint_count: usize, k: usize, m: usize) -> Vector3<f64> {
        self.dshift_dtheta[k * 3 * joint_count + m]
    }

    /// `d posed_joint_k / d beta_s`.
    pub fn djoint_dbeta(&self, shape_count: usize, k: usize, s: usize) -> Vector3<f64> {
        self.drest_dbeta[k * shape_count + s] + self.dshift_dbeta[k * shape_count + s]
    }
}

pub fn kinematics_jacobian(
    model: &BodyModel,
    theta: &PoseParams,
    transforms: &JointTransforms,
) -> KinematicsJacobian {
    let k = model.joint_count();
    let s = model.shape_count();
    let n_theta = 3 * k;
    let mut drot = vec![Matrix3::zeros(); k * n_theta];
    let mut dshift = vec![Vector3::zeros(); k * n_theta];
    let mut dshift_b = vec![Vector3::zeros(); k * s];
    let drest = blend::rest_joint_shape_jacobian(model);
    let mut active: Vec<Vec<usize>> = vec![Vec::new(); k];

    for &j in model.topo_order().iter() {
        let local = rodrigues(&theta.joints[j]);
        let dlocal = rodrigues_jacobian(&theta.joints[j]);
        match model.parent[j] {
            None => {
                for c in 0..3 {
                    drot[j * n_theta + 3 * j + c] = dlocal[c];
                }
                active[j] = vec![3 * j, 3 * j + 1, 3 * j + 2];
            }
            Some(p) => {
                let delta = transforms.rest_joints[j] - transforms.rest_joints[p];
                let mut act = active[p].clone();
                for &m in &active[p] {
                    drot[j * n_theta + m] = drot[p * n_theta + m] * local;
                    dshift[j * n_theta + m] =
                        dshift[p * n_theta + m] + drot[p * n_theta + m] * delta;
                }
                for c in 0..3 {
                    drot[j * n_theta + 3 * j + c] = transforms.rotations[p] * dlocal[c];
                    act.push(3 * j + c);
                }
                for c in 0..s {
                    dshift_b[j * s + c] = dshift_b[p * s + c]
                        + (transforms.rotations[p] - Matrix3::identity())
                            * (drest[j * s + c] - drest[p * s + c]);
                }
                active[j] = act;
            }
        }
    }
    KinematicsJacobian {
        drot_dtheta: drot,
        dshift_dtheta: dshift,
        dshift_dbeta: dshift_b,
        drest_dbeta: drest,
        active_theta: active,
    }
}
