//! Linear blend skinning, its inverse (unposing) transform, and the
//! per-vertex skinning Jacobians used by the fitting stages.

use alloc::vec::Vec;

use nalgebra::{Matrix3, Vector3};
#[cfg_attr(feature = "std", allow(unused_imports))]
use num_traits::Float;

use super::{
    blend, kinematics::JointTransforms, kinematics::KinematicsJacobian, BodyModel, Mesh,
    ModelError, PoseParams, ShapeParams, VertexOffsets,
};
use crate::camera::Ray;

/// Condition number above which a blended skinning transform is treated
/// as degenerate and the affected pair is skipped upstream.
pub const DEGENERATE_CONDITION: f64 = 1e8;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SkinError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("blended skinning transform of vertex {vertex} is near-singular (condition {condition:.3e})")]
    DegenerateSkinning { vertex: usize, condition: f64 },
}

/// Poses the model: `t_i = sum_k w_ki G'_k (template + B_S + B_P + d)_i`.
///
/// With `theta = 0` this returns `template + B_S(beta) + d` exactly.
pub fn skin(
    model: &BodyModel,
    theta: &PoseParams,
    beta: &ShapeParams,
    d: &VertexOffsets,
) -> Result<Mesh, SkinError> {
    if d.offsets.len() != model.vertex_count() {
        return Err(ModelError::DimensionMismatch {
            what: "vertex offsets",
            expected: model.vertex_count(),
            got: d.offsets.len(),
        }
        .into());
    }
    let transforms = kinematics_of(model, theta, beta)?;
    let bs = blend::shape_blend(model, beta)?;
    let bp = blend::pose_blend(model, theta)?;
    let mut vertices = Vec::with_capacity(model.vertex_count());
    for v in 0..model.vertex_count() {
        let x = model.template[v] + bs[v] + bp[v] + d.offsets[v];
        vertices.push(blend_point(model, &transforms, v, &x));
    }
    Ok(Mesh {
        vertices,
        faces: model.faces.clone(),
        normals: None,
    })
}

/// Poses a single vertex given precomputed transforms and blend rows.
pub fn skin_vertex(
    model: &BodyModel,
    transforms: &JointTransforms,
    v: usize,
    rest_position: &Vector3<f64>,
) -> Vector3<f64> {
    blend_point(model, transforms, v, rest_position)
}

fn kinematics_of(
    model: &BodyModel,
    theta: &PoseParams,
    beta: &ShapeParams,
) -> Result<JointTransforms, ModelError> {
    super::kinematics::global_transforms(model, theta, beta)
}

/// `x + sum_k w_k ((R_k - I)(x - j_k) + q_k)`; exact identity at rest.
fn blend_point(
    model: &BodyModel,
    transforms: &JointTransforms,
    v: usize,
    x: &Vector3<f64>,
) -> Vector3<f64> {
    let mut correction = Vector3::zeros();
    for (k, &w) in model.skin_weights_row(v).iter().enumerate() {
        if w != 0.0 {
            correction += transforms.correction(k, x) * w;
        }
    }
    x + correction
}

/// The blended affine transform of one vertex: `M_i(x) = L x + tau`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlendedTransform {
    pub linear: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl BlendedTransform {
    /// Ratio of extreme singular values.
    pub fn condition(&self) -> f64 {
        let svd = self.linear.svd(false, false);
        let max = svd.singular_values.max();
        let min = svd.singular_values.min();
        if min <= 0.0 {
            f64::INFINITY
        } else {
            max / min
        }
    }
}

/// Blended affine transform `sum_k w_ki G'_k` of vertex `v`.
pub fn blended_affine(
    model: &BodyModel,
    transforms: &JointTransforms,
    v: usize,
) -> BlendedTransform {
    let mut linear = Matrix3::identity();
    let mut translation = Vector3::zeros();
    for (k, &w) in model.skin_weights_row(v).iter().enumerate() {
        if w != 0.0 {
            let rot = transforms.rotations[k];
            let delta = rot - Matrix3::identity();
            linear += delta * w;
            translation += (transforms.shifts[k] - delta * transforms.rest_joints[k]) * w;
        }
    }
    BlendedTransform {
        linear,
        translation,
    }
}

/// Maps a world-space ray into the canonical (zero-pose) model frame of
/// vertex `v`: applies the inverse blended transform and removes the
/// vertex's pose-blend displacement from the origin.
pub fn unpose_ray(
    model: &BodyModel,
    theta: &PoseParams,
    beta: &ShapeParams,
    vertex: usize,
    ray: &Ray,
) -> Result<Ray, SkinError> {
    let transforms = kinematics_of(model, theta, beta)?;
    let blended = blended_affine(model, &transforms, vertex);
    let cond = blended.condition();
    if !(cond < DEGENERATE_CONDITION) {
        return Err(SkinError::DegenerateSkinning {
            vertex,
            condition: cond,
        });
    }
    let inv = blended
        .linear
        .try_inverse()
        .ok_or(SkinError::DegenerateSkinning {
            vertex,
            condition: f64::INFINITY,
        })?;
    let bp = blend::pose_blend(model, theta)?;
    Ok(unpose_ray_precomputed(
        &inv,
        &blended.translation,
        &bp[vertex],
        ray,
    ))
}

/// [`unpose_ray`] with the inverse blended transform and pose displacement
/// already at hand (the correspondence stage reuses them across rays).
pub fn unpose_ray_precomputed(
    linear_inv: &Matrix3<f64>,
    translation: &Vector3<f64>,
    pose_displacement: &Vector3<f64>,
    ray: &Ray,
) -> Ray {
    Ray {
        origin: linear_inv * (ray.origin - translation) - pose_displacement,
        direction: (linear_inv * ray.direction).normalize(),
    }
}

/// Posed position of one vertex together with its first derivatives with
/// respect to pose, shape, and the vertex's own offset.
#[derive(Debug, Clone)]
pub struct VertexSkinJacobian {
    pub position: Vector3<f64>,
    /// `d position / d theta_m`, flat pose index, length 3K.
    pub wrt_theta: Vec<Vector3<f64>>,
    /// `d position / d beta_s`, length S.
    pub wrt_beta: Vec<Vector3<f64>>,
    /// `d position / d offset_v` (the blended linear part).
    pub wrt_offset: Matrix3<f64>,
}

/// Skinning Jacobian of vertex `v` at the given configuration.
///
/// `rest_position` must be `template + B_S + B_P + d` for the vertex, and
/// `pose_dir_jacobian` the per-theta derivative of its `B_P` row (empty
/// slice when the model has no pose directions).
pub fn skin_vertex_jacobian(
    model: &BodyModel,
    transforms: &JointTransforms,
    kin_jac: &KinematicsJacobian,
    v: usize,
    rest_position: &Vector3<f64>,
    pose_dir_jacobian: &[Vector3<f64>],
) -> VertexSkinJacobian {
    let k_count = model.joint_count();
    let s_count = model.shape_count();
    let n_theta = 3 * k_count;
    let mut wrt_theta = alloc::vec![Vector3::zeros(); n_theta];
    let mut wrt_beta = alloc::vec![Vector3::zeros(); s_count];
    let mut wrt_offset = Matrix3::identity();
    let mut position = *rest_position;

    // d x / d theta_m from the pose blendshape (zero without pose dirs).
    let dx_dtheta = |m: usize| -> Vector3<f64> {
        if pose_dir_jacobian.is_empty() {
            Vector3::zeros()
        } else {
            pose_dir_jacobian[m]
        }
    };

    if !pose_dir_jacobian.is_empty() {
        for (m, item) in wrt_theta.iter_mut().enumerate() {
            *item = dx_dtheta(m);
        }
    }

    let mut correction = Vector3::zeros();
    for (k, &w) in model.skin_weights_row(v).iter().enumerate() {
        if w == 0.0 {
            continue;
        }
        let rot = transforms.rotations[k];
        let delta_rot = rot - Matrix3::identity();
        let offset = rest_position - transforms.rest_joints[k];
        correction += (delta_rot * offset + transforms.shifts[k]) * w;
        wrt_offset += delta_rot * w;

        for &m in &kin_jac.active_theta[k] {
            wrt_theta[m] += (kin_jac.drot_dtheta[k * n_theta + m] * offset
                + kin_jac.dshift_dtheta[k * n_theta + m])
                * w;
        }
        if !pose_dir_jacobian.is_empty() {
            // The (R_k - I) dx/dtheta part applies at every pose index.
            for (m, item) in wrt_theta.iter_mut().enumerate() {
                *item += delta_rot * dx_dtheta(m) * w;
            }
        }
        for s in 0..s_count {
            let dj = kin_jac.drest_dbeta[k * s_count + s];
            let dx = model.shape_dir(v, s);
            wrt_beta[s] += (delta_rot * (dx - dj) + kin_jac.dshift_dbeta[k * s_count + s]) * w;
        }
    }
    position += correction;
    for s in 0..s_count {
        wrt_beta[s] += model.shape_dir(v, s);
    }
    VertexSkinJacobian {
        position,
        wrt_theta,
        wrt_beta,
        wrt_offset,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{global_transforms, kinematics_jacobian, make_toy_model};
    use crate::rotation::rodrigues;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_pose(rng: &mut ChaCha8Rng, k: usize, scale: f64) -> PoseParams {
        PoseParams {
            joints: (0..k)
                .map(|_| {
                    Vector3::new(
                        rng.gen_range(-1.0..1.0),
                        rng.gen_range(-1.0..1.0),
                        rng.gen_range(-1.0..1.0),
                    ) * scale
                })
                .collect(),
        }
    }

    #[test]
    fn zero_configuration_returns_template_exactly() {
        let model = make_toy_model(2, 350, 12, 5).unwrap();
        let mesh = skin(
            &model,
            &PoseParams::zeros(12),
            &ShapeParams::zeros(5),
            &VertexOffsets::zeros(model.vertex_count()),
        )
        .unwrap();
        assert_eq!(mesh.vertices, model.template);
    }

    #[test]
    fn rigid_single_joint_model_rotates_about_root() {
        let model = make_toy_model(4, 40, 1, 1).unwrap();
        let mut theta = PoseParams::zeros(1);
        theta.joints[0] = Vector3::new(0.2, -0.7, 0.4);
        let beta = ShapeParams::zeros(1);
        let mesh = skin(&model, &theta, &beta, &VertexOffsets::zeros(40)).unwrap();
        let r = rodrigues(&theta.joints[0]);
        let root = crate::model::joints_rest(&model, &beta).unwrap()[0];
        for v in 0..model.vertex_count() {
            let expect = r * (model.template[v] - root) + root;
            assert_abs_diff_eq!(mesh.vertices[v], expect, epsilon = 1e-12);
        }
    }

    #[test]
    fn skinning_matches_per_vertex_brute_force() {
        let model = make_toy_model(6, 300, 10, 4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for _ in 0..5 {
            let theta = random_pose(&mut rng, 10, 1.0);
            let beta = ShapeParams {
                coeffs: (0..4).map(|_| rng.gen_range(-2.0..2.0)).collect(),
            };
            let mut d = VertexOffsets::zeros(model.vertex_count());
            for o in d.offsets.iter_mut() {
                *o = Vector3::new(
                    rng.gen_range(-0.01..0.01),
                    rng.gen_range(-0.01..0.01),
                    rng.gen_range(-0.01..0.01),
                );
            }
            let mesh = skin(&model, &theta, &beta, &d).unwrap();

            // Brute force: affine G'_k per joint applied per vertex.
            let transforms = global_transforms(&model, &theta, &beta).unwrap();
            let bs = crate::model::shape_blend(&model, &beta).unwrap();
            let bp = crate::model::pose_blend(&model, &theta).unwrap();
            for v in 0..model.vertex_count() {
                let x = model.template[v] + bs[v] + bp[v] + d.offsets[v];
                let mut expect = Vector3::zeros();
                for k in 0..model.joint_count() {
                    let (r, t) = transforms.affine(k);
                    expect += (r * x + t) * model.skin_weight(v, k);
                }
                assert_abs_diff_eq!(mesh.vertices[v], expect, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn skinning_is_linear_in_offsets() {
        let model = make_toy_model(8, 280, 10, 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let theta = random_pose(&mut rng, 10, 0.9);
        let beta = ShapeParams {
            coeffs: (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        };
        let vc = model.vertex_count();
        let rand_offsets = |rng: &mut ChaCha8Rng| {
            let mut d = VertexOffsets::zeros(vc);
            for o in d.offsets.iter_mut() {
                *o = Vector3::new(
                    rng.gen_range(-0.02..0.02),
                    rng.gen_range(-0.02..0.02),
                    rng.gen_range(-0.02..0.02),
                );
            }
            d
        };
        let d1 = rand_offsets(&mut rng);
        let d2 = rand_offsets(&mut rng);
        let sum = VertexOffsets {
            offsets: d1
                .offsets
                .iter()
                .zip(&d2.offsets)
                .map(|(a, b)| a + b)
                .collect(),
        };
        let base = skin(&model, &theta, &beta, &VertexOffsets::zeros(vc)).unwrap();
        let m1 = skin(&model, &theta, &beta, &d1).unwrap();
        let m2 = skin(&model, &theta, &beta, &d2).unwrap();
        let ms = skin(&model, &theta, &beta, &sum).unwrap();
        for v in 0..vc {
            let lhs = ms.vertices[v] - base.vertices[v];
            let rhs = (m1.vertices[v] - base.vertices[v]) + (m2.vertices[v] - base.vertices[v]);
            assert_abs_diff_eq!(lhs, rhs, epsilon = 1e-12);
        }
    }

    #[test]
    fn root_rotation_equivariance() {
        let model = make_toy_model(11, 320, 10, 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        let theta = random_pose(&mut rng, 10, 0.7);
        let beta = ShapeParams {
            coeffs: (0..3).map(|_| rng.gen_range(-1.5..1.5)).collect(),
        };
        let d = VertexOffsets::zeros(model.vertex_count());
        let extra = Vector3::new(0.3, 1.1, -0.5);

        let mut pre = theta.clone();
        let composed = rodrigues(&extra) * rodrigues(&theta.joints[0]);
        pre.joints[0] = crate::rotation::rodrigues_inv(&composed).unwrap();

        let root_rest = crate::model::joints_rest(&model, &beta).unwrap()[0];
        let base = skin(&model, &theta, &beta, &d).unwrap();
        let rotated = skin(&model, &pre, &beta, &d).unwrap();
        let r = rodrigues(&extra);
        for v in 0..model.vertex_count() {
            let expect = r * (base.vertices[v] - root_rest) + root_rest;
            assert_abs_diff_eq!(rotated.vertices[v], expect, epsilon = 1e-9);
        }
    }

    #[test]
    fn unpose_ray_identity_at_zero_pose() {
        let model = make_toy_model(13, 260, 10, 2).unwrap();
        let ray = Ray {
            origin: Vector3::new(0.5, -1.0, -3.0),
            direction: Vector3::new(0.1, 0.2, 1.0).normalize(),
        };
        let out = unpose_ray(
            &model,
            &PoseParams::zeros(10),
            &ShapeParams::zeros(2),
            7,
            &ray,
        )
        .unwrap();
        assert_eq!(out.origin, ray.origin);
        assert_abs_diff_eq!(out.direction, ray.direction, epsilon = 1e-15);
    }

    #[test]
    fn unpose_ray_rigid_model_inverse_rotates() {
        let model = make_toy_model(4, 40, 1, 1).unwrap();
        let mut theta = PoseParams::zeros(1);
        theta.joints[0] = Vector3::new(0.0, 0.9, 0.0);
        let ray = Ray {
            origin: Vector3::new(0.0, 0.0, -4.0),
            direction: Vector3::new(0.0, 0.0, 1.0),
        };
        let out = unpose_ray(&model, &theta, &ShapeParams::zeros(1), 3, &ray).unwrap();
        let r = rodrigues(&theta.joints[0]);
        assert_abs_diff_eq!(
            out.direction,
            r.transpose() * ray.direction,
            epsilon = 1e-12
        );
    }

    #[test]
    fn unpose_round_trip() {
        let model = make_toy_model(17, 300, 10, 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(55);
        for _ in 0..20 {
            let theta = random_pose(&mut rng, 10, 1.1);
            let beta = ShapeParams {
                coeffs: (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            };
            let v = rng.gen_range(0..model.vertex_count());
            let ray = Ray {
                origin: Vector3::new(
                    rng.gen_range(-2.0..2.0),
                    rng.gen_range(-2.0..2.0),
                    rng.gen_range(-5.0..-2.0),
                ),
                direction: Vector3::new(rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5), 1.0)
                    .normalize(),
            };
            let transforms = global_transforms(&model, &theta, &beta).unwrap();
            let blended = blended_affine(&model, &transforms, v);
            if !(blended.condition() < DEGENERATE_CONDITION) {
                continue;
            }
            let unposed = unpose_ray(&model, &theta, &beta, v, &ray).unwrap();
            let bp = crate::model::pose_blend(&model, &theta).unwrap();
            // Re-apply: origin back through M, direction through L.
            let origin = blended.linear * (unposed.origin + bp[v]) + blended.translation;
            let dir = (blended.linear * unposed.direction).normalize();
            assert_abs_diff_eq!(origin, ray.origin, epsilon = 1e-9);
            assert_abs_diff_eq!(dir, ray.direction, epsilon = 1e-9);
        }
    }

    #[test]
    fn vertex_jacobian_matches_finite_differences() {
        let model = make_toy_model(23, 260, 10, 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let theta = random_pose(&mut rng, 10, 0.8);
        let beta = ShapeParams {
            coeffs: vec![0.5, -1.0, 0.25],
        };
        let d = VertexOffsets::zeros(model.vertex_count());
        let transforms = global_transforms(&model, &theta, &beta).unwrap();
        let kin_jac = kinematics_jacobian(&model, &theta, &transforms);
        let bs = crate::model::shape_blend(&model, &beta).unwrap();
        let bp = crate::model::pose_blend(&model, &theta).unwrap();
        let h = 1e-6;

        for _ in 0..10 {
            let v = rng.gen_range(0..model.vertex_count());
            let rest = model.template[v] + bs[v] + bp[v] + d.offsets[v];
            let jac = skin_vertex_jacobian(&model, &transforms, &kin_jac, v, &rest, &[]);
            assert_abs_diff_eq!(
                jac.position,
                skin(&model, &theta, &beta, &d).unwrap().vertices[v],
                epsilon = 1e-12
            );
            for m in 0..30 {
                let mut tp = theta.clone();
                let mut tm = theta.clone();
                tp.joints[m / 3][m % 3] += h;
                tm.joints[m / 3][m % 3] -= h;
                let fp = skin(&model, &tp, &beta, &d).unwrap().vertices[v];
                let fm = skin(&model, &tm, &beta, &d).unwrap().vertices[v];
                assert_abs_diff_eq!(jac.wrt_theta[m], (fp - fm) / (2.0 * h), epsilon = 1e-6);
            }
            for s in 0..3 {
                let mut bpl = beta.clone();
                let mut bmi = beta.clone();
                bpl.coeffs[s] += h;
                bmi.coeffs[s] -= h;
                let fp = skin(&model, &theta, &bpl, &d).unwrap().vertices[v];
                let fm = skin(&model, &theta, &bmi, &d).unwrap().vertices[v];
                assert_abs_diff_eq!(jac.wrt_beta[s], (fp - fm) / (2.0 * h), epsilon = 1e-6);
            }
        }
    }
}
