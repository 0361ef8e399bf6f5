//! The SMPL-style parametric body model: template mesh, blendshapes,
//! joint regressor, skinning weights, and kinematic tree.
//!
//! Canonical model frame: x right, y down (gravity is +y), z toward the
//! default front view. A model standing "upright" therefore has its head
//! at negative y, which keeps identity extrinsics upright in image space.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::Vector3;
#[cfg_attr(feature = "std", allow(unused_imports))]
use num_traits::Float;

mod blend;
mod kinematics;
mod skin;
mod toy;

pub use blend::{joints_rest, pose_blend, pose_features, rest_joint_shape_jacobian, shape_blend};
pub use kinematics::{global_transforms, kinematics_jacobian, JointTransforms, KinematicsJacobian};
pub use skin::{
    blended_affine, skin, skin_vertex, skin_vertex_jacobian, unpose_ray, unpose_ray_precomputed,
    BlendedTransform, VertexSkinJacobian, DEGENERATE_CONDITION,
};
pub use toy::{a_pose, make_toy_model};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ModelError {
    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("skin_weights row {row} sums to {sum} (must be 1 within 1e-6)")]
    SkinWeightRowSum { row: usize, sum: f64 },
    #[error("skin_weights[{row}][{col}] = {value} is negative")]
    NegativeSkinWeight { row: usize, col: usize, value: f64 },
    #[error("joint_regressor row {row} sums to {sum} (must be 1 within 1e-6)")]
    RegressorRowSum { row: usize, sum: f64 },
    #[error("kinematic tree invalid: {reason} (joint {joint})")]
    BadTree { reason: &'static str, joint: usize },
    #[error("face {face} references vertex {index} out of range")]
    FaceIndexOutOfRange { face: usize, index: usize },
    #[error("non-finite value in {what} at index {index}")]
    NonFinite { what: &'static str, index: usize },
    #[error("parameter bounds violated: {0}")]
    BadParameters(&'static str),
}

/// The parametric body model. Immutable after construction; all operations
/// on it are pure functions and safe to share across threads.
#[derive(Debug, Clone, PartialEq)]
pub struct BodyModel {
    /// Template (mean) vertices in the zero pose, meters. Length V.
    pub template: Vec<Vector3<f64>>,
    /// Triangle faces, indices into the vertex list. Length F.
    pub faces: Vec<[usize; 3]>,
    /// Shape blendshapes, meters per unit shape coefficient.
    /// Flat layout `(v*3 + axis)*S + s`.
    pub shape_dirs: Vec<f64>,
    /// Pose blendshapes, meters per pose feature, `P = 9*(K-1)` features.
    /// Flat layout `(v*3 + axis)*P + p`; empty means identically zero.
    pub pose_dirs: Vec<f64>,
    /// Joint regressor, flat layout `k*V + v`; rows sum to 1.
    pub joint_regressor: Vec<f64>,
    /// Skinning weights, flat layout `v*K + k`; rows are convex.
    pub skin_weights: Vec<f64>,
    /// Parent joint per joint; the root (joint 0) has `None`.
    pub parent: Vec<Option<usize>>,
    /// Joint names, length K.
    pub joint_names: Vec<String>,
    /// Number of shape coefficients S.
    pub shape_count: usize,
}

impl BodyModel {
    pub fn vertex_count(&self) -> usize {
        self.template.len()
    }

    pub fn joint_count(&self) -> usize {
        self.parent.len()
    }

    pub fn shape_count(&self) -> usize {
        self.shape_count
    }

    /// Number of pose blendshape features, `9*(K-1)`.
    pub fn pose_feature_count(&self) -> usize {
        9 * self.joint_count().saturating_sub(1)
    }

    /// Shape displacement direction of vertex `v` for coefficient `s`.
    pub fn shape_dir(&self, v: usize, s: usize) -> Vector3<f64> {
        let n = self.shape_count;
        Vector3::new(
            self.shape_dirs[(v * 3) * n + s],
            self.shape_dirs[(v * 3 + 1) * n + s],
            self.shape_dirs[(v * 3 + 2) * n + s],
        )
    }

    pub fn skin_weight(&self, v: usize, k: usize) -> f64 {
        self.skin_weights[v * self.joint_count() + k]
    }

    pub fn skin_weights_row(&self, v: usize) -> &[f64] {
        let k = self.joint_count();
        &self.skin_weights[v * k..(v + 1) * k]
    }

    pub fn regressor_row(&self, k: usize) -> &[f64] {
        let v = self.vertex_count();
        &self.joint_regressor[k * v..(k + 1) * v]
    }

    pub fn joint_index(&self, name: &str) -> Option<usize> {
        self.joint_names.iter().position(|n| n == name)
    }

    /// Joint indices in an order where every parent precedes its children.
    /// Requires a valid tree (see [`BodyModel::validate`]).
    pub fn topo_order(&self) -> Vec<usize> {
        let k = self.joint_count();
        let mut children: Vec<Vec<usize>> = vec![Vec::new(); k];
        let mut roots = Vec::new();
        for (j, p) in self.parent.iter().enumerate() {
            match p {
                Some(p) => children[*p].push(j),
                None => roots.push(j),
            }
        }
        let mut order = Vec::with_capacity(k);
        let mut stack = roots;
        while let Some(j) = stack.pop() {
            order.push(j);
            for &c in children[j].iter().rev() {
                stack.push(c);
            }
        }
        order
    }

    /// Checks every type invariant, reporting the offending row/index.
    pub fn validate(&self) -> Result<(), ModelError> {
        let (v, k, s) = (self.vertex_count(), self.joint_count(), self.shape_count);
        let expect = |what, expected: usize, got: usize| {
            if expected != got {
                Err(ModelError::DimensionMismatch {
                    what,
                    expected,
                    got,
                })
            } else {
                Ok(())
            }
        };
        expect("shape_dirs", v * 3 * s, self.shape_dirs.len())?;
        if !self.pose_dirs.is_empty() {
            expect(
                "pose_dirs",
                v * 3 * self.pose_feature_count(),
                self.pose_dirs.len(),
            )?;
        }
        expect("joint_regressor", k * v, self.joint_regressor.len())?;
        expect("skin_weights", v * k, self.skin_weights.len())?;
        expect("joint_names", k, self.joint_names.len())?;

        for (name, data) in [
            ("template", bytemuck_flat(&self.template)),
            ("shape_dirs", self.shape_dirs.clone()),
            ("pose_dirs", self.pose_dirs.clone()),
            ("joint_regressor", self.joint_regressor.clone()),
            ("skin_weights", self.skin_weights.clone()),
        ] {
            if let Some(i) = data.iter().position(|x| !x.is_finite()) {
                return Err(ModelError::NonFinite {
                    what: name,
                    index: i,
                });
            }
        }

        for row in 0..v {
            let mut sum = 0.0;
            for col in 0..k {
                let w = self.skin_weight(row, col);
                if w < 0.0 {
                    return Err(ModelError::NegativeSkinWeight { row, col, value: w });
                }
                sum += w;
            }
            if (sum - 1.0).abs() > 1e-6 {
                return Err(ModelError::SkinWeightRowSum { row, sum });
            }
        }

        for row in 0..k {
            let sum: f64 = self.regressor_row(row).iter().sum();
            if (sum - 1.0).abs() > 1e-6 {
                return Err(ModelError::RegressorRowSum { row, sum });
            }
        }

        // Tree: joint 0 is the single root, everything reaches it acyclically.
        if k == 0 {
            return Err(ModelError::BadTree {
                reason: "no joints",
                joint: 0,
            });
        }
        if self.parent[0].is_some() {
            return Err(ModelError::BadTree {
                reason: "joint 0 must be the root",
                joint: 0,
            });
        }
        for (j, p) in self.parent.iter().enumerate() {
            match p {
                None if j != 0 => {
                    return Err(ModelError::BadTree {
                        reason: "multiple roots",
                        joint: j,
                    })
                }
                Some(p) if *p >= k => {
                    return Err(ModelError::BadTree {
                        reason: "parent index out of range",
                        joint: j,
                    })
                }
                _ => {}
            }
        }
        for j in 0..k {
            let mut cur = j;
            let mut steps = 0;
            while let Some(p) = self.parent[cur] {
                cur = p;
                steps += 1;
                if steps > k {
                    return Err(ModelError::BadTree {
                        reason: "cycle detected",
                        joint: j,
                    });
                }
            }
            if cur != 0 {
                return Err(ModelError::BadTree {
                    reason: "not connected to root",
                    joint: j,
                });
            }
        }

        for (f, face) in self.faces.iter().enumerate() {
            for &idx in face {
                if idx >= v {
                    return Err(ModelError::FaceIndexOutOfRange {
                        face: f,
                        index: idx,
                    });
                }
            }
        }
        Ok(())
    }
}

fn bytemuck_flat(v: &[Vector3<f64>]) -> Vec<f64> {
    v.iter().flat_map(|p| [p.x, p.y, p.z]).collect()
}

/// Pose parameters: one axis-angle rotation per joint, joint 0 being the
/// global root rotation.
#[derive(Debug, Clone, PartialEq)]
pub struct PoseParams {
    pub joints: Vec<Vector3<f64>>,
}

impl PoseParams {
    pub fn zeros(joint_count: usize) -> Self {
        PoseParams {
            joints: vec![Vector3::zeros(); joint_count],
        }
    }

    pub fn joint_count(&self) -> usize {
        self.joints.len()
    }

    /// Flat component accessor, index `3*k + axis`.
    pub fn flat(&self, index: usize) -> f64 {
        self.joints[index / 3][index % 3]
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        for (k, j) in self.joints.iter().enumerate() {
            if !j.iter().all(|c| c.is_finite()) {
                return Err(ModelError::NonFinite {
                    what: "pose",
                    index: k,
                });
            }
            if j.norm() >= 2.0 * core::f64::consts::PI {
                return Err(ModelError::BadParameters(
                    "axis-angle norm must stay below 2*pi",
                ));
            }
        }
        Ok(())
    }
}

/// Shape PCA coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct ShapeParams {
    pub coeffs: Vec<f64>,
}

impl ShapeParams {
    pub fn zeros(shape_count: usize) -> Self {
        ShapeParams {
            coeffs: vec![0.0; shape_count],
        }
    }
}

/// Per-vertex free-form displacement in the zero-pose space.
#[derive(Debug, Clone, PartialEq)]
pub struct VertexOffsets {
    pub offsets: Vec<Vector3<f64>>,
}

impl VertexOffsets {
    pub fn zeros(vertex_count: usize) -> Self {
        VertexOffsets {
            offsets: vec![Vector3::zeros(); vertex_count],
        }
    }

    pub fn norm(&self) -> f64 {
        self.offsets
            .iter()
            .map(|d| d.norm_squared())
            .sum::<f64>()
            .sqrt()
    }
}

/// A triangle mesh, the output of skinning.
#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    pub vertices: Vec<Vector3<f64>>,
    pub faces: Vec<[usize; 3]>,
    pub normals: Option<Vec<Vector3<f64>>>,
}

impl Mesh {
    /// Area-weighted per-vertex normals. Vertices with no incident area
    /// get a zero normal.
    pub fn compute_normals(&mut self) {
        let mut normals = vec![Vector3::zeros(); self.vertices.len()];
        for face in &self.faces {
            let [a, b, c] = *face;
            let n =
                (self.vertices[b] - self.vertices[a]).cross(&(self.vertices[c] - self.vertices[a]));
            normals[a] += n;
            normals[b] += n;
            normals[c] += n;
        }
        for n in &mut normals {
            let len = n.norm();
            if len > 1e-30 {
                *n /= len;
            }
        }
        self.normals = Some(normals);
    }

    /// Diagonal of the axis-aligned bounding box.
    pub fn bbox_diagonal(&self) -> f64 {
        if self.vertices.is_empty() {
            return 0.0;
        }
        let mut lo = self.vertices[0];
        let mut hi = self.vertices[0];
        for v in &self.vertices {
            lo = lo.inf(v);
            hi = hi.sup(v);
        }
        (hi - lo).norm()
    }

    pub fn centroid(&self) -> Vector3<f64> {
        if self.vertices.is_empty() {
            return Vector3::zeros();
        }
        self.vertices.iter().sum::<Vector3<f64>>() / self.vertices.len() as f64
    }
}
