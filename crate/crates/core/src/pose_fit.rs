//! Pose fitting: estimates pose, shape, and per-view camera extrinsics
//! from 2D joint observations by staged robust least squares.
//!
//! The energy is a robust joint-reprojection term over all views plus an
//! exponential bending prior on selected pose components and a squared
//! shape prior. Cameras are free variables; the gauge is fixed by freezing
//! view 0's rotation at its initial value.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector, Vector2, Vector3};
#[cfg_attr(feature = "std", allow(unused_imports))]
use num_traits::Float;

use crate::camera::CameraParams;
use crate::model::{
    global_transforms, joints_rest, kinematics_jacobian, BodyModel, ModelError, PoseParams,
    ShapeParams,
};
use crate::optim::{
    dogleg_minimize, robustify_group, BlockJacobian, CompositeProblem, EnergyTrace, EvalError,
    JacBlock, LeastSquaresProblem, ParamLayout, SolveError, Stage, StageSchedule,
};
use crate::rotation::rodrigues;

/// Raw residual magnitude substituted (per pixel coordinate) when a joint
/// lands behind a camera; constant, so it carries no gradient.
const BEHIND_CAMERA_RESIDUAL_SIGMAS: f64 = 10.0;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PoseFitError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("no observation maps to any model joint")]
    NoMappedJoints,
    #[error("mapping references model joint {index} but the model has {joint_count}")]
    BadMapping { index: usize, joint_count: usize },
    #[error("camera initialization needs torso joints; missing {missing:?}")]
    MissingTorsoJoints { missing: Vec<String> },
    #[error("torso has zero pixel extent in view {view}")]
    DegenerateTorso { view: usize },
    #[error("view counts differ: {observations} observation views, {cameras} cameras")]
    ViewCountMismatch { observations: usize, cameras: usize },
    #[error(transparent)]
    Solve(#[from] SolveError),
}

/// One detected joint in one view.
#[derive(Debug, Clone, PartialEq)]
pub struct JointObs {
    pub name: String,
    pub u: f64,
    pub v: f64,
    pub confidence: f64,
}

/// Per-view joint detections.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct JointObservations {
    pub views: Vec<Vec<JointObs>>,
}

impl JointObservations {
    pub fn view_count(&self) -> usize {
        self.views.len()
    }
}

/// Maps observation joint names to model joint indices; unmapped names
/// are ignored.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct JointMapping {
    pub map: BTreeMap<String, usize>,
}

impl JointMapping {
    /// Identity mapping over the model's own joint names.
    pub fn identity(model: &BodyModel) -> Self {
        JointMapping {
            map: model
                .joint_names
                .iter()
                .enumerate()
                .map(|(i, n)| (n.clone(), i))
                .collect(),
        }
    }

    pub fn validate(&self, model: &BodyModel) -> Result<(), PoseFitError> {
        for (_, &index) in &self.map {
            if index >= model.joint_count() {
                return Err(PoseFitError::BadMapping {
                    index,
                    joint_count: model.joint_count(),
                });
            }
        }
        Ok(())
    }
}

/// The exponential bending prior: `alpha * sum exp(sign_i * theta_i)` over
/// flat pose-vector indices. Signs default to +1; they let models whose
/// local joint frames mirror left/right keep "natural bending is negative"
/// on both sides.
#[derive(Debug, Clone, PartialEq)]
pub struct PosePriorSpec {
    pub indices: Vec<usize>,
    pub signs: Vec<f64>,
    pub alpha: f64,
}

impl PosePriorSpec {
    pub fn new(indices: Vec<usize>, alpha: f64) -> Self {
        let signs = vec![1.0; indices.len()];
        PosePriorSpec {
            indices,
            signs,
            alpha,
        }
    }

    /// The reference layout for a 24-joint body: flat indices 55, 58, 15,
    /// 12 (the elbow and knee bend components), alpha 10.
    pub fn reference_24() -> Self {
        Self::new(vec![55, 58, 15, 12], 10.0)
    }

    /// Derives indices from `(joint name, local axis, sign)` triples;
    /// names absent from the model are skipped.
    pub fn from_named_bends(model: &BodyModel, bends: &[(&str, usize, f64)], alpha: f64) -> Self {
        let mut indices = Vec::new();
        let mut signs = Vec::new();
        for (name, axis, sign) in bends {
            if let Some(j) = model.joint_index(name) {
                indices.push(3 * j + axis);
                signs.push(*sign);
            }
        }
        PosePriorSpec {
            indices,
            signs,
            alpha,
        }
    }

    /// Bend prior for the toy humanoid: knees flex about x (natural sense
    /// negative on both sides), elbows about y (the right side's natural
    /// flexion is the positive sense, so its sign flips).
    pub fn toy_default(model: &BodyModel) -> Self {
        Self::from_named_bends(
            model,
            &[
                ("left_knee", 0, 1.0),
                ("right_knee", 0, 1.0),
                ("left_elbow", 1, 1.0),
                ("right_elbow", 1, -1.0),
            ],
            10.0,
        )
    }

    pub fn validate(&self, joint_count: usize) -> Result<(), PoseFitError> {
        for &i in &self.indices {
            if i >= 3 * joint_count {
                return Err(PoseFitError::BadMapping {
                    index: i,
                    joint_count,
                });
            }
        }
        Ok(())
    }
}

/// Posed 3D model joints: rest joints transported by the world transforms.
pub fn model_joints_3d(
    model: &BodyModel,
    theta: &PoseParams,
    beta: &ShapeParams,
) -> Result<Vec<Vector3<f64>>, ModelError> {
    let transforms = global_transforms(model, theta, beta)?;
    Ok((0..model.joint_count())
        .map(|k| transforms.posed_joint(k))
        .collect())
}

/// Packing of the pose-fit parameter vector:
/// `[theta (3K) | beta (S) | per view: rot (3), trans (3)]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoseVarPack {
    pub joint_count: usize,
    pub shape_count: usize,
    pub view_count: usize,
}

impl PoseVarPack {
    pub fn for_model(model: &BodyModel, view_count: usize) -> Self {
        PoseVarPack {
            joint_count: model.joint_count(),
            shape_count: model.shape_count(),
            view_count,
        }
    }

    pub fn total_len(&self) -> usize {
        3 * self.joint_count + self.shape_count + 6 * self.view_count
    }

    pub fn beta_offset(&self) -> usize {
        3 * self.joint_count
    }

    pub fn cam_rot_offset(&self, view: usize) -> usize {
        3 * self.joint_count + self.shape_count + 6 * view
    }

    pub fn cam_trans_offset(&self, view: usize) -> usize {
        self.cam_rot_offset(view) + 3
    }

    /// Layout with view 0's rotation frozen (the gauge fix).
    pub fn layout(&self) -> ParamLayout {
        let mut blocks: Vec<(String, usize, bool)> = vec![
            ("theta".into(), 3 * self.joint_count, false),
            ("beta".into(), self.shape_count, false),
        ];
        for view in 0..self.view_count {
            blocks.push((alloc::format!("cam{view}_rot"), 3, view == 0));
            blocks.push((alloc::format!("cam{view}_trans"), 3, false));
        }
        ParamLayout::new(blocks)
    }

    /// Layout where only one view's extrinsics are free (used by the
    /// orientation seeding refinement).
    pub fn camera_only_layout(&self, view: usize) -> ParamLayout {
        let mut blocks: Vec<(String, usize, bool)> = vec![
            ("theta".into(), 3 * self.joint_count, true),
            ("beta".into(), self.shape_count, true),
        ];
        for v in 0..self.view_count {
            blocks.push((alloc::format!("cam{v}_rot"), 3, v != view));
            blocks.push((alloc::format!("cam{v}_trans"), 3, v != view));
        }
        ParamLayout::new(blocks)
    }

    pub fn pack(
        &self,
        theta: &PoseParams,
        beta: &ShapeParams,
        cameras: &[CameraParams],
    ) -> DVector<f64> {
        let mut x = DVector::zeros(self.total_len());
        for (k, j) in theta.joints.iter().enumerate() {
            x.fixed_rows_mut::<3>(3 * k).copy_from(j);
        }
        for (s, b) in beta.coeffs.iter().enumerate() {
            x[self.beta_offset() + s] = *b;
        }
        for (v, cam) in cameras.iter().enumerate() {
            x.fixed_rows_mut::<3>(self.cam_rot_offset(v))
                .copy_from(&cam.rotation);
            x.fixed_rows_mut::<3>(self.cam_trans_offset(v))
                .copy_from(&cam.translation);
        }
        x
    }

    pub fn unpack_theta(&self, x: &DVector<f64>) -> PoseParams {
        PoseParams {
            joints: (0..self.joint_count)
                .map(|k| Vector3::new(x[3 * k], x[3 * k + 1], x[3 * k + 2]))
                .collect(),
        }
    }

    pub fn unpack_beta(&self, x: &DVector<f64>) -> ShapeParams {
        ShapeParams {
            coeffs: (0..self.shape_count)
                .map(|s| x[self.beta_offset() + s])
                .collect(),
        }
    }

    /// Cameras with extrinsics from the parameter vector and intrinsics
    /// from the base cameras.
    pub fn unpack_cameras(&self, x: &DVector<f64>, base: &[CameraParams]) -> Vec<CameraParams> {
        base.iter()
            .enumerate()
            .map(|(v, cam)| {
                let mut cam = cam.clone();
                cam.rotation = x.fixed_rows::<3>(self.cam_rot_offset(v)).into();
                cam.translation = x.fixed_rows::<3>(self.cam_trans_offset(v)).into();
                cam
            })
            .collect()
    }
}

/// The robust joint-reprojection term over all views as a least-squares
/// problem over the packed parameter vector. One residual group per
/// (view, mapped joint), weighted by observation confidence.
pub struct JointTermProblem<'a> {
    model: &'a BodyModel,
    base_cameras: Vec<CameraParams>,
    /// (view, model joint, observed pixel, confidence)
    groups: Vec<(usize, usize, Vector2<f64>, f64)>,
    sigma: f64,
    pack: PoseVarPack,
}

impl<'a> JointTermProblem<'a> {
    pub fn new(
        model: &'a BodyModel,
        obs: &JointObservations,
        mapping: &JointMapping,
        base_cameras: &[CameraParams],
        sigma: f64,
    ) -> Result<Self, PoseFitError> {
        mapping.validate(model)?;
        if obs.view_count() != base_cameras.len() {
            return Err(PoseFitError::ViewCountMismatch {
                observations: obs.view_count(),
                cameras: base_cameras.len(),
            });
        }
        let mut groups = Vec::new();
        for (view, list) in obs.views.iter().enumerate() {
            for o in list {
                if let Some(&joint) = mapping.map.get(&o.name) {
                    groups.push((view, joint, Vector2::new(o.u, o.v), o.confidence));
                }
            }
        }
        if groups.is_empty() {
            return Err(PoseFitError::NoMappedJoints);
        }
        Ok(JointTermProblem {
            model,
            base_cameras: base_cameras.to_vec(),
            groups,
            sigma,
            pack: PoseVarPack::for_model(model, obs.view_count()),
        })
    }

    pub fn pack(&self) -> PoseVarPack {
        self.pack
    }

    fn behind_camera_residual(&self, confidence: f64) -> DVector<f64> {
        let c = BEHIND_CAMERA_RESIDUAL_SIGMAS * self.sigma;
        let mut r = DVector::from_vec(vec![c, c]);
        robustify_group(&mut r, None, self.sigma, confidence.max(0.0));
        r
    }
}

impl LeastSquaresProblem for JointTermProblem<'_> {
    fn residual_len(&self) -> usize {
        2 * self.groups.len()
    }

    fn param_len(&self) -> usize {
        self.pack.total_len()
    }

    fn residuals(&self, x: &DVector<f64>) -> Result<DVector<f64>, EvalError> {
        let theta = self.pack.unpack_theta(x);
        let beta = self.pack.unpack_beta(x);
        let cameras = self.pack.unpack_cameras(x, &self.base_cameras);
        let transforms = global_transforms(self.model, &theta, &beta)
            .map_err(|e| EvalError::Construction(alloc::format!("{e}")))?;
        let mut out = DVector::zeros(self.residual_len());
        for (g, (view, joint, obs_uv, conf)) in self.groups.iter().enumerate() {
            let p = transforms.posed_joint(*joint);
            let r = match cameras[*view].project(&p) {
                Ok(uv) => {
                    let mut r = DVector::from_vec(vec![obs_uv.x - uv.x, obs_uv.y - uv.y]);
                    robustify_group(&mut r, None, self.sigma, conf.max(0.0));
                    r
                }
                Err(_) => self.behind_camera_residual(*conf),
            };
            out.rows_mut(2 * g, 2).copy_from(&r);
        }
        Ok(out)
    }

    fn jacobian(&self, x: &DVector<f64>) -> Result<BlockJacobian, EvalError> {
        let theta = self.pack.unpack_theta(x);
        let beta = self.pack.unpack_beta(x);
        let cameras = self.pack.unpack_cameras(x, &self.base_cameras);
        let transforms = global_transforms(self.model, &theta, &beta)
            .map_err(|e| EvalError::Construction(alloc::format!("{e}")))?;
        let kin_jac = kinematics_jacobian(self.model, &theta, &transforms);
        let (kc, sc) = (self.pack.joint_count, self.pack.shape_count);
        let mut jac = BlockJacobian::new(self.residual_len(), self.pack.total_len());

        for (g, (view, joint, obs_uv, conf)) in self.groups.iter().enumerate() {
            let p = transforms.posed_joint(*joint);
            let proj = match cameras[*view].project_with_jacobians(&p) {
                Ok(p) => p,
                // Behind the camera: constant residual, zero block.
                Err(_) => continue,
            };
            let theta_cols = &kin_jac.active_theta[*joint];
            let mut cols: Vec<usize> = theta_cols.clone();
            cols.extend((0..sc).map(|s| self.pack.beta_offset() + s));
            let rot0 = self.pack.cam_rot_offset(*view);
            cols.extend(rot0..rot0 + 6);

            let mut values = DMatrix::zeros(2, cols.len());
            let mut col = 0;
            for &m in theta_cols {
                let d = proj.wrt_point * kin_jac.djoint_dtheta(kc, *joint, m);
                values.set_column(col, &(-d));
                col += 1;
            }
            for s in 0..sc {
                let d = proj.wrt_point * kin_jac.djoint_dbeta(sc, *joint, s);
                values.set_column(col, &(-d));
                col += 1;
            }
            for c in 0..3 {
                values.set_column(col, &(-proj.wrt_rotation.column(c)));
                col += 1;
            }
            for c in 0..3 {
                values.set_column(col, &(-proj.wrt_translation.column(c)));
                col += 1;
            }

            let mut r = DVector::from_vec(vec![obs_uv.x - proj.uv.x, obs_uv.y - proj.uv.y]);
            robustify_group(&mut r, Some(&mut values), self.sigma, conf.max(0.0));
            jac.push(JacBlock {
                row0: 2 * g,
                cols,
                values,
            });
        }
        Ok(jac)
    }
}

/// Joint-term energy at a configuration.
pub fn joint_term(
    model: &BodyModel,
    theta: &PoseParams,
    beta: &ShapeParams,
    cameras: &[CameraParams],
    obs: &JointObservations,
    mapping: &JointMapping,
    sigma: f64,
) -> Result<f64, PoseFitError> {
    let problem = JointTermProblem::new(model, obs, mapping, cameras, sigma)?;
    let x = problem.pack().pack(theta, beta, cameras);
    let r = problem
        .residuals(&x)
        .map_err(|e| PoseFitError::Solve(e.into()))?;
    Ok(r.norm_squared())
}

/// Exponential bending prior as residual rows over the packed vector.
pub struct PosePriorProblem {
    pub spec: PosePriorSpec,
    pub weight: f64,
    pub pack: PoseVarPack,
}

impl LeastSquaresProblem for PosePriorProblem {
    fn residual_len(&self) -> usize {
        self.spec.indices.len()
    }

    fn param_len(&self) -> usize {
        self.pack.total_len()
    }

    fn residuals(&self, x: &DVector<f64>) -> Result<DVector<f64>, EvalError> {
        let scale = (self.weight * self.spec.alpha).max(0.0).sqrt();
        Ok(DVector::from_iterator(
            self.spec.indices.len(),
            self.spec
                .indices
                .iter()
                .zip(&self.spec.signs)
                .map(|(&i, &sign)| scale * (0.5 * sign * x[i]).exp()),
        ))
    }

    fn jacobian(&self, x: &DVector<f64>) -> Result<BlockJacobian, EvalError> {
        let r = self.residuals(x)?;
        let mut jac = BlockJacobian::new(self.residual_len(), self.pack.total_len());
        for (row, (&i, &sign)) in self.spec.indices.iter().zip(&self.spec.signs).enumerate() {
            jac.push(JacBlock {
                row0: row,
                cols: vec![i],
                values: DMatrix::from_element(1, 1, 0.5 * sign * r[row]),
            });
        }
        Ok(jac)
    }
}

/// `E_theta = alpha * sum_i exp(sign_i * theta_i)` over the prior indices.
pub fn pose_prior_term(theta: &PoseParams, spec: &PosePriorSpec) -> f64 {
    spec.alpha
        * spec
            .indices
            .iter()
            .zip(&spec.signs)
            .map(|(&i, &sign)| (sign * theta.flat(i)).exp())
            .sum::<f64>()
}

/// Squared-norm shape prior as residual rows over the packed vector.
pub struct ShapePriorProblem {
    pub weight: f64,
    pub pack: PoseVarPack,
}

impl LeastSquaresProblem for ShapePriorProblem {
    fn residual_len(&self) -> usize {
        self.pack.shape_count
    }

    fn param_len(&self) -> usize {
        self.pack.total_len()
    }

    fn residuals(&self, x: &DVector<f64>) -> Result<DVector<f64>, EvalError> {
        let scale = self.weight.max(0.0).sqrt();
        Ok(DVector::from_iterator(
            self.pack.shape_count,
            (0..self.pack.shape_count).map(|s| scale * x[self.pack.beta_offset() + s]),
        ))
    }

    fn jacobian(&self, _x: &DVector<f64>) -> Result<BlockJacobian, EvalError> {
        let scale = self.weight.max(0.0).sqrt();
        let mut jac = BlockJacobian::new(self.residual_len(), self.pack.total_len());
        for s in 0..self.pack.shape_count {
            jac.push(JacBlock {
                row0: s,
                cols: vec![self.pack.beta_offset() + s],
                values: DMatrix::from_element(1, 1, scale),
            });
        }
        Ok(jac)
    }
}

/// `E_beta = sum beta_i^2` (the literal linear sum is unbounded below;
/// the squared norm is the usable reading).
pub fn shape_prior_term(beta: &ShapeParams) -> f64 {
    beta.coeffs.iter().map(|b| b * b).sum()
}

/// Initializes per-view cameras: identity rotation, depth from the ratio
/// of model torso length to observed torso pixel length, and x/y chosen so
/// the model torso midpoint projects onto the observed torso midpoint.
///
/// Torso endpoints prefer `neck`/`pelvis`, falling back to the midpoints
/// of `left/right_shoulder` and `left/right_hip`.
pub fn init_cameras(
    model: &BodyModel,
    obs: &JointObservations,
    mapping: &JointMapping,
    intrinsics: &[CameraParams],
) -> Result<Vec<CameraParams>, PoseFitError> {
    mapping.validate(model)?;
    if obs.view_count() != intrinsics.len() {
        return Err(PoseFitError::ViewCountMismatch {
            observations: obs.view_count(),
            cameras: intrinsics.len(),
        });
    }
    let rest = joints_rest(model, &ShapeParams::zeros(model.shape_count()))?;

    let neck_pelvis = ["neck", "pelvis"];
    let shoulders = ["left_shoulder", "right_shoulder"];
    let hips = ["left_hip", "right_hip"];
    let has = |name: &str| mapping.map.contains_key(name);
    let (top_names, bot_names): (&[&str], &[&str]) = if neck_pelvis.iter().all(|n| has(n)) {
        (&neck_pelvis[..1], &neck_pelvis[1..])
    } else if shoulders.iter().chain(&hips).all(|n| has(n)) {
        (&shoulders[..], &hips[..])
    } else {
        let missing: Vec<String> = neck_pelvis
            .iter()
            .chain(shoulders.iter())
            .chain(hips.iter())
            .filter(|n| !has(n))
            .map(|n| String::from(*n))
            .collect();
        return Err(PoseFitError::MissingTorsoJoints { missing });
    };

    let model_point = |names: &[&str]| -> Vector3<f64> {
        let mut p = Vector3::zeros();
        for n in names {
            p += rest[mapping.map[*n]];
        }
        p / names.len() as f64
    };
    let top3d = model_point(top_names);
    let bot3d = model_point(bot_names);
    let torso_len = (top3d - bot3d).norm();
    let mid3d = (top3d + bot3d) * 0.5;

    let mut cameras = Vec::with_capacity(intrinsics.len());
    for (view, base) in intrinsics.iter().enumerate() {
        let observed = |names: &[&str]| -> Result<Vector2<f64>, PoseFitError> {
            let mut p = Vector2::zeros();
            for n in names {
                let o = obs.views[view]
                    .iter()
                    .find(|o| o.name == *n)
                    .ok_or_else(|| PoseFitError::MissingTorsoJoints {
                        missing: vec![String::from(*n)],
                    })?;
                p += Vector2::new(o.u, o.v);
            }
            Ok(p / names.len() as f64)
        };
        let top2d = observed(top_names)?;
        let bot2d = observed(bot_names)?;
        let mid2d = (top2d + bot2d) * 0.5;
        let torso_px = (top2d - bot2d).norm();
        if torso_px < 1e-9 {
            return Err(PoseFitError::DegenerateTorso { view });
        }
        let tz = base.fx * torso_len / torso_px;
        let tx = (mid2d.x - base.cx) * (mid3d.z + tz) / base.fx - mid3d.x;
        let ty = (mid2d.y - base.cy) * (mid3d.z + tz) / base.fy - mid3d.y;
        let mut cam = base.clone();
        cam.rotation = Vector3::zeros();
        cam.translation = Vector3::new(tx, ty, tz);
        cameras.push(cam);
    }
    Ok(cameras)
}

/// Initial values and switches for [`fit_pose`].
#[derive(Debug, Clone)]
pub struct PoseFitOptions {
    pub theta0: Option<PoseParams>,
    pub beta0: Option<ShapeParams>,
    /// Seed the root yaw and each non-reference camera's ring azimuth by a
    /// deterministic candidate search before the staged solve;
    /// indispensable when every camera starts at identity rotation.
    pub orientation_seeding: bool,
}

impl Default for PoseFitOptions {
    fn default() -> Self {
        PoseFitOptions {
            theta0: None,
            beta0: None,
            orientation_seeding: true,
        }
    }
}

/// Result of the pose-fitting stage.
#[derive(Debug, Clone)]
pub struct PoseFit {
    pub theta: PoseParams,
    pub beta: ShapeParams,
    pub cameras: Vec<CameraParams>,
    pub trace: EnergyTrace,
}

/// Minimizes the staged pose energy over pose, shape, and camera
/// extrinsics, with view 0's rotation frozen at its initial value.
///
/// Stage weights: `w_theta` scales the bending prior, `w_beta` the shape
/// prior; the joint term uses the stage sigma. A missing weight turns the
/// prior off for that stage.
pub fn fit_pose(
    model: &BodyModel,
    obs: &JointObservations,
    mapping: &JointMapping,
    cameras0: &[CameraParams],
    schedule: &StageSchedule,
    prior_spec: &PosePriorSpec,
    options: &PoseFitOptions,
) -> Result<PoseFit, PoseFitError> {
    schedule.validate()?;
    prior_spec.validate(model.joint_count())?;
    let pack = PoseVarPack::for_model(model, cameras0.len());
    let theta0 = options
        .theta0
        .clone()
        .unwrap_or_else(|| PoseParams::zeros(model.joint_count()));
    let beta0 = options
        .beta0
        .clone()
        .unwrap_or_else(|| ShapeParams::zeros(model.shape_count()));

    let sigma0 = schedule.stages[0].sigma;
    let mut theta = theta0;
    let mut cameras = cameras0.to_vec();
    if options.orientation_seeding {
        seed_orientations(model, obs, mapping, &mut theta, &beta0, &mut cameras, sigma0)?;
    }

    let x0 = pack.pack(&theta, &beta0, &cameras);
    let layout = pack.layout();
    let (x, trace) = dogleg_minimize(
        |stage: &Stage| {
            let joint = JointTermProblem::new(model, obs, mapping, &cameras, stage.sigma)
                .map_err(|e| SolveError::Eval(EvalError::Construction(alloc::format!("{e}"))))?;
            let pose_prior = PosePriorProblem {
                spec: prior_spec.clone(),
                weight: stage.weight("w_theta").unwrap_or(0.0),
                pack,
            };
            let shape_prior = ShapePriorProblem {
                weight: stage.weight("w_beta").unwrap_or(0.0),
                pack,
            };
            Ok(PoseStageProblem {
                joint,
                pose_prior,
                shape_prior,
            })
        },
        &layout,
        &x0,
        schedule,
    )?;

    Ok(PoseFit {
        theta: pack.unpack_theta(&x),
        beta: pack.unpack_beta(&x),
        cameras: pack.unpack_cameras(&x, &cameras),
        trace,
    })
}

/// The three pose-fit terms of one stage, owned so the stage builder can
/// hand the problem to the solver by value.
pub struct PoseStageProblem<'a> {
    pub joint: JointTermProblem<'a>,
    pub pose_prior: PosePriorProblem,
    pub shape_prior: ShapePriorProblem,
}

impl LeastSquaresProblem for PoseStageProblem<'_> {
    fn residual_len(&self) -> usize {
        self.joint.residual_len() + self.pose_prior.residual_len() + self.shape_prior.residual_len()
    }

    fn param_len(&self) -> usize {
        self.joint.param_len()
    }

    fn residuals(&self, x: &DVector<f64>) -> Result<DVector<f64>, EvalError> {
        let mut composite = CompositeProblem::new(self.param_len());
        composite.push(&self.joint);
        composite.push(&self.pose_prior);
        composite.push(&self.shape_prior);
        composite.residuals(x)
    }

    fn jacobian(&self, x: &DVector<f64>) -> Result<BlockJacobian, EvalError> {
        let mut composite = CompositeProblem::new(self.param_len());
        composite.push(&self.joint);
        composite.push(&self.pose_prior);
        composite.push(&self.shape_prior);
        composite.jacobian(x)
    }
}

/// Deterministic global-orientation search: root yaw against view 0, then
/// per-view ring-azimuth candidates for each other camera, each polished
/// by a short camera-only refinement.
fn seed_orientations(
    model: &BodyModel,
    obs: &JointObservations,
    mapping: &JointMapping,
    theta: &mut PoseParams,
    beta: &ShapeParams,
    cameras: &mut [CameraParams],
    sigma: f64,
) -> Result<(), PoseFitError> {
    let candidates = 8usize;
    let vertical = Vector3::new(0.0, 1.0, 0.0);

    let single_view = |view: usize| JointObservations {
        views: obs
            .views
            .iter()
            .enumerate()
            .map(|(i, v)| if i == view { v.clone() } else { Vec::new() })
            .collect(),
    };

    // Root yaw from view 0 only (its rotation is the gauge).
    if obs.views.first().map(|v| !v.is_empty()).unwrap_or(false) {
        let view0 = single_view(0);
        let base_root = theta.joints[0];
        let mut best = (f64::INFINITY, base_root);
        for c in 0..candidates {
            let phi = core::f64::consts::TAU * c as f64 / candidates as f64;
            let composed = rodrigues(&(vertical * phi)) * rodrigues(&base_root);
            let Ok(root) = crate::rotation::rodrigues_inv(&composed) else {
                continue;
            };
            let mut cand = theta.clone();
            cand.joints[0] = root;
            match joint_term(model, &cand, beta, cameras, &view0, mapping, sigma) {
                Ok(e) if e < best.0 => best = (e, root),
                _ => {}
            }
        }
        if best.0.is_finite() {
            theta.joints[0] = best.1;
        }
    }

    // Ring azimuth for the non-reference cameras.
    let joints = model_joints_3d(model, theta, beta)?;
    let pivot = joints.iter().sum::<Vector3<f64>>() / joints.len() as f64;
    for view in 1..cameras.len() {
        if obs.views[view].is_empty() {
            continue;
        }
        let view_obs = single_view(view);
        let base = cameras[view].clone();
        let mut best: Option<(f64, CameraParams)> = None;
        for c in 0..candidates {
            let phi = core::f64::consts::TAU * c as f64 / candidates as f64;
            let yaw = rodrigues(&(vertical * phi));
            let center = pivot + yaw * (base.center() - pivot);
            let rot_matrix = base.rotation_matrix() * yaw.transpose();
            let Ok(rotation) = crate::rotation::rodrigues_inv(&rot_matrix) else {
                continue;
            };
            let mut cand = base.clone();
            cand.rotation = rotation;
            cand.translation = -(rot_matrix * center);

            let refined =
                refine_camera(model, &view_obs, mapping, cameras, view, &cand, theta, beta, sigma)?;
            if best.as_ref().map(|b| refined.0 < b.0).unwrap_or(true) {
                best = Some(refined);
            }
        }
        if let Some((_, cam)) = best {
            cameras[view] = cam;
        }
    }
    Ok(())
}

/// Short camera-only dogleg polish of one view; returns the refined
/// energy and camera.
#[allow(clippy::too_many_arguments)]
fn refine_camera(
    model: &BodyModel,
    view_obs: &JointObservations,
    mapping: &JointMapping,
    cameras: &[CameraParams],
    view: usize,
    candidate: &CameraParams,
    theta: &PoseParams,
    beta: &ShapeParams,
    sigma: f64,
) -> Result<(f64, CameraParams), PoseFitError> {
    let mut base_cams = cameras.to_vec();
    base_cams[view] = candidate.clone();
    let problem = JointTermProblem::new(model, view_obs, mapping, &base_cams, sigma)?;
    let pack = problem.pack();
    let layout = pack.camera_only_layout(view);
    let x0 = pack.pack(theta, beta, &base_cams);
    let schedule = StageSchedule::single(10, 1e-3);
    let (x, trace) = dogleg_minimize(|_| Ok(&problem), &layout, &x0, &schedule)?;
    let energy = trace.final_energy().unwrap_or(f64::INFINITY);
    let cams = pack.unpack_cameras(&x, &base_cams);
    Ok((energy, cams[view].clone()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{a_pose, make_toy_model};
    use crate::optim::numeric_jacobian;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn toy() -> BodyModel {
        make_toy_model(11, 220, 10, 4).unwrap()
    }

    /// Ring of cameras around the model's joints centroid.
    fn ring_cameras(model: &BodyModel, n: usize, radius: f64) -> Vec<CameraParams> {
        let rest = joints_rest(model, &ShapeParams::zeros(model.shape_count())).unwrap();
        let centroid = rest.iter().sum::<Vector3<f64>>() / rest.len() as f64;
        (0..n)
            .map(|i| {
                let phi = core::f64::consts::TAU * i as f64 / n as f64;
                let eye = centroid - Vector3::new(phi.sin(), 0.0, phi.cos()) * radius;
                CameraParams::look_at(300.0, Vector2::new(64.0, 64.0), 128, 128, eye, centroid)
                    .unwrap()
            })
            .collect()
    }

    fn observe(
        model: &BodyModel,
        theta: &PoseParams,
        beta: &ShapeParams,
        cameras: &[CameraParams],
    ) -> JointObservations {
        let joints = model_joints_3d(model, theta, beta).unwrap();
        JointObservations {
            views: cameras
                .iter()
                .map(|cam| {
                    joints
                        .iter()
                        .enumerate()
                        .filter_map(|(k, p)| {
                            cam.project(p).ok().map(|uv| JointObs {
                                name: model.joint_names[k].clone(),
                                u: uv.x,
                                v: uv.y,
                                confidence: 1.0,
                            })
                        })
                        .collect()
                })
                .collect(),
        }
    }

    #[test]
    fn model_joints_at_rest_equal_regressed_joints() {
        let model = toy();
        let beta = ShapeParams {
            coeffs: vec![0.5, -1.0, 0.2, 0.8],
        };
        let joints = model_joints_3d(&model, &PoseParams::zeros(10), &beta).unwrap();
        let rest = joints_rest(&model, &beta).unwrap();
        assert_eq!(joints, rest);
    }

    #[test]
    fn model_joints_match_per_joint_transport() {
        let model = toy();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let theta = PoseParams {
            joints: (0..10)
                .map(|_| {
                    Vector3::new(
                        rng.gen_range(-1.0..1.0),
                        rng.gen_range(-1.0..1.0),
                        rng.gen_range(-1.0..1.0),
                    )
                })
                .collect(),
        };
        let beta = ShapeParams::zeros(4);
        let joints = model_joints_3d(&model, &theta, &beta).unwrap();
        let transforms = global_transforms(&model, &theta, &beta).unwrap();
        for k in 0..10 {
            let (r, t) = transforms.affine(k);
            let expect = r * transforms.rest_joints[k] + t;
            assert_abs_diff_eq!(joints[k], expect, epsilon = 1e-12);
        }
    }

    #[test]
    fn pose_prior_closed_forms() {
        let spec = PosePriorSpec::new(vec![6, 9, 12, 15], 10.0);
        let theta0 = PoseParams::zeros(10);
        assert_abs_diff_eq!(pose_prior_term(&theta0, &spec), 40.0, epsilon = 1e-12);

        let mut bent = PoseParams::zeros(10);
        for &i in &spec.indices {
            bent.joints[i / 3][i % 3] = -1.0;
        }
        assert_abs_diff_eq!(
            pose_prior_term(&bent, &spec),
            40.0 * (-1.0f64).exp(),
            epsilon = 1e-12
        );

        // Increasing any indexed component strictly increases the term.
        let mut more = bent.clone();
        more.joints[2][0] += 0.3;
        assert!(pose_prior_term(&more, &spec) > pose_prior_term(&bent, &spec));
    }

    #[test]
    fn shape_prior_closed_forms() {
        assert_eq!(shape_prior_term(&ShapeParams::zeros(10)), 0.0);
        let mut b = ShapeParams::zeros(10);
        b.coeffs[0] = 1.0;
        assert_eq!(shape_prior_term(&b), 1.0);
        b.coeffs[1] = 2.0;
        assert_eq!(shape_prior_term(&b), 5.0);
    }

    #[test]
    fn joint_term_zero_at_exact_observations() {
        let model = toy();
        let theta = a_pose(&model);
        let beta = ShapeParams::zeros(4);
        let cameras = ring_cameras(&model, 3, 3.0);
        let obs = observe(&model, &theta, &beta, &cameras);
        let mapping = JointMapping::identity(&model);
        let e = joint_term(&model, &theta, &beta, &cameras, &obs, &mapping, 100.0).unwrap();
        assert!(e <= 1e-20, "energy {e}");
    }

    #[test]
    fn joint_term_single_offset_closed_form() {
        let model = toy();
        let theta = a_pose(&model);
        let beta = ShapeParams::zeros(4);
        let cameras = ring_cameras(&model, 2, 3.0);
        let mut obs = observe(&model, &theta, &beta, &cameras);
        obs.views[0][0].u += 3.0;
        obs.views[0][0].v += 4.0;
        let mapping = JointMapping::identity(&model);
        let e = joint_term(&model, &theta, &beta, &cameras, &obs, &mapping, 100.0).unwrap();
        assert_abs_diff_eq!(e, 25.0 / (100.0 * 100.0 + 25.0), epsilon = 1e-12);

        let e_wide = joint_term(&model, &theta, &beta, &cameras, &obs, &mapping, 200.0).unwrap();
        assert!(e_wide < e);
    }

    #[test]
    fn term_jacobians_match_finite_differences() {
        let model = toy();
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let theta = PoseParams {
            joints: (0..10)
                .map(|_| {
                    Vector3::new(
                        rng.gen_range(-0.4..0.4),
                        rng.gen_range(-0.4..0.4),
                        rng.gen_range(-0.4..0.4),
                    )
                })
                .collect(),
        };
        let beta = ShapeParams {
            coeffs: (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        };
        let cameras = ring_cameras(&model, 2, 3.2);
        let obs = observe(&model, &a_pose(&model), &ShapeParams::zeros(4), &cameras);
        let mapping = JointMapping::identity(&model);

        let joint = JointTermProblem::new(&model, &obs, &mapping, &cameras, 50.0).unwrap();
        let pack = joint.pack();
        let x = pack.pack(&theta, &beta, &cameras);

        let check = |problem: &dyn LeastSquaresProblem| {
            let analytic = problem.jacobian(&x).unwrap().to_dense();
            let fd = numeric_jacobian(|x| problem.residuals(x), &x, 1e-6).unwrap();
            let denom = analytic.norm().max(fd.norm()).max(1e-8);
            let rel = (analytic - fd).norm() / denom;
            assert!(rel <= 1e-4, "relative Jacobian error {rel}");
        };
        check(&joint);
        check(&PosePriorProblem {
            spec: PosePriorSpec::toy_default(&model),
            weight: 91.0,
            pack,
        });
        check(&ShapePriorProblem { weight: 100.0, pack });
    }

    #[test]
    fn init_cameras_depth_and_centering() {
        let model = toy();
        let theta = a_pose(&model);
        let beta = ShapeParams::zeros(4);
        let cameras = ring_cameras(&model, 4, 3.0);
        let obs = observe(&model, &theta, &beta, &cameras);
        let mapping = JointMapping::identity(&model);
        let init = init_cameras(&model, &obs, &mapping, &cameras).unwrap();
        for cam in &init {
            assert_eq!(cam.rotation, Vector3::zeros());
            assert!((cam.translation.z - 3.0).abs() <= 0.45, "z {}", cam.translation.z);
        }
    }

    #[test]
    fn init_cameras_focal_scale_invariance() {
        let model = toy();
        let theta = a_pose(&model);
        let beta = ShapeParams::zeros(4);
        let cameras = ring_cameras(&model, 2, 3.0);
        let obs = observe(&model, &theta, &beta, &cameras);
        let mapping = JointMapping::identity(&model);
        let z1 = init_cameras(&model, &obs, &mapping, &cameras).unwrap()[0]
            .translation
            .z;

        // Double the focal and scale observations about the principal point.
        let mut cameras2: Vec<CameraParams> = cameras.clone();
        for c in cameras2.iter_mut() {
            c.fx *= 2.0;
            c.fy *= 2.0;
        }
        let mut obs2 = obs.clone();
        for view in obs2.views.iter_mut() {
            for o in view.iter_mut() {
                o.u = cameras[0].cx + (o.u - cameras[0].cx) * 2.0;
                o.v = cameras[0].cy + (o.v - cameras[0].cy) * 2.0;
            }
        }
        let z2 = init_cameras(&model, &obs2, &mapping, &cameras2).unwrap()[0]
            .translation
            .z;
        assert_eq!(z1, z2);
    }

    #[test]
    fn init_cameras_centered_torso_gives_zero_xy() {
        // Hand-built model: neck and pelvis symmetric about the origin.
        let model = BodyModel {
            template: vec![
                Vector3::new(0.0, -0.3, 0.0),
                Vector3::new(0.0, 0.3, 0.0),
                Vector3::new(0.1, 0.0, 0.0),
                Vector3::new(-0.1, 0.0, 0.0),
            ],
            faces: vec![[0, 1, 2], [0, 3, 1]],
            shape_dirs: vec![0.0; 4 * 3],
            pose_dirs: Vec::new(),
            joint_regressor: vec![0.0, 1.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0],
            skin_weights: vec![1.0, 0.0, 0.0, 1.0, 0.5, 0.5, 0.5, 0.5],
            parent: vec![None, Some(0)],
            joint_names: vec!["pelvis".into(), "neck".into()],
            shape_count: 1,
        };
        model.validate().unwrap();
        let base = CameraParams::new(100.0, Vector2::new(50.0, 50.0), 100, 100);
        let obs = JointObservations {
            views: vec![vec![
                JointObs {
                    name: "neck".into(),
                    u: 50.0,
                    v: 40.0,
                    confidence: 1.0,
                },
                JointObs {
                    name: "pelvis".into(),
                    u: 50.0,
                    v: 60.0,
                    confidence: 1.0,
                },
            ]],
        };
        let mapping = JointMapping::identity(&model);
        let cams = init_cameras(&model, &obs, &mapping, &[base]).unwrap();
        assert_eq!(cams[0].translation.x, 0.0);
        assert_eq!(cams[0].translation.y, 0.0);
        assert_abs_diff_eq!(cams[0].translation.z, 100.0 * 0.6 / 20.0, epsilon = 1e-12);

        // Missing torso joints are reported by name.
        let empty_mapping = JointMapping::default();
        match init_cameras(&model, &obs, &empty_mapping, &[cams[0].clone()]) {
            Err(PoseFitError::MissingTorsoJoints { missing }) => {
                assert!(missing.contains(&String::from("neck")));
            }
            other => panic!("expected missing-torso error, got {other:?}"),
        }
    }

    #[test]
    fn fit_pose_fixed_point_at_truth() {
        let model = toy();
        let theta_gt = a_pose(&model);
        let mut beta_gt = ShapeParams::zeros(4);
        beta_gt.coeffs[0] = 0.7;
        beta_gt.coeffs[2] = -1.1;
        let cameras = ring_cameras(&model, 3, 3.0);
        let obs = observe(&model, &theta_gt, &beta_gt, &cameras);
        let mapping = JointMapping::identity(&model);

        // Zero-weight priors: the truth is a zero-residual optimum.
        let schedule = StageSchedule::single(30, 1e-6);
        let options = PoseFitOptions {
            theta0: Some(theta_gt.clone()),
            beta0: Some(beta_gt.clone()),
            orientation_seeding: false,
        };
        let fit = fit_pose(
            &model,
            &obs,
            &mapping,
            &cameras,
            &schedule,
            &PosePriorSpec::new(vec![], 10.0),
            &options,
        )
        .unwrap();
        for k in 0..10 {
            assert!((fit.theta.joints[k] - theta_gt.joints[k]).norm() <= 1e-6);
        }
        for s in 0..4 {
            assert!((fit.beta.coeffs[s] - beta_gt.coeffs[s]).abs() <= 1e-6);
        }
        for (a, b) in fit.cameras.iter().zip(&cameras) {
            assert!((a.translation - b.translation).norm() <= 1e-6);
            assert!((a.rotation - b.rotation).norm() <= 1e-6);
        }
    }

    #[test]
    fn zero_confidence_observations_change_nothing() {
        let model = toy();
        let theta_gt = a_pose(&model);
        let beta_gt = ShapeParams::zeros(4);
        let cameras = ring_cameras(&model, 2, 3.0);
        let obs = observe(&model, &theta_gt, &beta_gt, &cameras);
        let mapping = JointMapping::identity(&model);
        let schedule = StageSchedule::single(8, 1e-6);
        let options = PoseFitOptions {
            theta0: None,
            beta0: None,
            orientation_seeding: false,
        };

        let mut with_junk = obs.clone();
        with_junk.views[0].push(JointObs {
            name: "left_knee".into(),
            u: 3.0,
            v: 111.0,
            confidence: 0.0,
        });

        let prior = PosePriorSpec::toy_default(&model);
        let a = fit_pose(&model, &obs, &mapping, &cameras, &schedule, &prior, &options).unwrap();
        let b = fit_pose(&model, &with_junk, &mapping, &cameras, &schedule, &prior, &options)
            .unwrap();
        for k in 0..10 {
            assert_eq!(a.theta.joints[k], b.theta.joints[k]);
        }
        assert_eq!(a.beta.coeffs, b.beta.coeffs);
    }
}
