//! Deterministic low-poly humanoid generator: a desk-scale stand-in for a
//! licensed full-resolution body model.
//!
//! The body is assembled from generalized cylinders (torso, head, limb
//! segments) between skeleton joints. Every joint that drives geometry
//! owns one vertex ring centered on it; the joint regressor averages that
//! ring, so shape directions that move rings move the skeleton
//! consistently. Shape directions are symmetric in x (left/right), scale
//! girth and segment lengths, and are mildly jittered per seed.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::Vector3;
#[cfg_attr(feature = "std", allow(unused_imports))]
use num_traits::Float;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{BodyModel, ModelError, PoseParams};

/// Canonical skeleton: (name, parent, rest position). Ordered so the four
/// elbow/knee joints all exist once K >= 10.
const SKELETON: [(&str, Option<usize>, [f64; 3]); 16] = [
    ("pelvis", None, [0.0, 0.0, 0.0]),
    ("chest", Some(0), [0.0, -0.35, 0.0]),
    ("left_shoulder", Some(1), [0.18, -0.50, 0.0]),
    ("left_elbow", Some(2), [0.46, -0.50, 0.0]),
    ("right_shoulder", Some(1), [-0.18, -0.50, 0.0]),
    ("right_elbow", Some(4), [-0.46, -0.50, 0.0]),
    ("left_hip", Some(0), [0.09, 0.05, 0.0]),
    ("left_knee", Some(6), [0.09, 0.48, 0.0]),
    ("right_hip", Some(0), [-0.09, 0.05, 0.0]),
    ("right_knee", Some(8), [-0.09, 0.48, 0.0]),
    ("neck", Some(1), [0.0, -0.58, 0.0]),
    ("head", Some(10), [0.0, -0.68, 0.0]),
    ("left_wrist", Some(3), [0.74, -0.50, 0.0]),
    ("right_wrist", Some(5), [-0.74, -0.50, 0.0]),
    ("left_ankle", Some(7), [0.09, 0.88, 0.0]),
    ("right_ankle", Some(9), [-0.09, 0.88, 0.0]),
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum PartKind {
    Torso,
    Head,
    Arm,
    Leg,
}

struct PartSpec {
    kind: PartKind,
    start: Vector3<f64>,
    end: Vector3<f64>,
    /// Radius profile control points: (t, radius_u, radius_w).
    profile: Vec<(f64, f64, f64)>,
    /// Ring stations along [0,1], ascending, including 0 and 1.
    stations: Vec<f64>,
    /// Skinning controls: (joint index, station t), ascending in t.
    controls: Vec<(usize, f64)>,
    /// Rings that act as joint regressor rings: (joint index, station t).
    joint_rings: Vec<(usize, f64)>,
    base_azimuth: f64,
}

struct VertexMeta {
    kind: PartKind,
    radial: Vector3<f64>,
}

/// Builds a deterministic toy humanoid with exactly `v` vertices,
/// `k` joints, and `s` shape directions.
pub fn make_toy_model(seed: u64, v: usize, k: usize, s: usize) -> Result<BodyModel, ModelError> {
    if k < 1 || v < k || s < 1 {
        return Err(ModelError::BadParameters(
            "toy model requires V >= K >= 1 and S >= 1",
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // Jittered skeleton, symmetric in x: mirrored joints share the jitter.
    let mut joints: Vec<(String, Option<usize>, Vector3<f64>)> = Vec::with_capacity(k);
    let torso_stretch = 1.0 + rng.gen_range(-0.03..0.03);
    let leg_stretch = 1.0 + rng.gen_range(-0.04..0.04);
    let arm_stretch = 1.0 + rng.gen_range(-0.04..0.04);
    let girth_scale = 1.0 + rng.gen_range(-0.05..0.05);
    for i in 0..k.min(SKELETON.len()) {
        let (name, parent, p) = SKELETON[i];
        let mut pos = Vector3::new(p[0], p[1], p[2]);
        if pos.y < 0.0 {
            pos.y *= torso_stretch;
        } else if pos.y > 0.2 {
            pos.y *= leg_stretch;
        }
        if pos.x.abs() > 0.3 {
            pos.x = pos.x.signum() * (0.18 + (pos.x.abs() - 0.18) * arm_stretch);
        }
        joints.push((String::from(name), parent, pos));
    }
    for i in SKELETON.len()..k {
        // Extra joints chain upward from the last canonical joint.
        let parent = i - 1;
        let base = joints[parent].2;
        joints.push((
            format!("extra_{}", i - SKELETON.len()),
            Some(parent),
            base + Vector3::new(0.0, -0.02, 0.0),
        ));
    }

    let jpos = |i: usize| joints[i].2;
    let have = |i: usize| i < k;

    let mut parts: Vec<PartSpec> = Vec::new();

    // Torso from hip level to neck level.
    {
        let top = if have(10) {
            jpos(10)
        } else {
            Vector3::new(0.0, -0.58 * torso_stretch, 0.0)
        };
        let bottom = Vector3::new(0.0, 0.08, 0.0);
        let mut controls = vec![(0usize, station_on(&bottom, &top, &jpos(0)))];
        if have(1) {
            controls.push((1, station_on(&bottom, &top, &jpos(1))));
        }
        if have(10) {
            controls.push((10, 1.0));
        }
        let mut joint_rings = vec![(0usize, station_on(&bottom, &top, &jpos(0)))];
        if have(1) {
            joint_rings.push((1, station_on(&bottom, &top, &jpos(1))));
        }
        if have(10) {
            joint_rings.push((10, 1.0));
        }
        let g = girth_scale;
        let mut stations: Vec<f64> = vec![0.0, 0.35, 0.65, 1.0];
        for (_, t) in &joint_rings {
            stations.push(*t);
        }
        parts.push(PartSpec {
            kind: PartKind::Torso,
            start: bottom,
            end: top,
            profile: vec![
                (0.0, 0.150 * g, 0.105 * g),
                (0.45, 0.135 * g, 0.095 * g),
                (0.8, 0.155 * g, 0.100 * g),
                (1.0, 0.070 * g, 0.070 * g),
            ],
            stations,
            controls,
            joint_rings,
            base_azimuth: 16.0,
        });
    }

    // Head.
    {
        let center_joint = if have(11) {
            11
        } else if have(10) {
            10
        } else if have(1) {
            1
        } else {
            0
        };
        let base = if have(10) {
            jpos(10)
        } else {
            Vector3::new(0.0, -0.58 * torso_stretch, 0.0)
        };
        let start = base + Vector3::new(0.0, -0.015, 0.0);
        let end = base + Vector3::new(0.0, -0.26, 0.0);
        let mut joint_rings = Vec::new();
        if have(11) {
            joint_rings.push((11, station_on(&start, &end, &jpos(11))));
        }
        let g = girth_scale;
        let mut stations = vec![0.0, 0.3, 0.6, 1.0];
        for (_, t) in &joint_rings {
            stations.push(*t);
        }
        parts.push(PartSpec {
            kind: PartKind::Head,
            start,
            end,
            profile: vec![
                (0.0, 0.045 * g, 0.045 * g),
                (0.35, 0.085 * g, 0.090 * g),
                (0.75, 0.080 * g, 0.085 * g),
                (1.0, 0.040 * g, 0.045 * g),
            ],
            stations,
            controls: vec![(center_joint, 0.0)],
            joint_rings,
            base_azimuth: 12.0,
        });
    }

    // Limb helper: a tapered tube between two points.
    let mut limb = |kind: PartKind,
                    a: Vector3<f64>,
                    b: Vector3<f64>,
                    r0: f64,
                    r1: f64,
                    controls: Vec<(usize, f64)>,
                    joint_rings: Vec<(usize, f64)>| {
        let g = girth_scale;
        let mut stations = vec![0.0, 0.5, 1.0];
        for (_, t) in &joint_rings {
            stations.push(*t);
        }
        parts.push(PartSpec {
            kind,
            start: a,
            end: b,
            profile: vec![(0.0, r0 * g, r0 * g), (1.0, r1 * g, r1 * g)],
            stations,
            controls,
            joint_rings,
            base_azimuth: 9.0,
        });
    };

    // Arms: shoulder -> elbow -> wrist (geometry uses table positions even
    // when distal joints are absent; skinning then stays on the proximal).
    for (shoulder, elbow, wrist, sign) in [(2usize, 3usize, 12usize, 1.0f64), (4, 5, 13, -1.0)] {
        if !have(shoulder) {
            continue;
        }
        let sh = jpos(shoulder);
        let el = if have(elbow) {
            jpos(elbow)
        } else {
            sh + Vector3::new(sign * 0.28 * arm_stretch, 0.0, 0.0)
        };
        let wr = if have(wrist) {
            jpos(wrist)
        } else {
            el + Vector3::new(sign * 0.28 * arm_stretch, 0.0, 0.0)
        };
        let mut upper_controls = vec![(shoulder, 0.0)];
        let mut fore_controls = Vec::new();
        if have(elbow) {
            upper_controls.push((elbow, 1.0));
            fore_controls.push((elbow, 0.0));
            if have(wrist) {
                fore_controls.push((wrist, 1.0));
            }
        } else {
            fore_controls.push((shoulder, 0.0));
        }
        limb(
            PartKind::Arm,
            sh,
            el,
            0.048,
            0.042,
            upper_controls,
            vec![(shoulder, 0.0)],
        );
        let mut fore_rings = Vec::new();
        if have(elbow) {
            fore_rings.push((elbow, 0.0));
        }
        if have(wrist) {
            fore_rings.push((wrist, 1.0));
        }
        limb(
            PartKind::Arm,
            el,
            wr,
            0.040,
            0.032,
            fore_controls,
            fore_rings,
        );
    }

    // Legs: hip -> knee -> ankle.
    for (hip, knee, ankle) in [(6usize, 7usize, 14usize), (8, 9, 15)] {
        if !have(hip) {
            continue;
        }
        let hp = jpos(hip);
        let kn = if have(knee) {
            hp + (jpos(knee) - hp)
        } else {
            hp + Vector3::new(0.0, 0.43 * leg_stretch, 0.0)
        };
        let an = if have(ankle) {
            jpos(ankle)
        } else {
            kn + Vector3::new(0.0, 0.40 * leg_stretch, 0.0)
        };
        let mut thigh_controls = vec![(hip, 0.0)];
        let mut shin_controls = Vec::new();
        if have(knee) {
            thigh_controls.push((knee, 1.0));
            shin_controls.push((knee, 0.0));
            if have(ankle) {
                shin_controls.push((ankle, 1.0));
            }
        } else {
            shin_controls.push((hip, 0.0));
        }
        limb(
            PartKind::Leg,
            hp,
            kn,
            0.074,
            0.058,
            thigh_controls,
            vec![(hip, 0.0)],
        );
        let mut shin_rings = Vec::new();
        if have(knee) {
            shin_rings.push((knee, 0.0));
        }
        if have(ankle) {
            shin_rings.push((ankle, 1.0));
        }
        limb(
            PartKind::Leg,
            kn,
            an,
            0.056,
            0.042,
            shin_controls,
            shin_rings,
        );
    }

    for p in parts.iter_mut() {
        p.stations.sort_by(|a, b| a.partial_cmp(b).unwrap());
        p.stations.dedup_by(|a, b| (*a - *b).abs() < 1e-9);
        p.controls.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap());
    }

    // Vertex budget: two apexes per part plus rings; scale ring azimuth
    // counts to reach the target, then pad single rings one vertex at a
    // time so V is hit exactly.
    let total_for = |parts: &[PartSpec], alpha: f64| -> usize {
        parts
            .iter()
            .map(|p| p.stations.len() * azim_count(p.base_azimuth, alpha) + 2)
            .sum()
    };
    let min_total = total_for(&parts, 0.0);
    if min_total > v {
        return build_fallback(&mut rng, v, k, s, joints);
    }
    let mut alpha = 1.0;
    while total_for(&parts, alpha * 1.05) <= v {
        alpha *= 1.05;
    }
    while total_for(&parts, alpha) > v {
        alpha *= 0.95;
        if alpha < 1e-3 {
            alpha = 0.0;
            break;
        }
    }
    let mut ring_azims: Vec<Vec<usize>> = parts
        .iter()
        .map(|p| vec![azim_count(p.base_azimuth, alpha); p.stations.len()])
        .collect();
    let mut total = total_for(&parts, alpha);
    'pad: loop {
        for (pi, p) in parts.iter().enumerate() {
            for ri in 0..p.stations.len() {
                if total == v {
                    break 'pad;
                }
                ring_azims[pi][ri] += 1;
                total += 1;
            }
        }
        if total == v {
            break;
        }
    }

    // Emit geometry.
    let mut template: Vec<Vector3<f64>> = Vec::with_capacity(v);
    let mut meta: Vec<VertexMeta> = Vec::with_capacity(v);
    let mut faces: Vec<[usize; 3]> = Vec::new();
    let mut weights_sparse: Vec<Vec<(usize, f64)>> = Vec::with_capacity(v);
    let mut ring_vertices: Vec<Vec<Vec<usize>>> = Vec::new(); // [part][ring] -> indices

    for (pi, p) in parts.iter().enumerate() {
        let axis = (p.end - p.start).normalize();
        let (u, w) = ring_basis(&axis);
        let mut rings_idx: Vec<Vec<usize>> = Vec::new();

        let start_apex = template.len();
        template.push(p.start);
        meta.push(VertexMeta {
            kind: p.kind,
            radial: Vector3::zeros(),
        });
        weights_sparse.push(station_weights(p, 0.0));

        for (ri, &t) in p.stations.iter().enumerate() {
            let center = p.start + (p.end - p.start) * t;
            let (ru, rw) = radius_at(&p.profile, t);
            let n = ring_azims[pi][ri];
            let mut idx = Vec::with_capacity(n);
            for a in 0..n {
                let phi = core::f64::consts::TAU * (a as f64) / (n as f64);
                let radial = u * (phi.cos() * ru) + w * (phi.sin() * rw);
                idx.push(template.len());
                template.push(center + radial);
                meta.push(VertexMeta {
                    kind: p.kind,
                    radial: if radial.norm() > 1e-12 {
                        radial.normalize()
                    } else {
                        Vector3::zeros()
                    },
                });
                weights_sparse.push(station_weights(p, t));
            }
            rings_idx.push(idx);
        }

        let end_apex = template.len();
        template.push(p.end);
        meta.push(VertexMeta {
            kind: p.kind,
            radial: Vector3::zeros(),
        });
        weights_sparse.push(station_weights(p, 1.0));

        // Start cap (axis points from start to end; cap normal faces -axis).
        let first = &rings_idx[0];
        for i in 0..first.len() {
            faces.push([start_apex, first[i], first[(i + 1) % first.len()]]);
        }
        // Bridges.
        for ri in 0..rings_idx.len() - 1 {
            bridge_rings(&mut faces, &rings_idx[ri], &rings_idx[ri + 1]);
        }
        // End cap.
        let last = rings_idx.last().unwrap();
        for i in 0..last.len() {
            faces.push([end_apex, last[(i + 1) % last.len()], last[i]]);
        }
        ring_vertices.push(rings_idx);
    }
    debug_assert_eq!(template.len(), v);

    // Skin weights, dense rows.
    let mut skin_weights = vec![0.0; v * k];
    for (vi, row) in weights_sparse.iter().enumerate() {
        for (j, wgt) in row {
            skin_weights[vi * k + j] += wgt;
        }
    }

    // Joint regressor: uniform over the joint's ring, else one-hot on the
    // nearest template vertex.
    let mut joint_regressor = vec![0.0; k * v];
    let mut has_ring = vec![false; k];
    for (pi, p) in parts.iter().enumerate() {
        for &(j, t) in &p.joint_rings {
            if has_ring[j] {
                continue;
            }
            let ri = p
                .stations
                .iter()
                .position(|st| (st - t).abs() < 1e-9)
                .expect("joint ring station present");
            let ring = &ring_vertices[pi][ri];
            for &vi in ring {
                joint_regressor[j * v + vi] = 1.0 / ring.len() as f64;
            }
            has_ring[j] = true;
        }
    }
    for j in 0..k {
        if !has_ring[j] {
            let target = jpos(j);
            let nearest = (0..v)
                .min_by(|&a, &b| {
                    (template[a] - target)
                        .norm()
                        .partial_cmp(&(template[b] - target).norm())
                        .unwrap()
                })
                .unwrap();
            joint_regressor[j * v + nearest] = 1.0;
        }
    }

    let shape_dirs = build_shape_dirs(&mut rng, &template, &meta, &parts, s);

    let model = BodyModel {
        template,
        faces,
        shape_dirs,
        pose_dirs: Vec::new(),
        joint_regressor,
        skin_weights,
        parent: joints.iter().map(|j| j.1).collect(),
        joint_names: joints.iter().map(|j| j.0.clone()).collect(),
        shape_count: s,
    };
    model.validate()?;
    Ok(model)
}

/// The synthetic-population pose: arms abducted 60 degrees from vertical
/// (30 degrees down from the T-pose template), every other joint at zero.
pub fn a_pose(model: &BodyModel) -> PoseParams {
    let mut pose = PoseParams::zeros(model.joint_count());
    let third = core::f64::consts::FRAC_PI_6;
    if let Some(j) = model.joint_index("left_shoulder") {
        pose.joints[j] = Vector3::new(0.0, 0.0, third);
    }
    if let Some(j) = model.joint_index("right_shoulder") {
        pose.joints[j] = Vector3::new(0.0, 0.0, -third);
    }
    pose
}

fn azim_count(base: f64, alpha: f64) -> usize {
    ((base * alpha).floor() as usize).max(5)
}

fn station_on(start: &Vector3<f64>, end: &Vector3<f64>, p: &Vector3<f64>) -> f64 {
    let axis = end - start;
    ((p - start).dot(&axis) / axis.norm_squared()).clamp(0.0, 1.0)
}

fn ring_basis(axis: &Vector3<f64>) -> (Vector3<f64>, Vector3<f64>) {
    let seed = if axis.z.abs() < 0.9 {
        Vector3::new(0.0, 0.0, 1.0)
    } else {
        Vector3::new(1.0, 0.0, 0.0)
    };
    let u = axis.cross(&seed).normalize();
    let w = axis.cross(&u);
    (u, w)
}

fn radius_at(profile: &[(f64, f64, f64)], t: f64) -> (f64, f64) {
    if t <= profile[0].0 {
        return (profile[0].1, profile[0].2);
    }
    for pair in profile.windows(2) {
        let (t0, u0, w0) = pair[0];
        let (t1, u1, w1) = pair[1];
        if t <= t1 {
            let f = (t - t0) / (t1 - t0);
            return (u0 + (u1 - u0) * f, w0 + (w1 - w0) * f);
        }
    }
    let last = profile.last().unwrap();
    (last.1, last.2)
}

/// Linear skinning weights between the part's control joints.
fn station_weights(p: &PartSpec, t: f64) -> Vec<(usize, f64)> {
    debug_assert!(!p.controls.is_empty());
    if p.controls.len() == 1 || t <= p.controls[0].1 {
        return vec![(p.controls[0].0, 1.0)];
    }
    for pair in p.controls.windows(2) {
        let (j0, t0) = pair[0];
        let (j1, t1) = pair[1];
        if t <= t1 {
            let f = ((t - t0) / (t1 - t0)).clamp(0.0, 1.0);
            if f <= 0.0 {
                return vec![(j0, 1.0)];
            }
            if f >= 1.0 {
                return vec![(j1, 1.0)];
            }
            return vec![(j0, 1.0 - f), (j1, f)];
        }
    }
    vec![(p.controls.last().unwrap().0, 1.0)]
}

/// Stitches two rings (possibly of different sizes) with a triangle strip,
/// walking both by normalized angle.
fn bridge_rings(faces: &mut Vec<[usize; 3]>, a: &[usize], b: &[usize]) {
    let (na, nb) = (a.len(), b.len());
    let mut i = 0;
    let mut j = 0;
    while i < na || j < nb {
        let next_a = (i + 1) as f64 / na as f64;
        let next_b = (j + 1) as f64 / nb as f64;
        if j >= nb || (i < na && next_a <= next_b) {
            faces.push([a[i % na], b[j % nb], a[(i + 1) % na]]);
            i += 1;
        } else {
            faces.push([a[i % na], b[j % nb], b[(j + 1) % nb]]);
            j += 1;
        }
    }
}

/// Shape direction catalog. Every entry is symmetric in x.
fn build_shape_dirs(
    rng: &mut ChaCha8Rng,
    template: &[Vector3<f64>],
    meta: &[VertexMeta],
    parts: &[PartSpec],
    s: usize,
) -> Vec<f64> {
    let v = template.len();
    let mut dirs = vec![0.0; v * 3 * s];
    let head_center = parts
        .iter()
        .find(|p| p.kind == PartKind::Head)
        .map(|p| (p.start + p.end) * 0.5)
        .unwrap_or_else(|| Vector3::new(0.0, -0.7, 0.0));

    for c in 0..s {
        let gain = 1.0 + rng.gen_range(-0.1..0.1);
        let phase = rng.gen_range(0.0..core::f64::consts::TAU);
        for (vi, pos) in template.iter().enumerate() {
            let m = &meta[vi];
            let d: Vector3<f64> = match c {
                // Overall size about the pelvis (origin).
                0 => pos * 0.015,
                // Global girth.
                1 => m.radial * 0.012,
                // Torso length: everything above hip level rises.
                2 => {
                    let u = ((0.05 - pos.y) / 0.63).clamp(0.0, 1.0);
                    Vector3::new(0.0, -0.02 * u, 0.0)
                }
                // Leg length.
                3 => {
                    let u = ((pos.y - 0.05) / 0.83).clamp(0.0, 1.0);
                    Vector3::new(0.0, 0.025 * u, 0.0)
                }
                // Arm length: stretch along x beyond the shoulders.
                4 => {
                    let u = ((pos.x.abs() - 0.18) / 0.56).clamp(0.0, 1.0);
                    Vector3::new(pos.x.signum() * 0.03 * u, 0.0, 0.0)
                }
                // Head size.
                5 => {
                    if m.kind == PartKind::Head {
                        (pos - head_center) * 0.08
                    } else {
                        Vector3::zeros()
                    }
                }
                // Shoulder width.
                6 => {
                    if m.kind == PartKind::Arm {
                        Vector3::new(pos.x.signum() * 0.012, 0.0, 0.0)
                    } else {
                        Vector3::zeros()
                    }
                }
                // Hip width.
                7 => {
                    if m.kind == PartKind::Leg {
                        Vector3::new(pos.x.signum() * 0.010, 0.0, 0.0)
                    } else {
                        Vector3::zeros()
                    }
                }
                // Belly bump.
                8 => {
                    if m.kind == PartKind::Torso {
                        let b = 1.0 - ((pos.y + 0.12) / 0.25).powi(2);
                        m.radial * (0.02 * b.max(0.0))
                    } else {
                        Vector3::zeros()
                    }
                }
                // Chest girth.
                9 => {
                    if m.kind == PartKind::Torso {
                        let b = 1.0 - ((pos.y + 0.42) / 0.20).powi(2);
                        m.radial * (0.015 * b.max(0.0))
                    } else {
                        Vector3::zeros()
                    }
                }
                // Extra modes: smooth radial ripples along height.
                _ => {
                    let h = (pos.y + 0.9) / 1.8;
                    let f = 1.0 + (c - 9) as f64 * 0.5;
                    m.radial * (0.006 * (core::f64::consts::TAU * f * h + phase).sin())
                }
            };
            let d = d * gain;
            for axis in 0..3 {
                dirs[(vi * 3 + axis) * s + c] = d[axis];
            }
        }
    }
    dirs
}

/// Stick-figure fallback for vertex budgets too small for tube geometry:
/// vertices sit on the skeleton, one-hot weights and regressor.
fn build_fallback(
    _rng: &mut ChaCha8Rng,
    v: usize,
    k: usize,
    s: usize,
    joints: Vec<(String, Option<usize>, Vector3<f64>)>,
) -> Result<BodyModel, ModelError> {
    let mut template = Vec::with_capacity(v);
    for j in joints.iter().take(k) {
        template.push(j.2);
    }
    // Spread the remainder around the pelvis on a small box so the mesh
    // has some volume.
    let mut i = 0usize;
    while template.len() < v {
        let corner = Vector3::new(
            if i & 1 == 0 { -0.1 } else { 0.1 },
            if i & 2 == 0 { -0.1 } else { 0.1 },
            if i & 4 == 0 { -0.1 } else { 0.1 },
        );
        template.push(joints[0].2 + corner * (1.0 + (i / 8) as f64 * 0.3));
        i += 1;
    }
    let mut skin_weights = vec![0.0; v * k];
    let mut joint_regressor = vec![0.0; k * v];
    for vi in 0..v {
        // Nearest joint, deterministic tie-break by index.
        let mut best = 0;
        for j in 1..k {
            if (template[vi] - joints[j].2).norm() < (template[vi] - joints[best].2).norm() {
                best = j;
            }
        }
        skin_weights[vi * k + best] = 1.0;
    }
    for j in 0..k {
        joint_regressor[j * v + j.min(v - 1)] = 1.0;
    }
    let mut faces = Vec::new();
    if v >= 3 {
        for f in 0..v - 2 {
            faces.push([f, f + 1, f + 2]);
        }
    }
    let mut shape_dirs = vec![0.0; v * 3 * s];
    for vi in 0..v {
        for c in 0..s {
            let d = template[vi] * 0.01 / (c + 1) as f64;
            for axis in 0..3 {
                shape_dirs[(vi * 3 + axis) * s + c] = d[axis];
            }
        }
    }
    let model = BodyModel {
        template,
        faces,
        shape_dirs,
        pose_dirs: Vec::new(),
        joint_regressor,
        skin_weights,
        parent: joints.iter().take(k).map(|j| j.1).collect(),
        joint_names: joints.iter().take(k).map(|j| j.0.clone()).collect(),
        shape_count: s,
    };
    model.validate()?;
    Ok(model)
}
