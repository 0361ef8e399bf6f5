//! Software triangle rasterizer producing a silhouette mask and depth map.
//!
//! Coverage is front- and back-facing, sampled at pixel centers with the
//! top-left fill rule; depth is the nearest surface via perspective-correct
//! 1/z interpolation. Output is deterministic and independent of triangle
//! order (pure nearest-depth test).

use alloc::vec::Vec;

use nalgebra::{Vector2, Vector3};

use crate::camera::CameraParams;
use crate::model::Mesh;

use super::{DepthMap, SilhouetteMask};

/// Near plane for clipping, meters.
const NEAR: f64 = 1e-4;

/// Rasterizes the mesh into the camera; triangles fully behind the near
/// plane simply contribute nothing (an all-behind mesh yields an empty
/// mask).
pub fn rasterize_silhouette(mesh: &Mesh, camera: &CameraParams) -> (SilhouetteMask, DepthMap) {
    let (w, h) = (camera.width, camera.height);
    let mut mask = SilhouetteMask::new(w, h);
    let mut depth = DepthMap::new(w, h);

    let rot = camera.rotation_matrix();
    let cam_space: Vec<Vector3<f64>> = mesh
        .vertices
        .iter()
        .map(|v| rot * v + camera.translation)
        .collect();

    let mut clipped: Vec<Vector3<f64>> = Vec::with_capacity(4);
    for face in &mesh.faces {
        clip_near(
            &[cam_space[face[0]], cam_space[face[1]], cam_space[face[2]]],
            &mut clipped,
        );
        if clipped.len() < 3 {
            continue;
        }
        for i in 1..clipped.len() - 1 {
            raster_triangle(
                camera,
                &clipped[0],
                &clipped[i],
                &clipped[i + 1],
                &mut mask,
                &mut depth,
            );
        }
    }
    (mask, depth)
}

/// Sutherland-Hodgman clip of a camera-space triangle against `z >= NEAR`.
fn clip_near(tri: &[Vector3<f64>; 3], out: &mut Vec<Vector3<f64>>) {
    out.clear();
    for i in 0..3 {
        let a = tri[i];
        let b = tri[(i + 1) % 3];
        let a_in = a.z >= NEAR;
        let b_in = b.z >= NEAR;
        if a_in {
            out.push(a);
        }
        if a_in != b_in {
            let t = (NEAR - a.z) / (b.z - a.z);
            out.push(a + (b - a) * t);
        }
    }
}

fn raster_triangle(
    camera: &CameraParams,
    a: &Vector3<f64>,
    b: &Vector3<f64>,
    c: &Vector3<f64>,
    mask: &mut SilhouetteMask,
    depth: &mut DepthMap,
) {
    let project = |p: &Vector3<f64>| {
        Vector2::new(
            camera.fx * p.x / p.z + camera.cx,
            camera.fy * p.y / p.z + camera.cy,
        )
    };
    let (mut pa, mut pb, mut pc) = (project(a), project(b), project(c));
    let (mut iza, mut izb, mut izc) = (1.0 / a.z, 1.0 / b.z, 1.0 / c.z);

    let mut area2 = cross2(&(pb - pa), &(pc - pa));
    if area2 == 0.0 || !area2.is_finite() {
        return;
    }
    if area2 < 0.0 {
        core::mem::swap(&mut pb, &mut pc);
        core::mem::swap(&mut izb, &mut izc);
        area2 = -area2;
    }

    let min_x = pa.x.min(pb.x).min(pc.x);
    let max_x = pa.x.max(pb.x).max(pc.x);
    let min_y = pa.y.min(pb.y).min(pc.y);
    let max_y = pa.y.max(pb.y).max(pc.y);
    let x0 = (min_x - 0.5).ceil().max(0.0) as i64;
    let x1 = (max_x - 0.5).floor().min(mask.width() as f64 - 1.0) as i64;
    let y0 = (min_y - 0.5).ceil().max(0.0) as i64;
    let y1 = (max_y - 0.5).floor().min(mask.height() as f64 - 1.0) as i64;
    if x1 < x0 || y1 < y0 {
        return;
    }

    for py in y0..=y1 {
        for px in x0..=x1 {
            let p = Vector2::new(px as f64 + 0.5, py as f64 + 0.5);
            let e_ab = cross2(&(pb - pa), &(p - pa));
            let e_bc = cross2(&(pc - pb), &(p - pb));
            let e_ca = cross2(&(pa - pc), &(p - pc));
            if !(covers(e_ab, &pa, &pb) && covers(e_bc, &pb, &pc) && covers(e_ca, &pc, &pa)) {
                continue;
            }
            // Screen barycentrics; 1/z is affine in screen space.
            let la = e_bc / area2;
            let lb = e_ca / area2;
            let lc = e_ab / area2;
            let iz = la * iza + lb * izb + lc * izc;
            if iz <= 0.0 {
                continue;
            }
            let z = 1.0 / iz;
            let (ux, uy) = (px as u32, py as u32);
            mask.set(ux, uy, true);
            if z < depth.get(ux, uy) {
                depth.set(ux, uy, z);
            }
        }
    }
}

fn cross2(u: &Vector2<f64>, v: &Vector2<f64>) -> f64 {
    u.x * v.y - u.y * v.x
}

/// Top-left fill rule in +y-down pixel coordinates: boundary samples
/// belong to edges that point down, or horizontally right (top edges).
fn covers(edge_value: f64, from: &Vector2<f64>, to: &Vector2<f64>) -> bool {
    if edge_value > 0.0 {
        return true;
    }
    if edge_value < 0.0 {
        return false;
    }
    let dy = to.y - from.y;
    let dx = to.x - from.x;
    dy > 0.0 || (dy == 0.0 && dx > 0.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::silhouette::iou;
    use alloc::vec;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn test_camera() -> CameraParams {
        CameraParams::new(60.0, Vector2::new(32.0, 32.0), 64, 64)
    }

    #[test]
    fn single_triangle_covers_center() {
        let mesh = Mesh {
            vertices: vec![
                Vector3::new(-0.2, 0.17, 1.0),
                Vector3::new(0.23, 0.19, 1.0),
                Vector3::new(0.01, -0.21, 1.0),
            ],
            faces: vec![[0, 1, 2]],
            normals: None,
        };
        let (mask, depth) = rasterize_silhouette(&mesh, &test_camera());
        assert!(mask.get(32, 32));
        assert!((depth.get(32, 32) - 1.0).abs() < 1e-9);
        assert!(!mask.get(2, 2));
    }

    #[test]
    fn behind_camera_mesh_gives_empty_mask() {
        let mesh = Mesh {
            vertices: vec![
                Vector3::new(-0.2, 0.1, -1.0),
                Vector3::new(0.2, 0.1, -1.0),
                Vector3::new(0.0, -0.2, -2.0),
            ],
            faces: vec![[0, 1, 2]],
            normals: None,
        };
        let (mask, _) = rasterize_silhouette(&mesh, &test_camera());
        assert!(mask.is_empty_mask());
    }

    fn cube_mesh(center: Vector3<f64>, half: f64) -> Mesh {
        let mut vertices = Vec::new();
        for dz in [-1.0, 1.0] {
            for dy in [-1.0, 1.0] {
                for dx in [-1.0, 1.0] {
                    vertices.push(center + Vector3::new(dx, dy, dz) * half);
                }
            }
        }
        let faces = vec![
            [0, 1, 3],
            [0, 3, 2],
            [4, 7, 5],
            [4, 6, 7],
            [0, 5, 1],
            [0, 4, 5],
            [2, 3, 7],
            [2, 7, 6],
            [0, 2, 6],
            [0, 6, 4],
            [1, 5, 7],
            [1, 7, 3],
        ];
        Mesh {
            vertices,
            faces,
            normals: None,
        }
    }

    #[test]
    fn cube_mask_matches_projected_hull_oracle() {
        let camera = test_camera();
        let mesh = cube_mesh(Vector3::new(0.05, -0.08, 2.3), 0.4);
        let (mask, _) = rasterize_silhouette(&mesh, &camera);

        // Convex oracle: the cube's silhouette is the convex hull of the
        // projected corners (Andrew's monotone chain + half-plane tests).
        let mut pts: Vec<Vector2<f64>> = mesh
            .vertices
            .iter()
            .map(|v| camera.project(v).unwrap())
            .collect();
        pts.sort_by(|a, b| (a.x, a.y).partial_cmp(&(b.x, b.y)).unwrap());
        let hull = {
            let mut lower: Vec<Vector2<f64>> = Vec::new();
            for p in &pts {
                while lower.len() >= 2
                    && cross2(
                        &(lower[lower.len() - 1] - lower[lower.len() - 2]),
                        &(p - lower[lower.len() - 2]),
                    ) <= 0.0
                {
                    lower.pop();
                }
                lower.push(*p);
            }
            let mut upper: Vec<Vector2<f64>> = Vec::new();
            for p in pts.iter().rev() {
                while upper.len() >= 2
                    && cross2(
                        &(upper[upper.len() - 1] - upper[upper.len() - 2]),
                        &(p - upper[upper.len() - 2]),
                    ) <= 0.0
                {
                    upper.pop();
                }
                upper.push(*p);
            }
            lower.pop();
            upper.pop();
            lower.extend(upper);
            lower
        };
        let inside = |p: &Vector2<f64>| {
            (0..hull.len()).all(|i| {
                let a = hull[i];
                let b = hull[(i + 1) % hull.len()];
                cross2(&(b - a), &(p - a)) >= 0.0
            })
        };

        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let mut agree = 0;
        let total = 1000;
        for _ in 0..total {
            let x = rng.gen_range(0..64u32);
            let y = rng.gen_range(0..64u32);
            let p = Vector2::new(x as f64 + 0.5, y as f64 + 0.5);
            if inside(&p) == mask.get(x, y) {
                agree += 1;
            }
        }
        assert!(agree as f64 / total as f64 >= 0.995, "agreement {agree}/{total}");
    }

    #[test]
    fn lateral_translation_shifts_mask_by_one_column() {
        let camera = test_camera();
        let z = 2.1374;
        let mesh = cube_mesh(Vector3::new(-0.1037, 0.0213, z), 0.317);
        let mut moved = mesh.clone();
        // One pixel laterally is z/fx meters at constant depth.
        let dx = z / camera.fx;
        for v in moved.vertices.iter_mut() {
            v.x += dx;
        }
        let (m0, _) = rasterize_silhouette(&mesh, &camera);
        let (m1, _) = rasterize_silhouette(&moved, &camera);
        for y in 0..64 {
            for x in 0..63 {
                assert_eq!(m0.get(x, y), m1.get(x + 1, y), "pixel ({x},{y})");
            }
        }
    }

    #[test]
    fn face_order_does_not_change_output() {
        let camera = test_camera();
        let mesh = cube_mesh(Vector3::new(0.0, 0.0, 2.0), 0.35);
        let mut permuted = mesh.clone();
        permuted.faces.reverse();
        permuted.faces.swap(1, 7);
        let (m0, d0) = rasterize_silhouette(&mesh, &camera);
        let (m1, d1) = rasterize_silhouette(&permuted, &camera);
        assert_eq!(m0, m1);
        assert_eq!(d0, d1);
    }

    #[test]
    fn depth_finite_exactly_on_foreground() {
        let camera = test_camera();
        let mesh = cube_mesh(Vector3::new(0.1, 0.1, 2.5), 0.3);
        let (mask, depth) = rasterize_silhouette(&mesh, &camera);
        assert!(!mask.is_empty_mask());
        for y in 0..64 {
            for x in 0..64 {
                assert_eq!(mask.get(x, y), depth.get(x, y).is_finite());
                if mask.get(x, y) {
                    assert!(depth.get(x, y) > 0.0);
                }
            }
        }
    }

    #[test]
    fn self_render_iou_is_one() {
        let camera = test_camera();
        let mesh = cube_mesh(Vector3::new(0.0, 0.05, 2.2), 0.4);
        let (a, _) = rasterize_silhouette(&mesh, &camera);
        let (b, _) = rasterize_silhouette(&mesh, &camera);
        assert_eq!(iou(&a, &b).unwrap(), 1.0);
    }
}
