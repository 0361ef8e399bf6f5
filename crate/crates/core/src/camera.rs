//! Pinhole cameras, pixel rays, and Plücker line geometry.
//!
//! Image coordinates use a top-left origin with +x right and +y down,
//! matching mask raster order. Extrinsics map world to camera:
//! `X_c = R X + t`, with `R` stored as an axis-angle vector.

use nalgebra::{Matrix2x3, Matrix3, Vector2, Vector3};
#[cfg_attr(feature = "std", allow(unused_imports))]
use num_traits::Float;

use crate::rotation::{rodrigues, rodrigues_inv, rodrigues_jacobian};

/// Minimum depth in front of the camera for a point to be projectable.
pub const MIN_DEPTH: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CameraError {
    #[error("point at or behind the camera plane (depth {depth:.3e})")]
    BehindCamera { depth: f64 },
    #[error("ray direction has zero length")]
    ZeroDirection,
    #[error("look-at direction is parallel to the vertical axis")]
    DegenerateLookAt,
    #[error("camera invariant violated: {0}")]
    InvalidParams(&'static str),
}

/// Pinhole camera: intrinsics plus estimable extrinsics.
#[derive(Debug, Clone, PartialEq)]
pub struct CameraParams {
    /// Focal length in pixels (x).
    pub fx: f64,
    /// Focal length in pixels (y); equal to `fx` unless overridden.
    pub fy: f64,
    /// Principal point in pixels.
    pub cx: f64,
    pub cy: f64,
    /// World-to-camera rotation as an axis-angle vector.
    pub rotation: Vector3<f64>,
    /// World-to-camera translation in meters.
    pub translation: Vector3<f64>,
    /// Image size in pixels.
    pub width: u32,
    pub height: u32,
}

impl CameraParams {
    /// Camera with the given intrinsics and identity extrinsics.
    pub fn new(focal: f64, principal_point: Vector2<f64>, width: u32, height: u32) -> Self {
        CameraParams {
            fx: focal,
            fy: focal,
            cx: principal_point.x,
            cy: principal_point.y,
            rotation: Vector3::zeros(),
            translation: Vector3::zeros(),
            width,
            height,
        }
    }

    /// Camera at `eye` looking toward `target`, with the world vertical
    /// (+y is "down") mapped to image +y.
    pub fn look_at(
        focal: f64,
        principal_point: Vector2<f64>,
        width: u32,
        height: u32,
        eye: Vector3<f64>,
        target: Vector3<f64>,
    ) -> Result<Self, CameraError> {
        let forward = target - eye;
        if forward.norm() < 1e-12 {
            return Err(CameraError::DegenerateLookAt);
        }
        let z = forward.normalize();
        let down = Vector3::new(0.0, 1.0, 0.0);
        let x = down.cross(&z);
        if x.norm() < 1e-9 {
            return Err(CameraError::DegenerateLookAt);
        }
        let x = x.normalize();
        let y = z.cross(&x);
        let r = Matrix3::from_rows(&[x.transpose(), y.transpose(), z.transpose()]);
        let rotation = rodrigues_inv(&r).map_err(|_| CameraError::DegenerateLookAt)?;
        Ok(CameraParams {
            fx: focal,
            fy: focal,
            cx: principal_point.x,
            cy: principal_point.y,
            rotation,
            translation: -(r * eye),
            width,
            height,
        })
    }

    pub fn validate(&self) -> Result<(), CameraError> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(CameraError::InvalidParams("focal must be positive"));
        }
        if self.width == 0 || self.height == 0 {
            return Err(CameraError::InvalidParams("image size must be positive"));
        }
        if !(self.rotation.iter().all(|v| v.is_finite())
            && self.translation.iter().all(|v| v.is_finite())
            && self.cx.is_finite()
            && self.cy.is_finite())
        {
            return Err(CameraError::InvalidParams("non-finite parameter"));
        }
        Ok(())
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        rodrigues(&self.rotation)
    }

    /// Camera center in world coordinates, `c = -R^T t`.
    pub fn center(&self) -> Vector3<f64> {
        -(self.rotation_matrix().transpose() * self.translation)
    }

    /// Perspective projection of a world point to pixel coordinates.
    pub fn project(&self, point: &Vector3<f64>) -> Result<Vector2<f64>, CameraError> {
        let xc = self.rotation_matrix() * point + self.translation;
        self.project_camera_space(&xc)
    }

    /// Projection of a point already in camera coordinates.
    pub fn project_camera_space(&self, xc: &Vector3<f64>) -> Result<Vector2<f64>, CameraError> {
        if xc.z <= MIN_DEPTH {
            return Err(CameraError::BehindCamera { depth: xc.z });
        }
        Ok(Vector2::new(
            self.fx * xc.x / xc.z + self.cx,
            self.fy * xc.y / xc.z + self.cy,
        ))
    }

    /// Depth (camera-space z) of a world point.
    pub fn depth_of(&self, point: &Vector3<f64>) -> f64 {
        (self.rotation_matrix() * point + self.translation).z
    }

    /// Projection together with its derivatives with respect to the world
    /// point and the camera extrinsics.
    pub fn project_with_jacobians(
        &self,
        point: &Vector3<f64>,
    ) -> Result<ProjectionJacobian, CameraError> {
        let r = self.rotation_matrix();
        let xc = r * point + self.translation;
        if xc.z <= MIN_DEPTH {
            return Err(CameraError::BehindCamera { depth: xc.z });
        }
        let uv = Vector2::new(
            self.fx * xc.x / xc.z + self.cx,
            self.fy * xc.y / xc.z + self.cy,
        );
        let iz = 1.0 / xc.z;
        let wrt_camera_point = Matrix2x3::new(
            self.fx * iz,
            0.0,
            -self.fx * xc.x * iz * iz,
            0.0,
            self.fy * iz,
            -self.fy * xc.y * iz * iz,
        );
        let dr = rodrigues_jacobian(&self.rotation);
        let mut wrt_rotation = Matrix2x3::zeros();
        for c in 0..3 {
            wrt_rotation.set_column(c, &(wrt_camera_point * (dr[c] * point)));
        }
        Ok(ProjectionJacobian {
            uv,
            wrt_point: wrt_camera_point * r,
            wrt_rotation,
            wrt_translation: wrt_camera_point,
        })
    }

    /// Ray from the camera center through a pixel, in world coordinates.
    pub fn pixel_ray(&self, pixel: &Vector2<f64>) -> Ray {
        let dir_cam = Vector3::new(
            (pixel.x - self.cx) / self.fx,
            (pixel.y - self.cy) / self.fy,
            1.0,
        )
        .normalize();
        Ray {
            origin: self.center(),
            direction: self.rotation_matrix().transpose() * dir_cam,
        }
    }
}

/// Projection value and first derivatives.
#[derive(Debug, Clone)]
pub struct ProjectionJacobian {
    pub uv: Vector2<f64>,
    /// 2x3 derivative with respect to the world point.
    pub wrt_point: Matrix2x3<f64>,
    /// 2x3 derivative with respect to the camera axis-angle rotation.
    pub wrt_rotation: Matrix2x3<f64>,
    /// 2x3 derivative with respect to the camera translation.
    pub wrt_translation: Matrix2x3<f64>,
}

/// A ray with unit direction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ray {
    pub origin: Vector3<f64>,
    pub direction: Vector3<f64>,
}

/// A 3D line in Plücker coordinates: unit direction `n` and moment
/// `m = origin x n`, which is independent of the chosen origin point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PluckerLine {
    pub direction: Vector3<f64>,
    pub moment: Vector3<f64>,
}

impl PluckerLine {
    pub fn from_ray(ray: &Ray) -> Result<Self, CameraError> {
        Self::from_origin_direction(&ray.origin, &ray.direction)
    }

    pub fn from_origin_direction(
        origin: &Vector3<f64>,
        direction: &Vector3<f64>,
    ) -> Result<Self, CameraError> {
        let norm = direction.norm();
        if norm < 1e-300 {
            return Err(CameraError::ZeroDirection);
        }
        let n = direction / norm;
        Ok(PluckerLine {
            direction: n,
            moment: origin.cross(&n),
        })
    }

    pub fn validate(&self) -> Result<(), CameraError> {
        if (self.direction.norm() - 1.0).abs() > 1e-12 {
            return Err(CameraError::InvalidParams("direction not unit length"));
        }
        if self.moment.dot(&self.direction).abs() > 1e-12 {
            return Err(CameraError::InvalidParams(
                "moment not orthogonal to direction",
            ));
        }
        Ok(())
    }
}

/// Residual vector `d = V x n - m` of a point against a Plücker line;
/// its norm is the Euclidean point-to-line distance.
pub fn point_line_residual(point: &Vector3<f64>, line: &PluckerLine) -> Vector3<f64> {
    point.cross(&line.direction) - line.moment
}
