//! Fitting a parametric articulated human body model to multi-view 2D joint
//! detections and silhouette masks.
//!
//! The pipeline has two stages. Pose fitting estimates pose, shape, and
//! camera extrinsics from 2D joint observations across views by staged
//! robust nonlinear least squares. Shape fitting then refines the shape
//! (optionally free-form vertex offsets) against silhouette masks, using
//! correspondences between model contour vertices and silhouette boundary
//! points in both image space and, via unposed Plücker lines, in the
//! model's canonical space.
//!
//! The crate is `no_std`-compatible (requires `alloc`); the `std` feature
//! (default) is purely additive. File formats and the CLI live in the
//! companion `bodyfit-cli` crate.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod camera;
pub mod correspond;
pub mod model;
pub mod optim;
pub mod pose_fit;
pub mod rotation;
pub mod shape_fit;
pub mod silhouette;

pub use camera::{CameraParams, PluckerLine};
pub use model::{BodyModel, Mesh, PoseParams, ShapeParams, VertexOffsets};
