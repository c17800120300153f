//! Pinhole multi-camera geometry: projection, DLT triangulation and PnP.
//!
//! Extrinsics are camera-from-world throughout. There is no lens distortion
//! model.

mod camera;
mod pnp;
pub mod so3;
mod triangulate;

pub use camera::{project, unproject, Camera, CameraRecord, CameraRig, Extrinsics, Intrinsics, MIN_DEPTH};
pub use pnp::{solve_pnp, MIN_CORRESPONDENCES, PLANARITY_TOL};
pub use triangulate::{triangulate, RANK_TOL};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("point has non-positive camera depth {0}")]
    NonPositiveDepth(f64),
    #[error("triangulation needs at least 2 observing views, got {0}")]
    InsufficientViews(usize),
    #[error("degenerate triangulation geometry (rays parallel or coincident)")]
    DegenerateGeometry,
    #[error("PnP needs at least 6 correspondences, got {0}")]
    InsufficientPoints(usize),
    #[error("degenerate PnP configuration (points coplanar or collinear)")]
    DegenerateConfiguration,
    #[error("invalid intrinsics: {0}")]
    InvalidIntrinsics(String),
    #[error("rotation is not a proper rotation (orthonormality error {orthonormality}, det {determinant})")]
    InvalidRotation { orthonormality: f64, determinant: f64 },
    #[error("camera weight must be finite and non-negative, got {0}")]
    InvalidWeight(f64),
    #[error("camera rig must contain at least one camera")]
    EmptyRig,
    #[error("expected {expected} per-view entries, got {got}")]
    WeightCount { expected: usize, got: usize },
}
