//! Fitting energies: 2D joints, mask silhouette, triangulated 3D joints,
//! point-cloud mesh distance, joint-limit and shape regularizers, and their
//! weighted total with gradients.
//!
//! All data terms sum raw (unsquared) norms. The gradient of a norm at an
//! exactly zero residual is taken as zero.

pub mod distance;
mod kdtree;
mod objective;
mod terms;

use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{triangulate, CameraRig};
use crate::hand_model::NUM_JOINTS;

pub use distance::{BinaryMask, MaskDistanceField};
pub use kdtree::PointIndex;
pub use objective::{grad_total, grad_total_fd, total_objective, Breakdown, Evaluation, Objective};
pub use terms::{e_j2d, e_j3d, e_mask, e_mesh, e_reg, e_shape, BEHIND_CAMERA_PENALTY_PX};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnergyError {
    #[error("no 2D joint has positive confidence in a weighted view")]
    NoValidObservations,
    #[error("mask of view {0} has no hand pixel")]
    EmptyMask(usize),
    #[error("no joint could be triangulated")]
    NoValidJoints,
    #[error("point cloud is empty")]
    EmptyCloud,
    #[error("every data term is dropped or has zero weight")]
    AllTermsDropped,
    #[error("objective is not finite")]
    NonFiniteObjective,
    #[error("energy weight {name} must be finite and non-negative, got {value}")]
    InvalidWeight { name: &'static str, value: f64 },
    #[error("observation does not match the rig: {0}")]
    ObservationMismatch(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Term {
    J2d,
    Mask,
    J3d,
    Mesh,
    Reg,
    Shape,
}

impl Term {
    pub const DATA: [Term; 4] = [Term::J2d, Term::Mask, Term::J3d, Term::Mesh];

    pub fn name(&self) -> &'static str {
        match self {
            Term::J2d => "j2d",
            Term::Mask => "mask",
            Term::J3d => "j3d",
            Term::Mesh => "mesh",
            Term::Reg => "reg",
            Term::Shape => "shape",
        }
    }
}

/// The λ coefficients of the total objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnergyWeights {
    pub lambda_j2d: f64,
    pub lambda_mask: f64,
    pub lambda_j3d: f64,
    pub lambda_mesh: f64,
    pub lambda_reg: f64,
    pub lambda_shape: f64,
}

impl Default for EnergyWeights {
    fn default() -> Self {
        Self { lambda_j2d: 1e-2, lambda_mask: 1e-3, lambda_j3d: 1.0, lambda_mesh: 1e-1, lambda_reg: 1.0, lambda_shape: 1e-2 }
    }
}

impl EnergyWeights {
    pub fn zero() -> Self {
        Self { lambda_j2d: 0.0, lambda_mask: 0.0, lambda_j3d: 0.0, lambda_mesh: 0.0, lambda_reg: 0.0, lambda_shape: 0.0 }
    }

    pub fn get(&self, term: Term) -> f64 {
        match term {
            Term::J2d => self.lambda_j2d,
            Term::Mask => self.lambda_mask,
            Term::J3d => self.lambda_j3d,
            Term::Mesh => self.lambda_mesh,
            Term::Reg => self.lambda_reg,
            Term::Shape => self.lambda_shape,
        }
    }

    pub fn set(&mut self, term: Term, value: f64) {
        match term {
            Term::J2d => self.lambda_j2d = value,
            Term::Mask => self.lambda_mask = value,
            Term::J3d => self.lambda_j3d = value,
            Term::Mesh => self.lambda_mesh = value,
            Term::Reg => self.lambda_reg = value,
            Term::Shape => self.lambda_shape = value,
        }
    }

    pub fn validate(&self) -> Result<(), EnergyError> {
        for (name, value) in [
            ("lambda_j2d", self.lambda_j2d),
            ("lambda_mask", self.lambda_mask),
            ("lambda_j3d", self.lambda_j3d),
            ("lambda_mesh", self.lambda_mesh),
            ("lambda_reg", self.lambda_reg),
            ("lambda_shape", self.lambda_shape),
        ] {
            if !(value.is_finite() && value >= 0.0) {
                return Err(EnergyError::InvalidWeight { name, value });
            }
        }
        Ok(())
    }
}

/// Detections for one camera.
#[derive(Debug, Clone, PartialEq)]
pub struct ViewObservation {
    pub joints2d: [Vector2<f64>; NUM_JOINTS],
    /// Per-joint confidence in `[0, 1]`; 0 marks a missing detection.
    pub confidence: [f64; NUM_JOINTS],
    pub mask: BinaryMask,
}

/// Per-joint triangulation result; `None` where triangulation failed.
pub type TriangulatedJoints = [Option<Vector3<f64>>; NUM_JOINTS];

#[derive(Debug, Clone, PartialEq)]
pub struct FrameObservation {
    pub views: Vec<ViewObservation>,
    /// Fused point cloud, world frame, meters.
    pub cloud: Vec<Vector3<f64>>,
    /// Filled from the 2D joints by [`PreparedFrame::new`] when absent.
    pub joints3d_triangulated: Option<TriangulatedJoints>,
}

/// Lifts the 2D joints to 3D using the views with positive weight and
/// positive confidence.
pub fn triangulate_joints(rig: &CameraRig, views: &[ViewObservation]) -> TriangulatedJoints {
    let mut out = [None; NUM_JOINTS];
    for (i, slot) in out.iter_mut().enumerate() {
        let obs: Vec<Option<Vector2<f64>>> = rig
            .cameras()
            .iter()
            .zip(views)
            .map(|(cam, view)| (cam.weight > 0.0 && view.confidence[i] > 0.0).then_some(view.joints2d[i]))
            .collect();
        *slot = triangulate(rig, &obs).ok();
    }
    out
}

/// A frame with its lookup structures built once for repeated evaluation.
#[derive(Debug, Clone)]
pub struct PreparedFrame {
    pub observation: FrameObservation,
    pub(crate) mask_fields: Vec<Option<MaskDistanceField>>,
    pub(crate) cloud_index: Option<PointIndex>,
    pub(crate) triangulated: TriangulatedJoints,
}

impl PreparedFrame {
    pub fn new(rig: &CameraRig, mut observation: FrameObservation) -> Result<Self, EnergyError> {
        if observation.views.len() != rig.len() {
            return Err(EnergyError::ObservationMismatch(format!(
                "{} views observed, rig has {} cameras",
                observation.views.len(),
                rig.len()
            )));
        }
        for (k, (view, cam)) in observation.views.iter().zip(rig.cameras()).enumerate() {
            let (w, h) = (cam.intrinsics.width as usize, cam.intrinsics.height as usize);
            if view.mask.width != w || view.mask.height != h {
                return Err(EnergyError::ObservationMismatch(format!(
                    "view {k}: mask is {}x{}, camera is {w}x{h}",
                    view.mask.width, view.mask.height
                )));
            }
            if view.mask.data.len() != w * h {
                return Err(EnergyError::ObservationMismatch(format!("view {k}: mask buffer has wrong length")));
            }
        }
        let triangulated = match observation.joints3d_triangulated {
            Some(t) => t,
            None => {
                let t = triangulate_joints(rig, &observation.views);
                observation.joints3d_triangulated = Some(t);
                t
            }
        };
        let mask_fields = observation.views.iter().map(|v| MaskDistanceField::new(&v.mask)).collect();
        let cloud_index = PointIndex::new(&observation.cloud);
        Ok(Self { observation, mask_fields, cloud_index, triangulated })
    }

    pub fn triangulated(&self) -> &TriangulatedJoints {
        &self.triangulated
    }

    pub fn mask_field(&self, view: usize) -> Option<&MaskDistanceField> {
        self.mask_fields.get(view).and_then(|f| f.as_ref())
    }

    pub fn cloud_index(&self) -> Option<&PointIndex> {
        self.cloud_index.as_ref()
    }
}
