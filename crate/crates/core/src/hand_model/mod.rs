//! Parametric hand: shape `beta` (10) and pose `theta` (45 articulation + 3
//! global rotation + 3 global translation) mapped to 21 joints and a skinned
//! mesh.
//!
//! The built-in model is a deterministic capsule hand with the same parameter
//! shapes as the common statistical hand models, so an external asset in the
//! text format of [`asset`] can be dropped in without other changes.

pub mod asset;
mod default_model;
mod kinematics;

use nalgebra::{SMatrix, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use asset::{load_model_asset, save_model_asset, ModelAsset};
pub use default_model::{build_default_model, default_limits, DEFAULT_VERTEX_COUNT};
pub use kinematics::{forward_kinematics, skin_mesh, ParamGradient, PosedHand};

pub const NUM_JOINTS: usize = 21;
pub const NUM_ARTICULATED: usize = 15;
pub const SHAPE_DIMS: usize = 10;
pub const ARTICULATION_DIMS: usize = 3 * NUM_ARTICULATED;
pub const POSE_DIMS: usize = ARTICULATION_DIMS + 6;

/// Per-joint 3x10 block mapping `beta` to a 3D displacement.
pub type ShapeBlock = SMatrix<f64, 3, SHAPE_DIMS>;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("cannot read model asset: {0}")]
    AssetParseError(String),
    #[error("model asset violates a contract: {0}")]
    AssetContractViolation(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Handedness {
    Left,
    Right,
}

impl Handedness {
    pub fn as_str(&self) -> &'static str {
        match self {
            Handedness::Left => "left",
            Handedness::Right => "right",
        }
    }
}

impl std::str::FromStr for Handedness {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "left" => Ok(Handedness::Left),
            "right" => Ok(Handedness::Right),
            other => Err(format!("unknown handedness '{other}'")),
        }
    }
}

impl std::fmt::Display for Handedness {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Shape coefficients. Kept soft-bounded by the quadratic shape regularizer.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct HandShape {
    pub beta: [f64; SHAPE_DIMS],
}

impl HandShape {
    pub fn zero() -> Self {
        Self::default()
    }

    pub fn is_finite(&self) -> bool {
        self.beta.iter().all(|b| b.is_finite())
    }
}

/// Pose parameters. The flat 51-vector order is articulation (joint-major,
/// x/y/z axis-angle per joint), global rotation, global translation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HandPose {
    pub articulation: [f64; ARTICULATION_DIMS],
    pub global_rotation: Vector3<f64>,
    pub global_translation: Vector3<f64>,
}

impl Default for HandPose {
    fn default() -> Self {
        Self { articulation: [0.0; ARTICULATION_DIMS], global_rotation: Vector3::zeros(), global_translation: Vector3::zeros() }
    }
}

impl HandPose {
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(POSE_DIMS);
        v.extend_from_slice(&self.articulation);
        v.extend(self.global_rotation.iter());
        v.extend(self.global_translation.iter());
        v
    }

    pub fn from_slice(values: &[f64]) -> Option<Self> {
        if values.len() != POSE_DIMS {
            return None;
        }
        let mut articulation = [0.0; ARTICULATION_DIMS];
        articulation.copy_from_slice(&values[..ARTICULATION_DIMS]);
        let a = ARTICULATION_DIMS;
        Some(Self {
            articulation,
            global_rotation: Vector3::new(values[a], values[a + 1], values[a + 2]),
            global_translation: Vector3::new(values[a + 3], values[a + 4], values[a + 5]),
        })
    }

    pub fn is_finite(&self) -> bool {
        self.articulation.iter().all(|v| v.is_finite())
            && self.global_rotation.iter().all(|v| v.is_finite())
            && self.global_translation.iter().all(|v| v.is_finite())
    }

    pub fn joint_rotation(&self, slot: usize) -> Vector3<f64> {
        Vector3::new(self.articulation[3 * slot], self.articulation[3 * slot + 1], self.articulation[3 * slot + 2])
    }

    /// The same pose expressed for the opposite hand (reflection across x = 0).
    pub fn mirrored(&self) -> Self {
        let mut articulation = self.articulation;
        for slot in 0..NUM_ARTICULATED {
            articulation[3 * slot + 1] = -articulation[3 * slot + 1];
            articulation[3 * slot + 2] = -articulation[3 * slot + 2];
        }
        let r = self.global_rotation;
        let t = self.global_translation;
        Self { articulation, global_rotation: Vector3::new(r.x, -r.y, -r.z), global_translation: Vector3::new(-t.x, t.y, t.z) }
    }
}

/// Kinematic tree. Joints are stored parents-first; joint 0 is the wrist.
#[derive(Debug, Clone, PartialEq)]
pub struct Skeleton {
    pub parent: [Option<usize>; NUM_JOINTS],
    /// Offset of each joint from its parent at rest (joint 0: from the origin).
    pub rest_offsets: [Vector3<f64>; NUM_JOINTS],
    /// Articulation slot (0..15) of each joint, `None` for the root and leaves.
    pub articulated: [Option<usize>; NUM_JOINTS],
    /// Linear map from `beta` to a rest-offset delta, per joint.
    pub shape_basis: [ShapeBlock; NUM_JOINTS],
}

impl Skeleton {
    pub fn children(&self, joint: usize) -> impl Iterator<Item = usize> + '_ {
        (0..NUM_JOINTS).filter(move |&j| self.parent[j] == Some(joint))
    }

    pub fn is_ancestor_or_self(&self, ancestor: usize, mut joint: usize) -> bool {
        loop {
            if joint == ancestor {
                return true;
            }
            match self.parent[joint] {
                Some(p) => joint = p,
                None => return false,
            }
        }
    }

    /// Shaped rest positions (zero pose, no global transform).
    pub fn rest_joints(&self, shape: &HandShape) -> [Vector3<f64>; NUM_JOINTS] {
        let beta = nalgebra::SVector::<f64, SHAPE_DIMS>::from(shape.beta);
        let mut out = [Vector3::zeros(); NUM_JOINTS];
        for j in 0..NUM_JOINTS {
            let offset = self.rest_offsets[j] + self.shape_basis[j] * beta;
            out[j] = match self.parent[j] {
                Some(p) => out[p] + offset,
                None => offset,
            };
        }
        out
    }

    /// Checks the structural contracts.
    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: String| Err(ModelError::AssetContractViolation(m));
        if self.parent[0].is_some() {
            return bad("joint 0 must be the root".into());
        }
        for j in 1..NUM_JOINTS {
            match self.parent[j] {
                Some(p) if p < j => {}
                _ => return bad(format!("joint {j} must have a parent with a smaller index")),
            }
        }
        let mut slots = Vec::new();
        for j in 0..NUM_JOINTS {
            let is_leaf = self.children(j).next().is_none();
            match self.articulated[j] {
                Some(s) => {
                    if j == 0 || is_leaf {
                        return bad(format!("joint {j} cannot carry articulation DoF"));
                    }
                    slots.push(s);
                }
                None => {
                    if j != 0 && !is_leaf {
                        return bad(format!("inner joint {j} has no articulation slot"));
                    }
                }
            }
        }
        slots.sort_unstable();
        if slots != (0..NUM_ARTICULATED).collect::<Vec<_>>() {
            return bad(format!("articulation slots must be a permutation of 0..{NUM_ARTICULATED}"));
        }
        let finite = self.rest_offsets.iter().all(|o| o.iter().all(|v| v.is_finite()))
            && self.shape_basis.iter().all(|b| b.iter().all(|v| v.is_finite()));
        if !finite {
            return bad("non-finite skeleton values".into());
        }
        Ok(())
    }
}

/// Triangle mesh with per-vertex skinning weights and shape displacements.
#[derive(Debug, Clone, PartialEq)]
pub struct HandMesh {
    pub vertices: Vec<Vector3<f64>>,
    pub triangles: Vec<[usize; 3]>,
    /// Row-stochastic, one row of `NUM_JOINTS` weights per vertex.
    pub skinning_weights: Vec<[f64; NUM_JOINTS]>,
    /// Per-vertex 3x10 shape displacement basis.
    pub shape_basis: Vec<ShapeBlock>,
}

impl HandMesh {
    pub fn vertex_count(&self) -> usize {
        self.vertices.len()
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: String| Err(ModelError::AssetContractViolation(m));
        let n = self.vertices.len();
        if n == 0 {
            return bad("mesh has no vertices".into());
        }
        if self.skinning_weights.len() != n || self.shape_basis.len() != n {
            return bad("per-vertex arrays disagree in length".into());
        }
        for (i, row) in self.skinning_weights.iter().enumerate() {
            if row.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
                return bad(format!("skinning row {i} has a negative or non-finite weight"));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > 1e-6 {
                return bad(format!("skinning row {i} sums to {sum}"));
            }
        }
        if let Some((i, t)) = self.triangles.iter().enumerate().find(|(_, t)| t.iter().any(|&v| v >= n)) {
            return bad(format!("triangle {i} references vertex {t:?} beyond {n}"));
        }
        if self.vertices.iter().any(|v| v.iter().any(|x| !x.is_finite())) {
            return bad("non-finite vertex".into());
        }
        Ok(())
    }
}

/// Box bounds on the 45 articulation angles, radians.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JointLimits {
    pub lower: [f64; ARTICULATION_DIMS],
    pub upper: [f64; ARTICULATION_DIMS],
}

impl JointLimits {
    pub fn validate(&self) -> Result<(), ModelError> {
        for i in 0..ARTICULATION_DIMS {
            if !(self.lower[i] <= self.upper[i]) {
                return Err(ModelError::AssetContractViolation(format!(
                    "limit {i}: lower {} exceeds upper {}",
                    self.lower[i], self.upper[i]
                )));
            }
        }
        Ok(())
    }

    pub fn midpoint(&self) -> [f64; ARTICULATION_DIMS] {
        let mut m = [0.0; ARTICULATION_DIMS];
        for i in 0..ARTICULATION_DIMS {
            m[i] = 0.5 * (self.lower[i] + self.upper[i]);
        }
        m
    }

    pub fn contains(&self, pose: &HandPose) -> bool {
        (0..ARTICULATION_DIMS).all(|i| pose.articulation[i] >= self.lower[i] && pose.articulation[i] <= self.upper[i])
    }
}

/// 21 joint positions in meters; joint 0 is the wrist.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JointSet {
    pub joints: [Vector3<f64>; NUM_JOINTS],
}

impl JointSet {
    pub fn wrist(&self) -> Vector3<f64> {
        self.joints[0]
    }

    pub fn is_finite(&self) -> bool {
        self.joints.iter().all(|j| j.iter().all(|v| v.is_finite()))
    }
}

/// Skeleton, template mesh and limits bundled, with a sparse copy of the
/// skinning weights for evaluation.
#[derive(Debug, Clone)]
pub struct HandModel {
    pub handedness: Handedness,
    pub skeleton: Skeleton,
    pub template: HandMesh,
    pub limits: JointLimits,
    sparse_weights: Vec<Vec<(usize, f64)>>,
}

impl HandModel {
    pub fn new(handedness: Handedness, skeleton: Skeleton, template: HandMesh, limits: JointLimits) -> Result<Self, ModelError> {
        skeleton.validate()?;
        template.validate()?;
        limits.validate()?;
        let sparse_weights = template
            .skinning_weights
            .iter()
            .map(|row| row.iter().copied().enumerate().filter(|(_, w)| *w > 0.0).collect())
            .collect();
        Ok(Self { handedness, skeleton, template, limits, sparse_weights })
    }

    /// The built-in capsule hand.
    pub fn builtin(handedness: Handedness) -> Self {
        let (skeleton, template, limits) = build_default_model(handedness);
        Self::new(handedness, skeleton, template, limits).expect("built-in model satisfies its contracts")
    }

    pub fn vertex_count(&self) -> usize {
        self.template.vertices.len()
    }

    pub(crate) fn sparse_weights(&self) -> &[Vec<(usize, f64)>] {
        &self.sparse_weights
    }

    pub fn with_limits(mut self, limits: JointLimits) -> Result<Self, ModelError> {
        limits.validate()?;
        self.limits = limits;
        Ok(self)
    }
}
