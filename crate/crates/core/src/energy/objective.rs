use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::distance::Cell;
use super::terms::{j2d_available, j2d_kernel, j3d_kernel, mask_available, mask_kernel, mesh_kernel, reg_kernel};
use super::{e_shape, EnergyError, EnergyWeights, PreparedFrame, Term};
use crate::geometry::CameraRig;
use crate::hand_model::{HandModel, HandPose, HandShape, JointLimits, ParamGradient, PosedHand, ARTICULATION_DIMS, NUM_JOINTS, POSE_DIMS, SHAPE_DIMS};

/// Unweighted term values. `None` marks a term that did not contribute: zero
/// weight, dropped, or (for shape) shape not free.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Breakdown {
    pub j2d: Option<f64>,
    pub mask: Option<f64>,
    pub j3d: Option<f64>,
    pub mesh: Option<f64>,
    pub reg: Option<f64>,
    pub shape: Option<f64>,
}

impl Breakdown {
    pub fn get(&self, term: Term) -> Option<f64> {
        match term {
            Term::J2d => self.j2d,
            Term::Mask => self.mask,
            Term::J3d => self.j3d,
            Term::Mesh => self.mesh,
            Term::Reg => self.reg,
            Term::Shape => self.shape,
        }
    }

    fn set(&mut self, term: Term, value: f64) {
        let slot = match term {
            Term::J2d => &mut self.j2d,
            Term::Mask => &mut self.mask,
            Term::J3d => &mut self.j3d,
            Term::Mesh => &mut self.mesh,
            Term::Reg => &mut self.reg,
            Term::Shape => &mut self.shape,
        };
        *slot = Some(value);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub value: f64,
    pub breakdown: Breakdown,
    /// Data terms with positive weight that could not be evaluated.
    pub dropped: Vec<Term>,
}

/// Correspondences held fixed for finite differencing.
#[derive(Debug, Clone, Default)]
struct Frozen {
    cells: Vec<Option<Cell>>,
    targets: Vec<Vector3<f64>>,
}

/// The weighted total objective for one frame, with the set of active terms
/// fixed at construction.
#[derive(Debug, Clone)]
pub struct Objective<'a> {
    pub rig: &'a CameraRig,
    pub model: &'a HandModel,
    pub frame: &'a PreparedFrame,
    pub weights: EnergyWeights,
    pub limits: &'a JointLimits,
    pub shape_free: bool,
    active: Vec<Term>,
    dropped: Vec<Term>,
}

impl<'a> Objective<'a> {
    /// Fails with `AllTermsDropped` when some weight is positive but no data
    /// term with positive weight can be evaluated on this frame. With every
    /// weight zero the objective is identically zero.
    pub fn new(
        rig: &'a CameraRig,
        model: &'a HandModel,
        frame: &'a PreparedFrame,
        weights: EnergyWeights,
        limits: &'a JointLimits,
        shape_free: bool,
    ) -> Result<Self, EnergyError> {
        weights.validate()?;
        let mut active = Vec::new();
        let mut dropped = Vec::new();
        for term in Term::DATA {
            if weights.get(term) == 0.0 {
                continue;
            }
            let ok = match term {
                Term::J2d => j2d_available(rig, &frame.observation.views),
                Term::Mask => mask_available(rig, frame).is_ok(),
                Term::J3d => frame.triangulated.iter().any(|t| t.is_some()),
                Term::Mesh => frame.cloud_index.is_some(),
                Term::Reg | Term::Shape => unreachable!(),
            };
            if ok {
                active.push(term);
            } else {
                dropped.push(term);
            }
        }
        let any_weight = [Term::J2d, Term::Mask, Term::J3d, Term::Mesh, Term::Reg, Term::Shape]
            .iter()
            .any(|&t| weights.get(t) > 0.0 && (t != Term::Shape || shape_free));
        if any_weight && active.is_empty() {
            return Err(EnergyError::AllTermsDropped);
        }
        if weights.lambda_reg > 0.0 {
            active.push(Term::Reg);
        }
        if shape_free && weights.lambda_shape > 0.0 {
            active.push(Term::Shape);
        }
        Ok(Self { rig, model, frame, weights, limits, shape_free, active, dropped })
    }

    pub fn active_terms(&self) -> &[Term] {
        &self.active
    }

    pub fn dropped_terms(&self) -> &[Term] {
        &self.dropped
    }

    /// Number of free parameters: 51 pose, plus 10 shape when shape is free.
    pub fn free_dims(&self) -> usize {
        POSE_DIMS + if self.shape_free { SHAPE_DIMS } else { 0 }
    }

    fn is_active(&self, term: Term) -> bool {
        self.active.contains(&term)
    }

    pub fn evaluate(&self, shape: &HandShape, pose: &HandPose) -> Result<Evaluation, EnergyError> {
        self.run(shape, pose, false, None).map(|r| r.0)
    }

    /// Value and analytic gradient. The shape block is zero unless shape is free.
    pub fn evaluate_with_gradient(&self, shape: &HandShape, pose: &HandPose) -> Result<(Evaluation, ParamGradient), EnergyError> {
        self.run(shape, pose, true, None).map(|(e, g, _)| (e, g.expect("requested")))
    }

    /// Central finite differences with nearest-neighbour and mask-cell
    /// assignments frozen at `(shape, pose)`.
    pub fn gradient_fd(&self, shape: &HandShape, pose: &HandPose, step: f64) -> Result<ParamGradient, EnergyError> {
        let (_, _, frozen) = self.run(shape, pose, false, None)?;
        let mut out = ParamGradient::default();
        let base = pose.to_vec();
        for i in 0..POSE_DIMS {
            let mut plus = base.clone();
            plus[i] += step;
            let mut minus = base.clone();
            minus[i] -= step;
            let fp = self.run(shape, &HandPose::from_slice(&plus).expect("51 values"), false, Some(&frozen))?.0.value;
            let fm = self.run(shape, &HandPose::from_slice(&minus).expect("51 values"), false, Some(&frozen))?.0.value;
            out.pose[i] = (fp - fm) / (2.0 * step);
        }
        if self.shape_free {
            for k in 0..SHAPE_DIMS {
                let mut plus = *shape;
                plus.beta[k] += step;
                let mut minus = *shape;
                minus.beta[k] -= step;
                let fp = self.run(&plus, pose, false, Some(&frozen))?.0.value;
                let fm = self.run(&minus, pose, false, Some(&frozen))?.0.value;
                out.shape[k] = (fp - fm) / (2.0 * step);
            }
        }
        Ok(out)
    }

    fn run(
        &self,
        shape: &HandShape,
        pose: &HandPose,
        want_grad: bool,
        frozen: Option<&Frozen>,
    ) -> Result<(Evaluation, Option<ParamGradient>, Frozen), EnergyError> {
        let mut breakdown = Breakdown::default();
        let mut value = 0.0;
        let mut new_frozen = Frozen::default();
        let mut joint_grads = [Vector3::zeros(); NUM_JOINTS];
        let mut vertex_grads: Vec<Vector3<f64>> = Vec::new();
        let needs_mesh = self.is_active(Term::Mask) || self.is_active(Term::Mesh);
        let posed = if needs_mesh {
            PosedHand::new(self.model, shape, pose)
        } else {
            PosedHand::joints_only(self.model, shape, pose)
        };
        let joints = &posed.joints.joints;
        let w = &self.weights;

        // Fixed order: j2d, mask, j3d, mesh, reg, shape.
        if self.is_active(Term::J2d) {
            let (v, g) = j2d_kernel(self.rig, joints, &self.frame.observation.views)?;
            breakdown.set(Term::J2d, v);
            value += w.lambda_j2d * v;
            for i in 0..NUM_JOINTS {
                joint_grads[i] += g[i] * w.lambda_j2d;
            }
        }
        if self.is_active(Term::Mask) {
            let m = mask_kernel(self.rig, &posed.vertices, self.frame, frozen.map(|f| f.cells.as_slice()))?;
            breakdown.set(Term::Mask, m.value);
            value += w.lambda_mask * m.value;
            vertex_grads = m.grads.iter().map(|g| g * w.lambda_mask).collect();
            new_frozen.cells = m.cells;
        }
        if self.is_active(Term::J3d) {
            let (v, g) = j3d_kernel(joints, &self.frame.triangulated)?;
            breakdown.set(Term::J3d, v);
            value += w.lambda_j3d * v;
            for i in 0..NUM_JOINTS {
                joint_grads[i] += g[i] * w.lambda_j3d;
            }
        }
        if self.is_active(Term::Mesh) {
            let m = mesh_kernel(&posed.vertices, self.frame.cloud_index.as_ref(), frozen.map(|f| f.targets.as_slice()))?;
            breakdown.set(Term::Mesh, m.value);
            value += w.lambda_mesh * m.value;
            if vertex_grads.is_empty() {
                vertex_grads = vec![Vector3::zeros(); posed.vertices.len()];
            }
            for (acc, g) in vertex_grads.iter_mut().zip(&m.grads) {
                *acc += g * w.lambda_mesh;
            }
            new_frozen.targets = m.targets;
        }
        let mut reg_grad = [0.0; ARTICULATION_DIMS];
        if self.is_active(Term::Reg) {
            let (v, g) = reg_kernel(pose, self.limits);
            breakdown.set(Term::Reg, v);
            value += w.lambda_reg * v;
            reg_grad = g;
        }
        if self.is_active(Term::Shape) {
            let v = e_shape(shape);
            breakdown.set(Term::Shape, v);
            value += w.lambda_shape * v;
        }
        if !value.is_finite() {
            return Err(EnergyError::NonFiniteObjective);
        }

        let gradient = want_grad.then(|| {
            let mut g = posed.backpropagate(self.model, &joint_grads, &vertex_grads);
            for i in 0..ARTICULATION_DIMS {
                g.pose[i] += w.lambda_reg * reg_grad[i];
            }
            if self.shape_free {
                if self.is_active(Term::Shape) {
                    for k in 0..SHAPE_DIMS {
                        g.shape[k] += w.lambda_shape * 2.0 * shape.beta[k];
                    }
                }
            } else {
                g.shape = [0.0; SHAPE_DIMS];
            }
            g
        });
        Ok((Evaluation { value, breakdown, dropped: self.dropped.clone() }, gradient, new_frozen))
    }
}

/// Weighted total objective and its per-term breakdown.
#[allow(clippy::too_many_arguments)]
pub fn total_objective(
    shape: &HandShape,
    pose: &HandPose,
    shape_free: bool,
    frame: &PreparedFrame,
    rig: &CameraRig,
    model: &HandModel,
    weights: &EnergyWeights,
    limits: &JointLimits,
) -> Result<Evaluation, EnergyError> {
    Objective::new(rig, model, frame, *weights, limits, shape_free)?.evaluate(shape, pose)
}

/// Analytic gradient of [`total_objective`] over the free parameters.
#[allow(clippy::too_many_arguments)]
pub fn grad_total(
    shape: &HandShape,
    pose: &HandPose,
    shape_free: bool,
    frame: &PreparedFrame,
    rig: &CameraRig,
    model: &HandModel,
    weights: &EnergyWeights,
    limits: &JointLimits,
) -> Result<ParamGradient, EnergyError> {
    Objective::new(rig, model, frame, *weights, limits, shape_free)?.evaluate_with_gradient(shape, pose).map(|r| r.1)
}

/// Reference gradient by central differences with frozen correspondences.
#[allow(clippy::too_many_arguments)]
pub fn grad_total_fd(
    shape: &HandShape,
    pose: &HandPose,
    shape_free: bool,
    frame: &PreparedFrame,
    rig: &CameraRig,
    model: &HandModel,
    weights: &EnergyWeights,
    limits: &JointLimits,
    step: f64,
) -> Result<ParamGradient, EnergyError> {
    Objective::new(rig, model, frame, *weights, limits, shape_free)?.gradient_fd(shape, pose, step)
}
