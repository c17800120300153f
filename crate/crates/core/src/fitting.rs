//! Per-frame minimization of the total objective and the sequence driver.
//!
//! The first annotated frame fits shape and pose; every later frame keeps that
//! shape and warm-starts the pose from the previous successful fit.

use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::energy::{Breakdown, EnergyError, EnergyWeights, FrameObservation, Objective, PreparedFrame, Term};
use crate::geometry::{so3, unproject, CameraRig};
use crate::hand_model::{
    HandModel, HandPose, HandShape, Handedness, JointLimits, JointSet, PosedHand, ARTICULATION_DIMS, NUM_JOINTS, POSE_DIMS,
    SHAPE_DIMS,
};
use crate::par;
use crate::session::Session;

/// Joints used to place the hand from triangulated points: wrist and the five
/// finger bases, all rigid with the wrist frame.
const PALM_JOINTS: [usize; 6] = [0, 1, 5, 9, 13, 17];
const CONVERGENCE_WINDOW: usize = 5;
const MAX_BACKTRACKS: usize = 40;
const STEP_GROWTH: f64 = 1.25;
const RMS_DECAY: f64 = 0.9;
const RMS_EPS: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FitError {
    #[error("every data term is dropped for this frame")]
    AllTermsDropped,
    #[error("objective is not finite")]
    NonFiniteObjective,
    #[error("session has no frames")]
    EmptySession,
    #[error("invalid optimizer configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Energy(EnergyError),
}

impl From<EnergyError> for FitError {
    fn from(e: EnergyError) -> Self {
        match e {
            EnergyError::AllTermsDropped => FitError::AllTermsDropped,
            EnergyError::NonFiniteObjective => FitError::NonFiniteObjective,
            other => FitError::Energy(other),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    /// Iteration cap for the first (shape-estimating) frame.
    pub max_iterations: usize,
    /// Iteration cap for warm-started frames.
    pub max_iterations_warm: usize,
    /// Relative objective change over the convergence window that counts as converged.
    pub relative_tolerance: f64,
    /// Initial and maximal step, in scaled parameter units (radians for angles).
    pub step_size: f64,
    /// Initial step for warm-started frames.
    pub step_size_warm: f64,
    /// Per-iteration geometric decay of the step cap, in (0, 1].
    pub decay: f64,
    /// Step-cap decay for warm-started frames.
    pub decay_warm: f64,
    /// Heavy-ball coefficient on the accumulated gradient, in [0, 1).
    pub momentum: f64,
    /// Extra perturbed starts for the first frame.
    pub restarts: usize,
    /// Parameter scale of the global translation, meters per step unit.
    pub translation_scale: f64,
    pub seed: u64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            max_iterations: 500,
            max_iterations_warm: 150,
            relative_tolerance: 1e-6,
            step_size: 0.05,
            step_size_warm: 0.005,
            decay: 0.97,
            decay_warm: 0.9,
            momentum: 0.9,
            restarts: 2,
            translation_scale: 0.05,
            seed: 0,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<(), FitError> {
        let bad = |m: &str| Err(FitError::InvalidConfig(m.to_string()));
        if self.max_iterations < 1 || self.max_iterations_warm < 1 {
            return bad("iteration caps must be at least 1");
        }
        if !(self.relative_tolerance > 0.0) {
            return bad("relative_tolerance must be positive");
        }
        if !(self.step_size > 0.0 && self.step_size.is_finite() && self.step_size_warm > 0.0 && self.step_size_warm.is_finite()) {
            return bad("step sizes must be positive");
        }
        if !(self.decay > 0.0 && self.decay <= 1.0 && self.decay_warm > 0.0 && self.decay_warm <= 1.0) {
            return bad("decay factors must lie in (0, 1]");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("momentum must lie in [0, 1)");
        }
        if !(self.translation_scale > 0.0 && self.translation_scale.is_finite()) {
            return bad("translation_scale must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub shape: HandShape,
    pub pose: HandPose,
    pub joints: JointSet,
    pub objective: f64,
    pub breakdown: Breakdown,
    pub iterations: usize,
    pub converged: bool,
    pub dropped_terms: Vec<Term>,
    /// Objective after each accepted step, starting with the initial value.
    pub history: Vec<f64>,
}

/// Fit of one hand over a sequence. `frames[t]` is `None` where the hand is
/// absent or the frame could not be annotated (see `errors[t]`).
#[derive(Debug, Clone, PartialEq)]
pub struct HandTrack {
    pub handedness: Handedness,
    pub shape: Option<HandShape>,
    pub frames: Vec<Option<FitResult>>,
    pub errors: Vec<Option<String>>,
}

impl HandTrack {
    pub fn annotated_count(&self) -> usize {
        self.frames.iter().filter(|f| f.is_some()).count()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SequenceAnnotation {
    pub frame_count: usize,
    pub hands: Vec<HandTrack>,
}

impl SequenceAnnotation {
    pub fn hand(&self, h: Handedness) -> Option<&HandTrack> {
        self.hands.iter().find(|t| t.handedness == h)
    }

    pub fn annotated_count(&self) -> usize {
        self.hands.iter().map(HandTrack::annotated_count).sum()
    }
}

/// Everything a single fit needs besides the frame.
#[derive(Debug, Clone, Copy)]
pub struct FitContext<'a> {
    pub rig: &'a CameraRig,
    pub model: &'a HandModel,
    pub weights: &'a EnergyWeights,
    pub limits: &'a JointLimits,
    pub config: &'a OptimizerConfig,
}

struct Layout {
    shape_free: bool,
    translation_scale: f64,
}

impl Layout {
    fn dims(&self) -> usize {
        POSE_DIMS + if self.shape_free { SHAPE_DIMS } else { 0 }
    }

    fn scale(&self, i: usize) -> f64 {
        if (ARTICULATION_DIMS + 3..POSE_DIMS).contains(&i) {
            self.translation_scale
        } else {
            1.0
        }
    }

    fn pack(&self, shape: &HandShape, pose: &HandPose) -> Vec<f64> {
        let mut x = pose.to_vec();
        if self.shape_free {
            x.extend_from_slice(&shape.beta);
        }
        x
    }

    fn unpack(&self, x: &[f64], fixed_shape: &HandShape) -> (HandShape, HandPose) {
        let pose = HandPose::from_slice(&x[..POSE_DIMS]).expect("pose block");
        let shape = if self.shape_free {
            let mut s = HandShape::zero();
            s.beta.copy_from_slice(&x[POSE_DIMS..]);
            s
        } else {
            *fixed_shape
        };
        (shape, pose)
    }
}

/// Iteration budget, initial step and cap decay of one descent.
#[derive(Debug, Clone, Copy)]
struct Schedule {
    max_iterations: usize,
    step: f64,
    decay: f64,
}

impl Schedule {
    fn cold(c: &OptimizerConfig) -> Self {
        Self { max_iterations: c.max_iterations, step: c.step_size, decay: c.decay }
    }

    fn warm(c: &OptimizerConfig) -> Self {
        Self { max_iterations: c.max_iterations_warm, step: c.step_size_warm, decay: c.decay_warm }
    }
}

struct Run {
    shape: HandShape,
    pose: HandPose,
    objective: f64,
    iterations: usize,
    converged: bool,
    history: Vec<f64>,
}

/// Heavy-ball descent with per-parameter RMS normalization, backtracking
/// that accepts only strict decreases, and a geometrically decaying step cap.
fn descend(
    objective: &Objective<'_>,
    layout: &Layout,
    shape0: &HandShape,
    pose0: &HandPose,
    schedule: Schedule,
    config: &OptimizerConfig,
) -> Result<Run, FitError> {
    let n = layout.dims();
    let mut x = layout.pack(shape0, pose0);
    let (s, p) = layout.unpack(&x, shape0);
    let (mut eval, mut grad) = objective.evaluate_with_gradient(&s, &p)?;
    let mut f = eval.value;
    let mut history = vec![f];
    let mut rms = vec![0.0; n];
    let mut step = schedule.step;
    let mut cap = schedule.step;
    let mut velocity = vec![0.0; n];
    let mut iterations = 0;
    let mut converged = false;

    while iterations < schedule.max_iterations {
        iterations += 1;
        let g: Vec<f64> = grad.pose.iter().chain(grad.shape.iter()).take(n).copied().collect();
        if g.iter().all(|v| *v == 0.0) {
            converged = true;
            break;
        }
        for i in 0..n {
            let gs = g[i] * layout.scale(i);
            rms[i] = if iterations == 1 { gs * gs } else { RMS_DECAY * rms[i] + (1.0 - RMS_DECAY) * gs * gs };
            velocity[i] = config.momentum * velocity[i] + g[i];
        }
        let scaled = |v: &[f64]| -> Vec<f64> {
            (0..n).map(|i| -v[i] * layout.scale(i) / (rms[i].sqrt() + RMS_EPS) * layout.scale(i)).collect()
        };
        let mut dir = scaled(&velocity);
        if dir.iter().zip(&g).map(|(d, gi)| d * gi).sum::<f64>() >= 0.0 {
            // Accumulated velocity points uphill: restart from the plain gradient.
            velocity.copy_from_slice(&g);
            dir = scaled(&velocity);
        }

        let mut accepted = None;
        for _ in 0..MAX_BACKTRACKS {
            let trial: Vec<f64> = x.iter().zip(&dir).map(|(xi, di)| xi + step * di).collect();
            let (ts, tp) = layout.unpack(&trial, shape0);
            match objective.evaluate(&ts, &tp) {
                Ok(e) if e.value < f => {
                    accepted = Some(trial);
                    break;
                }
                Ok(_) | Err(EnergyError::NonFiniteObjective) => step *= 0.5,
                Err(e) => return Err(e.into()),
            }
        }
        let Some(trial) = accepted else {
            // No decrease along the descent direction at any tried step.
            converged = true;
            break;
        };
        x = trial;
        let (ts, tp) = layout.unpack(&x, shape0);
        let (e, gr) = objective.evaluate_with_gradient(&ts, &tp)?;
        eval = e;
        grad = gr;
        f = eval.value;
        history.push(f);
        cap *= schedule.decay;
        step = (step * STEP_GROWTH).min(cap);

        if history.len() > CONVERGENCE_WINDOW {
            let old = history[history.len() - 1 - CONVERGENCE_WINDOW];
            if (old - f).abs() <= config.relative_tolerance * f.abs().max(f64::MIN_POSITIVE) {
                converged = true;
                break;
            }
        }
    }
    let (shape, pose) = layout.unpack(&x, shape0);
    Ok(Run { shape, pose, objective: f, iterations, converged, history })
}

fn finish(objective: &Objective<'_>, model: &HandModel, run: Run) -> Result<FitResult, FitError> {
    let eval = objective.evaluate(&run.shape, &run.pose)?;
    Ok(FitResult {
        shape: run.shape,
        joints: PosedHand::joints_only(model, &run.shape, &run.pose).joints,
        pose: run.pose,
        objective: eval.value,
        breakdown: eval.breakdown,
        iterations: run.iterations,
        converged: run.converged,
        dropped_terms: eval.dropped,
        history: run.history,
    })
}

/// Rotation `R` and translation `t` minimizing `sum |R a_i + t - b_i|^2`.
pub fn kabsch(a: &[Vector3<f64>], b: &[Vector3<f64>]) -> Option<(Matrix3<f64>, Vector3<f64>)> {
    if a.len() < 3 || a.len() != b.len() {
        return None;
    }
    let ca = a.iter().sum::<Vector3<f64>>() / a.len() as f64;
    let cb = b.iter().sum::<Vector3<f64>>() / b.len() as f64;
    let mut h = Matrix3::zeros();
    for (p, q) in a.iter().zip(b) {
        h += (q - cb) * (p - ca).transpose();
    }
    let sv = h.svd(false, false).singular_values;
    let mut sorted = [sv[0], sv[1], sv[2]];
    sorted.sort_by(|x, y| y.total_cmp(x));
    if sorted[1] <= 1e-12 * sorted[0].max(f64::MIN_POSITIVE) {
        return None;
    }
    let r = so3::nearest_rotation(&h);
    Some((r, cb - r * ca))
}

/// Neutral start: zero shape, mid-range articulation and identity rotation.
/// The hand is placed, in order of preference, by aligning the triangulated
/// palm joints, at the triangulated wrist, along the first usable view's
/// wrist ray at the depth implied by the apparent palm size, or with its
/// centroid on the world origin.
pub fn initial_pose(model: &HandModel, limits: &JointLimits, frame: &PreparedFrame, rig: &CameraRig) -> HandPose {
    let shape = HandShape::zero();
    let mut pose = HandPose { articulation: limits.midpoint(), ..HandPose::default() };
    let rest = model.skeleton.rest_joints(&shape);
    let tri = frame.triangulated();
    let (a, b): (Vec<_>, Vec<_>) = PALM_JOINTS.iter().filter_map(|&j| tri[j].map(|t| (rest[j], t))).unzip();
    if let Some((r, t)) = kabsch(&a, &b) {
        // Wrist pivot: joint = R (rest - rest_0) + rest_0 + translation.
        pose.global_rotation = so3::log(&r);
        pose.global_translation = t + r * rest[0] - rest[0];
    } else if let Some(w) = tri[0] {
        pose.global_translation = w - rest[0];
    } else if let Some(w) = wrist_from_single_view(&rest, frame, rig) {
        pose.global_translation = w - rest[0];
    } else {
        let posed = PosedHand::new(model, &shape, &pose);
        let centroid = posed.vertices.iter().sum::<Vector3<f64>>() / posed.vertices.len().max(1) as f64;
        pose.global_translation = -centroid;
    }
    pose
}

/// Wrist position from one view: the ratio of rest-pose to detected palm
/// spans gives the depth along the detected wrist's ray.
fn wrist_from_single_view(rest: &[Vector3<f64>; NUM_JOINTS], frame: &PreparedFrame, rig: &CameraRig) -> Option<Vector3<f64>> {
    rig.cameras().iter().zip(&frame.observation.views).find_map(|(cam, view)| {
        if cam.weight <= 0.0 || view.confidence[0] <= 0.0 {
            return None;
        }
        let (mut span3, mut span2, mut n) = (0.0, 0.0, 0);
        for &j in &PALM_JOINTS[1..] {
            if view.confidence[j] > 0.0 {
                span3 += (rest[j] - rest[0]).norm();
                span2 += (view.joints2d[j] - view.joints2d[0]).norm();
                n += 1;
            }
        }
        if n == 0 || !(span2 > 0.0) {
            return None;
        }
        let focal = 0.5 * (cam.intrinsics.fx + cam.intrinsics.fy);
        let depth = focal * span3 / span2;
        depth.is_finite().then(|| unproject(cam, &view.joints2d[0], depth))
    })
}

fn perturbed(base: &HandPose, limits: &JointLimits, rng: &mut ChaCha8Rng) -> HandPose {
    let mut p = *base;
    for i in 0..ARTICULATION_DIMS {
        let span = 0.5 * (limits.upper[i] - limits.lower[i]);
        p.articulation[i] = (p.articulation[i] + rng.random_range(-0.5..=0.5) * span).clamp(limits.lower[i], limits.upper[i]);
    }
    let dr = Vector3::new(rng.random_range(-0.2..=0.2), rng.random_range(-0.2..=0.2), rng.random_range(-0.2..=0.2));
    p.global_rotation = so3::log(&(so3::exp(&p.global_rotation) * so3::exp(&dr)));
    p
}

/// Jointly fits shape and pose from the neutral start and `restarts`
/// perturbed starts; the lowest objective wins (ties to the earliest start).
pub fn fit_first_frame(frame: &PreparedFrame, ctx: &FitContext<'_>) -> Result<FitResult, FitError> {
    ctx.config.validate()?;
    let objective = Objective::new(ctx.rig, ctx.model, frame, *ctx.weights, ctx.limits, true)?;
    let layout = Layout { shape_free: true, translation_scale: ctx.config.translation_scale };
    let base = initial_pose(ctx.model, ctx.limits, frame, ctx.rig);
    let starts: Vec<HandPose> = (0..=ctx.config.restarts)
        .map(|k| {
            if k == 0 {
                base
            } else {
                let mut rng = ChaCha8Rng::seed_from_u64(ctx.config.seed);
                rng.set_stream(k as u64);
                perturbed(&base, ctx.limits, &mut rng)
            }
        })
        .collect();
    let runs = par::map_slice(&starts, |start| {
        descend(&objective, &layout, &HandShape::zero(), start, Schedule::cold(ctx.config), ctx.config)
    });
    let mut best: Option<Run> = None;
    for run in runs {
        let run = run?;
        if best.as_ref().is_none_or(|b| run.objective < b.objective) {
            best = Some(run);
        }
    }
    finish(&objective, ctx.model, best.expect("at least one start"))
}

/// Fits the pose only, shape held at `shape`, starting from `pose_init`.
pub fn fit_frame(frame: &PreparedFrame, shape: &HandShape, pose_init: &HandPose, ctx: &FitContext<'_>) -> Result<FitResult, FitError> {
    ctx.config.validate()?;
    let objective = Objective::new(ctx.rig, ctx.model, frame, *ctx.weights, ctx.limits, false)?;
    let layout = Layout { shape_free: false, translation_scale: ctx.config.translation_scale };
    let run = descend(&objective, &layout, shape, pose_init, Schedule::warm(ctx.config), ctx.config)?;
    let mut result = finish(&objective, ctx.model, run)?;
    result.shape = *shape;
    Ok(result)
}

/// Fits one hand's observations frame by frame.
pub fn fit_track(handedness: Handedness, frames: &[Option<&FrameObservation>], ctx: &FitContext<'_>) -> HandTrack {
    let mut track = HandTrack { handedness, shape: None, frames: Vec::with_capacity(frames.len()), errors: Vec::with_capacity(frames.len()) };
    let mut last: Option<(HandShape, HandPose)> = None;
    for obs in frames {
        let Some(obs) = obs else {
            track.frames.push(None);
            track.errors.push(None);
            continue;
        };
        let outcome = PreparedFrame::new(ctx.rig, (*obs).clone()).map_err(FitError::from).and_then(|frame| match &last {
            None => fit_first_frame(&frame, ctx),
            Some((shape, pose)) => fit_frame(&frame, shape, pose, ctx),
        });
        match outcome {
            Ok(fit) => {
                if last.is_none() {
                    track.shape = Some(fit.shape);
                }
                last = Some((fit.shape, fit.pose));
                track.frames.push(Some(fit));
                track.errors.push(None);
            }
            Err(e) => {
                track.frames.push(None);
                track.errors.push(Some(e.to_string()));
            }
        }
    }
    track
}

/// Fits every hand of the session independently, one model per hand.
/// `limits` overrides the models' own limits when given.
pub fn fit_sequence(
    session: &Session,
    models: &[HandModel],
    weights: &EnergyWeights,
    limits: Option<&JointLimits>,
    config: &OptimizerConfig,
) -> Result<SequenceAnnotation, FitError> {
    if session.frames.is_empty() {
        return Err(FitError::EmptySession);
    }
    config.validate()?;
    let tracks = par::map_slice(models, |model| {
        let ctx = FitContext { rig: &session.rig, model, weights, limits: limits.unwrap_or(&model.limits), config };
        fit_track(model.handedness, &session.track(model.handedness), &ctx)
    });
    Ok(SequenceAnnotation { frame_count: session.frames.len(), hands: tracks })
}
