//! Term/view ablation over a session with known ground truth.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::energy::{EnergyWeights, Term};
use crate::fitting::{fit_sequence, FitError, OptimizerConfig};
use crate::geometry::CameraRig;
use crate::hand_model::{HandModel, JointLimits};
use crate::metrics::{mepe, MetricsError};
use crate::par;
use crate::session::Session;
use crate::synth::SynthGroundTruth;

#[derive(Debug, Error)]
pub enum AblationError {
    #[error(transparent)]
    Fit(#[from] FitError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("ablation input mismatch: {0}")]
    Mismatch(String),
}

/// One row of the ablation: which data terms are on, and whether only
/// camera 0 is used.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AblationSetting {
    pub name: &'static str,
    pub ego_view: bool,
    pub terms: &'static [Term],
}

pub const ABLATION_SETTINGS: [AblationSetting; 6] = [
    AblationSetting { name: "ego_mask_j2d", ego_view: true, terms: &[Term::Mask, Term::J2d] },
    AblationSetting { name: "ego_mask_j2d_mesh", ego_view: true, terms: &[Term::Mask, Term::J2d, Term::Mesh] },
    AblationSetting { name: "multi_mask", ego_view: false, terms: &[Term::Mask] },
    AblationSetting { name: "multi_mask_j2d", ego_view: false, terms: &[Term::Mask, Term::J2d] },
    AblationSetting { name: "multi_mask_j2d_mesh", ego_view: false, terms: &[Term::Mask, Term::J2d, Term::Mesh] },
    AblationSetting { name: "multi_mask_j2d_mesh_j3d", ego_view: false, terms: &[Term::Mask, Term::J2d, Term::Mesh, Term::J3d] },
];

impl AblationSetting {
    /// `base` with every data term outside this setting zeroed; the limit
    /// and shape regularizers are kept.
    pub fn weights(&self, base: &EnergyWeights) -> EnergyWeights {
        let mut w = *base;
        for t in Term::DATA {
            if !self.terms.contains(&t) {
                w.set(t, 0.0);
            }
        }
        w
    }

    /// `(1, 0, ..., 0)` for ego-view settings, `multi` otherwise.
    pub fn rig(&self, multi: &CameraRig) -> CameraRig {
        if self.ego_view {
            let alpha: Vec<f64> = (0..multi.len()).map(|k| if k == 0 { 1.0 } else { 0.0 }).collect();
            multi.with_weights(&alpha).expect("one weight per camera")
        } else {
            multi.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub name: String,
    /// Mean over annotated frames of the per-frame MEPE, centimeters.
    pub mean_cm: f64,
    /// Population standard deviation of the per-frame MEPE, centimeters.
    pub std_cm: f64,
    pub frames_annotated: usize,
    pub frames_total: usize,
}

/// Fits the session under all six settings and scores the ground-truth hand.
/// `session.rig` supplies the multi-view weights.
pub fn run_ablation(
    session: &Session,
    gt: &SynthGroundTruth,
    model: &HandModel,
    weights: &EnergyWeights,
    limits: Option<&JointLimits>,
    config: &OptimizerConfig,
) -> Result<Vec<AblationRow>, AblationError> {
    if gt.frames.len() != session.frames.len() {
        return Err(AblationError::Mismatch(format!("{} ground-truth frames for {} session frames", gt.frames.len(), session.frames.len())));
    }
    if model.handedness != gt.handedness {
        return Err(AblationError::Mismatch(format!("model is a {} hand, ground truth is {}", model.handedness, gt.handedness)));
    }
    let runs = par::map_slice(&ABLATION_SETTINGS, |setting| -> Result<AblationRow, AblationError> {
        let variant = Session { rig: setting.rig(&session.rig), frames: session.frames.clone() };
        let ann = fit_sequence(&variant, std::slice::from_ref(model), &setting.weights(weights), limits, config)?;
        let track = ann.hand(gt.handedness).expect("one track per model");
        let mut per_frame = Vec::new();
        for (fit, truth) in track.frames.iter().zip(&gt.frames) {
            if let Some(fit) = fit {
                per_frame.push(mepe(&[fit.joints], &[truth.joints])? / 10.0);
            }
        }
        let n = per_frame.len();
        let (mean, std) = if n == 0 {
            (f64::NAN, f64::NAN)
        } else {
            let mean = per_frame.iter().sum::<f64>() / n as f64;
            let var = per_frame.iter().map(|e| (e - mean) * (e - mean)).sum::<f64>() / n as f64;
            (mean, var.sqrt())
        };
        Ok(AblationRow { name: setting.name.to_string(), mean_cm: mean, std_cm: std, frames_annotated: n, frames_total: session.frames.len() })
    });
    runs.into_iter().collect()
}
