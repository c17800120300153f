use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{read_text, IoError};
use crate::energy::EnergyWeights;
use crate::fitting::OptimizerConfig;
use crate::geometry::CameraRig;
use crate::hand_model::{load_model_asset, HandModel, Handedness, JointLimits, ARTICULATION_DIMS};
use crate::metrics::MetricSettings;

/// Flat key/value pipeline configuration. Every key is optional in the file
/// and falls back to the built-in default.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub lambda_j2d: f64,
    pub lambda_mask: f64,
    pub lambda_j3d: f64,
    pub lambda_mesh: f64,
    pub lambda_reg: f64,
    pub lambda_shape: f64,
    /// Per-view weights replacing the camera file's; one per camera.
    pub view_weights: Option<Vec<f64>>,
    /// Articulation limits (45 each) replacing the model's.
    pub limits_lower: Option<Vec<f64>>,
    pub limits_upper: Option<Vec<f64>>,
    pub max_iterations: usize,
    pub max_iterations_warm: usize,
    pub relative_tolerance: f64,
    pub step_size: f64,
    pub step_size_warm: f64,
    pub decay: f64,
    pub decay_warm: f64,
    pub momentum: f64,
    pub restarts: usize,
    pub translation_scale: f64,
    pub max_threshold_mm: f64,
    pub max_threshold_ra_mm: f64,
    pub pck_steps: usize,
    pub seed: u64,
    /// Model asset files; the built-in hands are used when absent.
    pub model_right: Option<PathBuf>,
    pub model_left: Option<PathBuf>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let w = EnergyWeights::default();
        let o = OptimizerConfig::default();
        let m = MetricSettings::default();
        Self {
            lambda_j2d: w.lambda_j2d,
            lambda_mask: w.lambda_mask,
            lambda_j3d: w.lambda_j3d,
            lambda_mesh: w.lambda_mesh,
            lambda_reg: w.lambda_reg,
            lambda_shape: w.lambda_shape,
            view_weights: None,
            limits_lower: None,
            limits_upper: None,
            max_iterations: o.max_iterations,
            max_iterations_warm: o.max_iterations_warm,
            relative_tolerance: o.relative_tolerance,
            step_size: o.step_size,
            step_size_warm: o.step_size_warm,
            decay: o.decay,
            decay_warm: o.decay_warm,
            momentum: o.momentum,
            restarts: o.restarts,
            translation_scale: o.translation_scale,
            max_threshold_mm: m.max_threshold_mm,
            max_threshold_ra_mm: m.max_threshold_ra_mm,
            pck_steps: m.pck_steps,
            seed: o.seed,
            model_right: None,
            model_left: None,
        }
    }
}

impl PipelineConfig {
    /// Parses the file and checks every value that does not need a session.
    pub fn load(path: &Path) -> Result<Self, IoError> {
        let text = read_text(path)?;
        let cfg = Self::parse(&text).map_err(|m| IoError::validation(path, "toml", m))?;
        cfg.validate().map_err(|(field, m)| IoError::validation(path, field, m))?;
        Ok(cfg)
    }

    pub fn parse(text: &str) -> Result<Self, String> {
        toml::from_str(text).map_err(|e| e.to_string())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn weights(&self) -> EnergyWeights {
        EnergyWeights {
            lambda_j2d: self.lambda_j2d,
            lambda_mask: self.lambda_mask,
            lambda_j3d: self.lambda_j3d,
            lambda_mesh: self.lambda_mesh,
            lambda_reg: self.lambda_reg,
            lambda_shape: self.lambda_shape,
        }
    }

    pub fn optimizer(&self) -> OptimizerConfig {
        OptimizerConfig {
            max_iterations: self.max_iterations,
            max_iterations_warm: self.max_iterations_warm,
            relative_tolerance: self.relative_tolerance,
            step_size: self.step_size,
            step_size_warm: self.step_size_warm,
            decay: self.decay,
            decay_warm: self.decay_warm,
            momentum: self.momentum,
            restarts: self.restarts,
            translation_scale: self.translation_scale,
            seed: self.seed,
        }
    }

    pub fn metrics(&self) -> MetricSettings {
        MetricSettings { max_threshold_mm: self.max_threshold_mm, max_threshold_ra_mm: self.max_threshold_ra_mm, pck_steps: self.pck_steps }
    }

    /// `(field, message)` of the first invalid value.
    pub fn validate(&self) -> Result<(), (String, String)> {
        self.weights().validate().map_err(|e| ("weights".to_string(), e.to_string()))?;
        self.optimizer().validate().map_err(|e| ("optimizer".to_string(), e.to_string()))?;
        if !(self.max_threshold_mm > 0.0 && self.max_threshold_ra_mm > 0.0) || self.pck_steps < 2 {
            return Err(("metrics".into(), "thresholds must be positive and pck_steps at least 2".into()));
        }
        if let Some(w) = &self.view_weights {
            if w.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
                return Err(("view_weights".into(), "weights must be finite and non-negative".into()));
            }
        }
        if self.limits_lower.is_some() != self.limits_upper.is_some() {
            return Err(("limits".into(), "limits_lower and limits_upper must be given together".into()));
        }
        if self.limits()?.is_some_and(|l| l.validate().is_err()) {
            return Err(("limits".into(), "every lower limit must not exceed its upper limit".into()));
        }
        for (key, p) in [("model_right", &self.model_right), ("model_left", &self.model_left)] {
            if let Some(p) = p {
                if !p.is_file() {
                    return Err((key.into(), format!("{} does not exist", p.display())));
                }
            }
        }
        Ok(())
    }

    pub fn limits(&self) -> Result<Option<JointLimits>, (String, String)> {
        match (&self.limits_lower, &self.limits_upper) {
            (Some(lo), Some(hi)) => {
                if lo.len() != ARTICULATION_DIMS || hi.len() != ARTICULATION_DIMS {
                    return Err(("limits".into(), format!("limits need {ARTICULATION_DIMS} values each")));
                }
                let mut l = JointLimits { lower: [0.0; ARTICULATION_DIMS], upper: [0.0; ARTICULATION_DIMS] };
                l.lower.copy_from_slice(lo);
                l.upper.copy_from_slice(hi);
                Ok(Some(l))
            }
            _ => Ok(None),
        }
    }

    /// The rig with `view_weights` applied, if given.
    pub fn apply_view_weights(&self, rig: &CameraRig) -> Result<CameraRig, (String, String)> {
        match &self.view_weights {
            None => Ok(rig.clone()),
            Some(w) if w.len() != rig.len() => {
                Err(("view_weights".into(), format!("{} weights for {} cameras", w.len(), rig.len())))
            }
            Some(w) => rig.with_weights(w).map_err(|e| ("view_weights".into(), e.to_string())),
        }
    }

    /// The model for one hand: the configured asset or the built-in hand.
    pub fn model(&self, hand: Handedness) -> Result<HandModel, (String, String)> {
        let (key, path) = match hand {
            Handedness::Right => ("model_right", &self.model_right),
            Handedness::Left => ("model_left", &self.model_left),
        };
        let Some(path) = path else {
            return Ok(HandModel::builtin(hand));
        };
        let asset = load_model_asset(path).map_err(|e| (key.to_string(), e.to_string()))?;
        if asset.handedness != hand {
            return Err((key.into(), format!("asset is a {} hand", asset.handedness)));
        }
        HandModel::new(asset.handedness, asset.skeleton, asset.template, asset.limits).map_err(|e| (key.to_string(), e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_toml() {
        let cfg = PipelineConfig::default();
        assert_eq!(PipelineConfig::parse(&cfg.to_toml()).unwrap(), cfg);
    }

    #[test]
    fn partial_file_keeps_defaults() {
        let cfg = PipelineConfig::parse("lambda_mesh = 0.5\nview_weights = [1.0, 0.0]\n").unwrap();
        assert_eq!(cfg.lambda_mesh, 0.5);
        assert_eq!(cfg.lambda_j3d, PipelineConfig::default().lambda_j3d);
        assert_eq!(cfg.view_weights, Some(vec![1.0, 0.0]));
    }

    #[test]
    fn unknown_key_is_rejected() {
        assert!(PipelineConfig::parse("lambda_typo = 1.0\n").is_err());
    }

    #[test]
    fn one_sided_limits_are_rejected() {
        let cfg = PipelineConfig { limits_lower: Some(vec![0.0; ARTICULATION_DIMS]), ..Default::default() };
        assert_eq!(cfg.validate().unwrap_err().0, "limits");
    }
}
