//! Joint-error metrics: mean end-point error, root alignment, PCK and AUC.
//!
//! Inputs are in meters, outputs in millimeters.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hand_model::{JointSet, NUM_JOINTS};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("prediction/ground-truth mismatch: {0}")]
    ShapeMismatch(String),
    #[error("no errors to evaluate")]
    EmptyErrors,
    #[error("invalid threshold settings: {0}")]
    InvalidThreshold(String),
}

/// Per-joint Euclidean errors of all frames, millimeters, frame-major.
pub fn joint_errors_mm(pred: &[JointSet], gt: &[JointSet]) -> Result<Vec<f64>, MetricsError> {
    if pred.len() != gt.len() {
        return Err(MetricsError::ShapeMismatch(format!("{} predicted frames vs {} ground-truth frames", pred.len(), gt.len())));
    }
    let mut out = Vec::with_capacity(pred.len() * NUM_JOINTS);
    for (t, (p, g)) in pred.iter().zip(gt).enumerate() {
        for j in 0..NUM_JOINTS {
            if !g.joints[j].iter().all(|v| v.is_finite()) {
                return Err(MetricsError::ShapeMismatch(format!("ground truth frame {t} joint {j} is not finite")));
            }
            out.push((p.joints[j] - g.joints[j]).norm() * 1000.0);
        }
    }
    Ok(out)
}

/// Mean end-point error over every frame and joint, millimeters. Zero frames
/// give zero.
pub fn mepe(pred: &[JointSet], gt: &[JointSet]) -> Result<f64, MetricsError> {
    let e = joint_errors_mm(pred, gt)?;
    Ok(if e.is_empty() { 0.0 } else { e.iter().sum::<f64>() / e.len() as f64 })
}

/// Translates `pred` so its wrist coincides with the ground-truth wrist.
pub fn root_align(pred: &JointSet, gt: &JointSet) -> JointSet {
    let offset: Vector3<f64> = gt.joints[0] - pred.joints[0];
    if offset == Vector3::zeros() {
        return *pred;
    }
    let mut out = *pred;
    for j in out.joints.iter_mut() {
        *j += offset;
    }
    out
}

/// Root-aligned MEPE, millimeters.
pub fn mepe_root_aligned(pred: &[JointSet], gt: &[JointSet]) -> Result<f64, MetricsError> {
    if pred.len() != gt.len() {
        return Err(MetricsError::ShapeMismatch(format!("{} predicted frames vs {} ground-truth frames", pred.len(), gt.len())));
    }
    let aligned: Vec<JointSet> = pred.iter().zip(gt).map(|(p, g)| root_align(p, g)).collect();
    mepe(&aligned, gt)
}

/// PCK sampled at `steps` uniform thresholds on `[0, max_threshold_mm]`
/// (pooled over joints) and its trapezoidal area normalized by the range.
pub fn pck_auc(errors_mm: &[f64], max_threshold_mm: f64, steps: usize) -> Result<(Vec<(f64, f64)>, f64), MetricsError> {
    if errors_mm.is_empty() {
        return Err(MetricsError::EmptyErrors);
    }
    if !(max_threshold_mm > 0.0 && max_threshold_mm.is_finite()) {
        return Err(MetricsError::InvalidThreshold(format!("max threshold {max_threshold_mm} must be positive")));
    }
    if steps < 2 {
        return Err(MetricsError::InvalidThreshold(format!("steps = {steps}, need at least 2")));
    }
    let mut sorted = errors_mm.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let curve: Vec<(f64, f64)> = (0..steps)
        .map(|k| {
            let tau = max_threshold_mm * k as f64 / (steps - 1) as f64;
            // NaN errors sort last and never count as correct.
            let hits = sorted.partition_point(|&e| e <= tau);
            (tau, hits as f64 / n)
        })
        .collect();
    let area: f64 = curve.windows(2).map(|w| 0.5 * (w[0].1 + w[1].1) * (w[1].0 - w[0].0)).sum();
    let auc = (area / max_threshold_mm).clamp(0.0, 1.0);
    Ok((curve, auc))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricSettings {
    pub max_threshold_mm: f64,
    pub max_threshold_ra_mm: f64,
    pub pck_steps: usize,
}

impl Default for MetricSettings {
    fn default() -> Self {
        Self { max_threshold_mm: 50.0, max_threshold_ra_mm: 80.0, pck_steps: 101 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub mepe_mm: f64,
    pub mepe_ra_mm: f64,
    pub auc: f64,
    pub auc_ra: f64,
    pub pck_curve: Vec<(f64, f64)>,
    pub pck_curve_ra: Vec<(f64, f64)>,
    pub joint_count: usize,
    pub frames_evaluated: usize,
    /// Ground-truth frames without a prediction.
    pub frames_unannotated: usize,
}

/// Full report over paired frames; `None` predictions are excluded and counted.
pub fn evaluate(pred: &[Option<JointSet>], gt: &[JointSet], settings: &MetricSettings) -> Result<MetricsReport, MetricsError> {
    if pred.len() != gt.len() {
        return Err(MetricsError::ShapeMismatch(format!("{} predicted frames vs {} ground-truth frames", pred.len(), gt.len())));
    }
    let (p, g): (Vec<JointSet>, Vec<JointSet>) = pred.iter().zip(gt).filter_map(|(p, g)| p.map(|p| (p, *g))).unzip();
    let errors = joint_errors_mm(&p, &g)?;
    let aligned: Vec<JointSet> = p.iter().zip(&g).map(|(p, g)| root_align(p, g)).collect();
    let errors_ra = joint_errors_mm(&aligned, &g)?;
    let (pck_curve, auc) = pck_auc(&errors, settings.max_threshold_mm, settings.pck_steps)?;
    let (pck_curve_ra, auc_ra) = pck_auc(&errors_ra, settings.max_threshold_ra_mm, settings.pck_steps)?;
    let mean = |e: &[f64]| e.iter().sum::<f64>() / e.len() as f64;
    Ok(MetricsReport {
        mepe_mm: mean(&errors),
        mepe_ra_mm: mean(&errors_ra),
        auc,
        auc_ra,
        pck_curve,
        pck_curve_ra,
        joint_count: errors.len(),
        frames_evaluated: p.len(),
        frames_unannotated: pred.len() - p.len(),
    })
}
