use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::{read_text, write_file, IoError};
use crate::energy::{Breakdown, Term};
use crate::fitting::{FitResult, SequenceAnnotation};
use crate::hand_model::{HandPose, HandShape, Handedness, JointSet, NUM_JOINTS, POSE_DIMS};
use crate::synth::{GroundTruthFrame, SynthGroundTruth};

pub const ANNOTATION_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrameRecord {
    pub beta: Vec<f64>,
    pub theta: Vec<f64>,
    pub joints3d: Vec<[f64; 3]>,
    pub objective: f64,
    pub breakdown: Breakdown,
    pub converged: bool,
    pub iterations: usize,
    pub dropped_terms: Vec<Term>,
}

impl From<&FitResult> for FrameRecord {
    fn from(r: &FitResult) -> Self {
        Self {
            beta: r.shape.beta.to_vec(),
            theta: r.pose.to_vec(),
            joints3d: r.joints.joints.iter().map(|j| [j.x, j.y, j.z]).collect(),
            objective: r.objective,
            breakdown: r.breakdown,
            converged: r.converged,
            iterations: r.iterations,
            dropped_terms: r.dropped_terms.clone(),
        }
    }
}

impl FrameRecord {
    pub fn shape(&self) -> Option<HandShape> {
        let mut s = HandShape::zero();
        (self.beta.len() == s.beta.len()).then(|| {
            s.beta.copy_from_slice(&self.beta);
            s
        })
    }

    pub fn pose(&self) -> Option<HandPose> {
        HandPose::from_slice(&self.theta)
    }

    pub fn joints(&self) -> Option<JointSet> {
        (self.joints3d.len() == NUM_JOINTS).then(|| JointSet { joints: std::array::from_fn(|j| Vector3::from(self.joints3d[j])) })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HandRecord {
    /// Shape fixed after the first annotated frame.
    pub beta: Option<Vec<f64>>,
    /// One entry per session frame; `null` marks an unannotated frame.
    pub frames: Vec<Option<FrameRecord>>,
    /// Reason a present hand could not be annotated, per frame.
    pub errors: Vec<Option<String>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnnotationFile {
    pub format_version: u32,
    pub frame_count: usize,
    pub hands: BTreeMap<Handedness, HandRecord>,
}

impl From<&SequenceAnnotation> for AnnotationFile {
    fn from(a: &SequenceAnnotation) -> Self {
        let hands = a
            .hands
            .iter()
            .map(|t| {
                let rec = HandRecord {
                    beta: t.shape.map(|s| s.beta.to_vec()),
                    frames: t.frames.iter().map(|f| f.as_ref().map(FrameRecord::from)).collect(),
                    errors: t.errors.clone(),
                };
                (t.handedness, rec)
            })
            .collect();
        Self { format_version: ANNOTATION_FORMAT_VERSION, frame_count: a.frame_count, hands }
    }
}

impl AnnotationFile {
    /// Predicted joints of one hand, `None` for unannotated frames.
    pub fn joints(&self, hand: Handedness) -> Option<Vec<Option<JointSet>>> {
        self.hands.get(&hand).map(|h| h.frames.iter().map(|f| f.as_ref().and_then(FrameRecord::joints)).collect())
    }
}

fn to_json<T: Serialize>(value: &T) -> Vec<u8> {
    let mut s = serde_json::to_string_pretty(value).expect("annotation types serialize");
    s.push('\n');
    s.into_bytes()
}

pub fn save_annotations(path: &Path, annotation: &SequenceAnnotation) -> Result<(), IoError> {
    write_file(path, &to_json(&AnnotationFile::from(annotation)))
}

pub fn load_annotations(path: &Path) -> Result<AnnotationFile, IoError> {
    let file: AnnotationFile = serde_json::from_str(&read_text(path)?).map_err(|e| IoError::validation(path, "json", e.to_string()))?;
    if file.format_version != ANNOTATION_FORMAT_VERSION {
        return Err(IoError::validation(path, "format_version", format!("unsupported version {}", file.format_version)));
    }
    for (hand, rec) in &file.hands {
        if rec.frames.len() != file.frame_count || rec.errors.len() != file.frame_count {
            return Err(IoError::validation(path, format!("hands.{hand}"), format!("expected {} frame entries", file.frame_count)));
        }
        for (t, f) in rec.frames.iter().enumerate() {
            let Some(f) = f else { continue };
            if f.shape().is_none() || f.theta.len() != POSE_DIMS || f.joints().is_none() {
                return Err(IoError::validation(path, format!("hands.{hand}.frames[{t}]"), "wrong array length"));
            }
        }
    }
    Ok(file)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GroundTruthFrameRecord {
    beta: Vec<f64>,
    theta: Vec<f64>,
    joints3d: Vec<[f64; 3]>,
    vertices: Vec<[f64; 3]>,
}

/// `gt.json`: ground truth of a synthetic session.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroundTruthFile {
    format_version: u32,
    handedness: Handedness,
    frames: Vec<GroundTruthFrameRecord>,
}

pub fn save_ground_truth(path: &Path, gt: &SynthGroundTruth) -> Result<(), IoError> {
    let v3 = |p: &Vector3<f64>| [p.x, p.y, p.z];
    let file = GroundTruthFile {
        format_version: ANNOTATION_FORMAT_VERSION,
        handedness: gt.handedness,
        frames: gt
            .frames
            .iter()
            .map(|f| GroundTruthFrameRecord {
                beta: f.shape.beta.to_vec(),
                theta: f.pose.to_vec(),
                joints3d: f.joints.joints.iter().map(v3).collect(),
                vertices: f.vertices.iter().map(v3).collect(),
            })
            .collect(),
    };
    write_file(path, &to_json(&file))
}

pub fn load_ground_truth(path: &Path) -> Result<SynthGroundTruth, IoError> {
    let file: GroundTruthFile = serde_json::from_str(&read_text(path)?).map_err(|e| IoError::validation(path, "json", e.to_string()))?;
    if file.format_version != ANNOTATION_FORMAT_VERSION {
        return Err(IoError::validation(path, "format_version", format!("unsupported version {}", file.format_version)));
    }
    let frames = file
        .frames
        .iter()
        .enumerate()
        .map(|(t, f)| {
            let bad = |m: &str| IoError::validation(path, format!("frames[{t}]"), m);
            let mut shape = HandShape::zero();
            if f.beta.len() != shape.beta.len() {
                return Err(bad("beta must have 10 values"));
            }
            shape.beta.copy_from_slice(&f.beta);
            let pose = HandPose::from_slice(&f.theta).ok_or_else(|| bad("theta must have 51 values"))?;
            if f.joints3d.len() != NUM_JOINTS {
                return Err(bad("joints3d must have 21 rows"));
            }
            let joints = JointSet { joints: std::array::from_fn(|j| Vector3::from(f.joints3d[j])) };
            if !joints.is_finite() {
                return Err(bad("joints3d must be finite"));
            }
            let vertices = f.vertices.iter().map(|v| Vector3::from(*v)).collect();
            Ok(GroundTruthFrame { shape, pose, joints, vertices })
        })
        .collect::<Result<_, _>>()?;
    Ok(SynthGroundTruth { handedness: file.handedness, frames })
}
