use std::collections::{BTreeMap, BTreeSet};

use crate::energy::FrameObservation;
use crate::geometry::CameraRig;
use crate::hand_model::Handedness;

/// Observations of the hands present in one time step.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SessionFrame {
    pub hands: BTreeMap<Handedness, FrameObservation>,
}

impl SessionFrame {
    pub fn single(hand: Handedness, observation: FrameObservation) -> Self {
        Self { hands: BTreeMap::from([(hand, observation)]) }
    }
}

/// A capture sequence: one rig and per-frame detections.
#[derive(Debug, Clone, PartialEq)]
pub struct Session {
    pub rig: CameraRig,
    pub frames: Vec<SessionFrame>,
}

impl Session {
    pub fn hands_present(&self, frame: usize) -> BTreeSet<Handedness> {
        self.frames.get(frame).map(|f| f.hands.keys().copied().collect()).unwrap_or_default()
    }

    /// Every hand that appears in some frame.
    pub fn hands(&self) -> BTreeSet<Handedness> {
        self.frames.iter().flat_map(|f| f.hands.keys().copied()).collect()
    }

    /// Per-frame observation of one hand, `None` where the hand is absent.
    pub fn track(&self, hand: Handedness) -> Vec<Option<&FrameObservation>> {
        self.frames.iter().map(|f| f.hands.get(&hand)).collect()
    }
}
