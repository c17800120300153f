//! Multi-view parametric hand fitting.

#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord)]

pub mod ablation;
pub mod energy;
pub mod fitting;
pub mod geometry;
pub mod hand_model;
pub mod io;
pub mod metrics;
pub mod par;
pub mod session;
pub mod synth;
