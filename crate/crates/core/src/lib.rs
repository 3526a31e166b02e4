//! Decentralized multi-UAV tracking of floating targets.
//!
//! Each UAV lifts stereo detections into world-frame measurements and tracks
//! them locally. Position marginals go to a surface vessel that fuses them
//! with Covariance Intersection and assigns UAVs to targets with a
//! capacitated min-cost flow. A UAV then picks hover viewpoints by D-optimal
//! information gain until its target is localized well enough to hand off.
//!
//! Start with [`sim::run_scenario`] for the whole loop, or the individual
//! modules for the pieces.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod alloc;
pub mod audit;
pub mod cli;
pub mod config;
mod error;
pub mod eval;
pub mod fuse;
pub mod geom;
pub mod linalg;
pub mod mot;
pub mod nav;
pub mod percept;
pub mod sim;
pub mod view;

pub use error::{Error, Result};
