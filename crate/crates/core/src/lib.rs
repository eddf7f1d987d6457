//! Continual pose-regression training lab.
//!
//! A deployed absolute-pose-regression model goes stale as conditions drift
//! and coverage grows. This crate simulates the whole loop at desk scale:
//! a synthetic world renders observations along smooth trajectories, a small
//! from-scratch MLP regresses pose from them, scene-agnostic teachers
//! pseudo-label unlabeled inference scans, and an orchestrator updates the
//! deployed model under per-round compute budgets with reservoir replay.
//! Everything is deterministic given a master seed.

pub mod condo;
pub mod error;
pub mod geometry;
pub mod harness;
pub mod linalg;
pub mod model;
pub mod seed;
pub mod stats;
pub mod teachers;
pub mod world;

pub use error::{Error, Result};
