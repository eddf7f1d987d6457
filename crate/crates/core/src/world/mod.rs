//! Synthetic world: procedural scenes with a controllable condition factor,
//! trajectory scans with held-out evaluation segments, and benchmark
//! schedules that stream those scans at a training strategy.

pub mod benchmark;
pub mod scan;
pub mod scene;

pub use benchmark::{build_benchmark, Benchmark, BenchmarkConfig, Preset, RoundEvent};
pub use scan::{generate_scan, split_holdout, Frame, Scan, ScanRole, TrajectoryParams};
pub use scene::{
    make_scene, sensitive_rows, Observation, SceneParams, SceneSpec, CONDITION_INDEX, INPUT_DIM,
};
