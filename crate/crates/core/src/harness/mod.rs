//! Evaluation, artifact writing, and experiment orchestration.

pub mod artifacts;
pub mod experiment;
pub mod metrics;

pub use artifacts::{
    benchmark_digest, fmt_f64, frames_csv, load_checkpoint_model, load_summary, rounds_csv,
    teacher_error_pooled, write_run_artifacts, RoundReportEntry, SummaryDoc, TeacherErr,
};
pub use experiment::{
    collect_summaries, emit_report, execute_specs, per_scan_csv, run_experiment, run_sweep,
    summary_table_csv, sweep_budget, sweep_buffer, sweep_teacher, ExperimentConfig, ReportFormat,
    RunSpec, SweepAxis, SweepConfig,
};
pub use metrics::{
    evaluate, evaluate_frames, report_from_frames, FrameError, Group, GroupMetrics,
    MetricsReport, PoseEstimator, ScanMetrics,
};
