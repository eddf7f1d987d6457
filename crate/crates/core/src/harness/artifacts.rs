//! On-disk run layout. Every run owns one directory:
//!
//! ```text
//! <out>/<run_label>/
//!   rounds.csv            per-round budget and teacher-quality log
//!   per_frame_errors.csv  held-out error of every frame, final model
//!   summary.json          config, digests, final and per-round reports
//!   teacher_labels.json   pseudo labels as trained on (teacher runs only)
//!   checkpoints/round_<k>.json
//! ```
//!
//! summary.json holds nothing nondeterministic (no wallclock, no paths),
//! so identical seeds produce byte-identical summaries. Wallclock lives
//! only in rounds.csv.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::condo::{RoundRecord, RunOutput, RunParams, Strategy, TrainedModel};
use crate::error::{Error, Result};
use crate::geometry::{orientation_error_deg, position_error};
use crate::harness::metrics::{evaluate, FrameError, MetricsReport};
use crate::stats::median;
use crate::teachers::TeacherLabel;
use crate::world::Benchmark;

/// 17 significant digits round-trip any f64 exactly.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map(fmt_f64).unwrap_or_default()
}

pub const ROUNDS_CSV_HEADER: &str = "round_id,event_kind,scan_id,granted_iters,used_iters,\
teacher_median_pos_err_m,teacher_median_rot_err_deg,wallclock_s";

pub fn rounds_csv(rounds: &[RoundRecord]) -> String {
    let mut out = String::from(ROUNDS_CSV_HEADER);
    out.push('\n');
    for r in rounds {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            r.round_id,
            r.event_kind,
            r.scan_id,
            r.granted_iters,
            r.used_iters,
            fmt_opt(r.teacher_median_pos_err_m),
            fmt_opt(r.teacher_median_rot_err_deg),
            fmt_f64(r.wallclock_s),
        ));
    }
    out
}

pub const FRAMES_CSV_HEADER: &str = "scan_id,frame_index,group,pos_err_m,rot_err_deg";

pub fn frames_csv(frames: &[FrameError]) -> String {
    let mut out = String::from(FRAMES_CSV_HEADER);
    out.push('\n');
    for f in frames {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            f.scan_id,
            f.frame_index,
            f.group.label(),
            fmt_f64(f.pos_err_m),
            fmt_f64(f.rot_err_deg),
        ));
    }
    out
}

pub fn benchmark_digest(bench: &Benchmark) -> String {
    let mut h = Sha256::new();
    h.update(bench.to_json().as_bytes());
    let d = h.finalize();
    d.iter().map(|b| format!("{b:02x}")).collect()
}

/// The teacher's own accuracy, pooled over every pseudo-labeled frame.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TeacherErr {
    pub n_frames: usize,
    pub median_pos_err_m: f64,
    pub mean_pos_err_m: f64,
    pub median_rot_err_deg: f64,
    pub mean_rot_err_deg: f64,
}

pub fn teacher_error_pooled(
    bench: &Benchmark,
    labels: &std::collections::BTreeMap<String, Vec<TeacherLabel>>,
) -> Result<Option<TeacherErr>> {
    let mut pos = vec![];
    let mut rot = vec![];
    for (scan_id, scan_labels) in labels {
        let scan = bench
            .all_scans()
            .into_iter()
            .find(|s| &s.scan_id == scan_id)
            .ok_or_else(|| Error::invalid(format!("labels for unknown scan {scan_id}")))?;
        for l in scan_labels {
            let gt = &scan.frames[l.frame_index].pose;
            pos.push(position_error(&l.pose.position, &gt.position));
            rot.push(orientation_error_deg(&l.pose.orientation, &gt.orientation)?);
        }
    }
    if pos.is_empty() {
        return Ok(None);
    }
    let n = pos.len();
    Ok(Some(TeacherErr {
        n_frames: n,
        median_pos_err_m: median(&pos).expect("non-empty"),
        mean_pos_err_m: pos.iter().sum::<f64>() / n as f64,
        median_rot_err_deg: median(&rot).expect("non-empty"),
        mean_rot_err_deg: rot.iter().sum::<f64>() / n as f64,
    }))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundReportEntry {
    pub round_id: usize,
    pub report: MetricsReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SummaryDoc {
    pub run_label: String,
    pub strategy: Strategy,
    pub params: RunParams,
    pub benchmark_sha256: String,
    pub teacher_err: Option<TeacherErr>,
    pub final_report: MetricsReport,
    pub per_round: Vec<RoundReportEntry>,
}

impl SummaryDoc {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("summary serializes")
    }

    pub fn from_json(s: &str) -> Result<SummaryDoc> {
        serde_json::from_str(s).map_err(|e| Error::Serialization(e.to_string()))
    }
}

pub fn load_summary(path: &Path) -> Result<SummaryDoc> {
    SummaryDoc::from_json(&fs::read_to_string(path)?)
}

/// Evaluate a finished run and write its full artifact set under
/// `run_dir`. The label names the run in reports; sweeps override the
/// plain strategy label to keep variants distinct.
pub fn write_run_artifacts(
    run_dir: &Path,
    run_label: &str,
    bench: &Benchmark,
    out: &RunOutput,
    params: &RunParams,
    strategy: &Strategy,
) -> Result<SummaryDoc> {
    fs::create_dir_all(run_dir)?;
    fs::write(run_dir.join("rounds.csv"), rounds_csv(&out.rounds))?;

    let (final_report, frames) = evaluate(&out.final_model, bench)?;
    fs::write(run_dir.join("per_frame_errors.csv"), frames_csv(&frames))?;

    let mut per_round = vec![];
    if !out.round_models.is_empty() {
        let ckpt_dir = run_dir.join("checkpoints");
        fs::create_dir_all(&ckpt_dir)?;
        for rm in &out.round_models {
            let (report, _) = evaluate(&rm.model, bench)?;
            per_round.push(RoundReportEntry { round_id: rm.round_id, report });
            let body = serde_json::to_string(&rm.model)
                .map_err(|e| Error::Serialization(e.to_string()))?;
            fs::write(ckpt_dir.join(format!("round_{}.json", rm.round_id)), body)?;
        }
    }

    if !out.teacher_labels.is_empty() {
        let body = serde_json::to_string_pretty(&out.teacher_labels)
            .map_err(|e| Error::Serialization(e.to_string()))?;
        fs::write(run_dir.join("teacher_labels.json"), body)?;
    }

    let doc = SummaryDoc {
        run_label: run_label.to_string(),
        strategy: strategy.clone(),
        params: params.clone(),
        benchmark_sha256: benchmark_digest(bench),
        teacher_err: teacher_error_pooled(bench, &out.teacher_labels)?,
        final_report,
        per_round,
    };
    fs::write(run_dir.join("summary.json"), doc.to_json())?;
    Ok(doc)
}

pub fn load_checkpoint_model(run_dir: &Path, round_id: usize) -> Result<TrainedModel> {
    let path: PathBuf = run_dir.join("checkpoints").join(format!("round_{round_id}.json"));
    serde_json::from_str(&fs::read_to_string(path)?)
        .map_err(|e| Error::Serialization(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn floats_round_trip_through_the_csv_format() {
        for x in [0.0, 1.0, -1.5, 0.1, 1.0 / 3.0, 2.0_f64.sqrt(), 1e-300, 123456.789e12] {
            let s = fmt_f64(x);
            assert_eq!(s.parse::<f64>().unwrap(), x, "{s}");
        }
    }

    #[test]
    fn rounds_csv_shape() {
        let rounds = vec![RoundRecord {
            round_id: 0,
            event_kind: "initial_training".into(),
            scan_id: "initial".into(),
            n_new_visible: 10,
            granted_iters: 5,
            used_iters: 5,
            teacher_median_pos_err_m: None,
            teacher_median_rot_err_deg: Some(0.25),
            wallclock_s: 0.125,
        }];
        let csv = rounds_csv(&rounds);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 2);
        assert_eq!(lines[0].split(',').count(), 8);
        let fields: Vec<&str> = lines[1].split(',').collect();
        assert_eq!(fields.len(), 8);
        assert_eq!(fields[0], "0");
        assert_eq!(fields[5], "", "missing median stays empty");
        assert_eq!(fields[6].parse::<f64>().unwrap(), 0.25);
    }

    #[test]
    fn digest_is_stable_and_seed_sensitive() {
        use crate::world::{build_benchmark, BenchmarkConfig, Preset};
        let cfg = BenchmarkConfig {
            feature_dim: 16,
            frames_per_scan: 64,
            train_scans_per_scene: 1,
            inference_conditions: vec![0.5],
            n_waypoints: 4,
            max_step: 0.8,
            ..BenchmarkConfig::preset_defaults(Preset::ConditionShift, 3)
        };
        let a = build_benchmark(&cfg).unwrap();
        let d1 = benchmark_digest(&a);
        let d2 = benchmark_digest(&build_benchmark(&cfg).unwrap());
        assert_eq!(d1, d2);
        assert_eq!(d1.len(), 64);
        let other = build_benchmark(&BenchmarkConfig { seed: 4, ..cfg }).unwrap();
        assert_ne!(d1, benchmark_digest(&other));
    }
}
