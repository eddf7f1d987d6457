//! Experiment orchestration: one config in, a directory of comparable
//! runs out. A train-only baseline is always included so every table has
//! its improvement reference, and sub-runs execute in parallel without
//! sharing any state beyond the immutable benchmark.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::condo::{run_strategy, BudgetRate, Capacity, RunParams, Strategy};
use crate::error::{Error, Result};
use crate::harness::artifacts::{fmt_f64, load_summary, write_run_artifacts, SummaryDoc};
use crate::teachers::TeacherConfig;
use crate::world::{build_benchmark, Benchmark, BenchmarkConfig};

fn d_budget_rates() -> Vec<f64> {
    vec![1.0, 0.5, 0.25, 0.125, 0.01]
}

fn d_buffer_fractions() -> Vec<f64> {
    vec![0.1, 0.25, 0.5, 1.0]
}

fn d_sweep_teacher() -> TeacherConfig {
    TeacherConfig::Oracle { sigma_t: 0.02, sigma_r_deg: 0.5 }
}

fn d_sweep_teachers() -> Vec<TeacherConfig> {
    vec![
        TeacherConfig::GroundTruth,
        TeacherConfig::Oracle { sigma_t: 0.02, sigma_r_deg: 0.5 },
        TeacherConfig::Oracle { sigma_t: 0.1, sigma_r_deg: 2.0 },
        TeacherConfig::Retrieval { invariant_only: true },
        TeacherConfig::Odometry { step_sigma_t: 0.02, step_sigma_r_deg: 0.2 },
    ]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    /// Budget-sweep rates; each runs continual updating and full retraining
    /// at the same rate.
    #[serde(default = "d_budget_rates")]
    pub budget_rates: Vec<f64>,
    /// Buffer-sweep capacities as fractions of the total unlabeled frames.
    #[serde(default = "d_buffer_fractions")]
    pub buffer_fractions: Vec<f64>,
    /// Teacher used by the budget and buffer sweeps.
    #[serde(default = "d_sweep_teacher")]
    pub teacher: TeacherConfig,
    /// Teacher-sweep roster.
    #[serde(default = "d_sweep_teachers")]
    pub teachers: Vec<TeacherConfig>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            budget_rates: d_budget_rates(),
            buffer_fractions: d_buffer_fractions(),
            teacher: d_sweep_teacher(),
            teachers: d_sweep_teachers(),
        }
    }
}

fn d_strategies() -> Vec<Strategy> {
    vec![
        Strategy::TrainOnly,
        Strategy::Condo { teacher: d_sweep_teacher(), budget_rate: 1.0 },
        Strategy::RetrainGt { rate: BudgetRate::Unlimited },
    ]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub benchmark: BenchmarkConfig,
    #[serde(default)]
    pub run: RunParams,
    #[serde(default = "d_strategies")]
    pub strategies: Vec<Strategy>,
    #[serde(default)]
    pub sweep: SweepConfig,
    /// Default output directory; a CLI flag overrides it.
    #[serde(default)]
    pub out_dir: Option<String>,
    /// Worker threads for sub-runs; absent means one per core.
    #[serde(default)]
    pub parallel: Option<usize>,
}

impl ExperimentConfig {
    pub fn from_json(s: &str) -> Result<ExperimentConfig> {
        let cfg: ExperimentConfig =
            serde_json::from_str(s).map_err(|e| Error::Serialization(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        for s in &self.strategies {
            s.validate()?;
        }
        for &r in &self.sweep.budget_rates {
            if !r.is_finite() || r <= 0.0 {
                return Err(Error::invalid("sweep budget rates must be positive"));
            }
        }
        for &f in &self.sweep.buffer_fractions {
            if !f.is_finite() || f <= 0.0 || f > 1.0 {
                return Err(Error::invalid("buffer fractions must be in (0, 1]"));
            }
        }
        if self.sweep.teachers.is_empty() {
            return Err(Error::invalid("teacher sweep needs at least one teacher"));
        }
        Ok(())
    }
}

/// One sub-run: a labeled (strategy, params) pair against the shared
/// benchmark.
#[derive(Clone, Debug)]
pub struct RunSpec {
    pub label: String,
    pub strategy: Strategy,
    pub params: RunParams,
}

impl RunSpec {
    fn plain(strategy: Strategy, params: &RunParams) -> RunSpec {
        RunSpec { label: strategy.label(), strategy, params: params.clone() }
    }
}

fn ensure_baseline(specs: &mut Vec<RunSpec>, params: &RunParams) {
    if !specs.iter().any(|s| matches!(s.strategy, Strategy::TrainOnly)) {
        specs.insert(0, RunSpec::plain(Strategy::TrainOnly, params));
    }
}

/// Run every spec against the benchmark, each writing only under its own
/// `<out>/<label>` directory. Results come back in spec order; the first
/// failing sub-run aborts the whole experiment.
pub fn execute_specs(
    bench: &Benchmark,
    specs: &[RunSpec],
    out_dir: &Path,
    threads: Option<usize>,
) -> Result<Vec<SummaryDoc>> {
    let mut seen = std::collections::BTreeSet::new();
    for s in specs {
        if !seen.insert(&s.label) {
            return Err(Error::invalid(format!("duplicate run label {}", s.label)));
        }
    }
    fs::create_dir_all(out_dir)?;
    fs::write(out_dir.join("benchmark.json"), bench.to_json())?;

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.unwrap_or(0))
        .build()
        .map_err(|e| Error::invalid(format!("thread pool: {e}")))?;
    pool.install(|| {
        specs
            .par_iter()
            .map(|spec| {
                let out = run_strategy(bench, &spec.strategy, &spec.params)?;
                write_run_artifacts(
                    &out_dir.join(&spec.label),
                    &spec.label,
                    bench,
                    &out,
                    &spec.params,
                    &spec.strategy,
                )
            })
            .collect()
    })
}

/// The configured strategy list (plus the train-only baseline) on the
/// configured benchmark.
pub fn run_experiment(
    cfg: &ExperimentConfig,
    out_dir: &Path,
    threads: Option<usize>,
) -> Result<Vec<SummaryDoc>> {
    cfg.validate()?;
    let bench = build_benchmark(&cfg.benchmark)?;
    let mut specs: Vec<RunSpec> =
        cfg.strategies.iter().map(|s| RunSpec::plain(s.clone(), &cfg.run)).collect();
    ensure_baseline(&mut specs, &cfg.run);
    execute_specs(&bench, &specs, out_dir, threads.or(cfg.parallel))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    Budget,
    Buffer,
    Teacher,
}

/// Continual updating vs full retraining at every configured rate.
pub fn sweep_budget(
    cfg: &ExperimentConfig,
    out_dir: &Path,
    threads: Option<usize>,
) -> Result<Vec<SummaryDoc>> {
    cfg.validate()?;
    let bench = build_benchmark(&cfg.benchmark)?;
    let mut specs = vec![RunSpec::plain(Strategy::TrainOnly, &cfg.run)];
    for &rate in &cfg.sweep.budget_rates {
        specs.push(RunSpec::plain(
            Strategy::Condo { teacher: cfg.sweep.teacher.clone(), budget_rate: rate },
            &cfg.run,
        ));
        specs.push(RunSpec::plain(
            Strategy::RetrainGt { rate: BudgetRate::Rate(rate) },
            &cfg.run,
        ));
    }
    execute_specs(&bench, &specs, out_dir, threads.or(cfg.parallel))
}

/// Replay capacity as a fraction of all unlabeled frames, plus an
/// unlimited-buffer reference.
pub fn sweep_buffer(
    cfg: &ExperimentConfig,
    out_dir: &Path,
    threads: Option<usize>,
) -> Result<Vec<SummaryDoc>> {
    cfg.validate()?;
    let bench = build_benchmark(&cfg.benchmark)?;
    let total = bench.n_unlabeled_visible();
    if total == 0 {
        return Err(Error::invalid("benchmark has no unlabeled frames to buffer"));
    }
    let strat = Strategy::Condo { teacher: cfg.sweep.teacher.clone(), budget_rate: 1.0 };
    let mut specs = vec![
        RunSpec::plain(Strategy::TrainOnly, &cfg.run),
        RunSpec::plain(strat.clone(), &cfg.run),
    ];
    for &frac in &cfg.sweep.buffer_fractions {
        let cap = ((total as f64 * frac).round() as usize).max(1);
        let params = RunParams { replay_capacity: Capacity::Finite(cap), ..cfg.run.clone() };
        specs.push(RunSpec { label: format!("{}-buf{frac}", strat.label()), strategy: strat.clone(), params });
    }
    execute_specs(&bench, &specs, out_dir, threads.or(cfg.parallel))
}

/// Continual updating under each teacher in the roster. Labels carry the
/// roster index because two entries may share a teacher kind.
pub fn sweep_teacher(
    cfg: &ExperimentConfig,
    out_dir: &Path,
    threads: Option<usize>,
) -> Result<Vec<SummaryDoc>> {
    cfg.validate()?;
    let bench = build_benchmark(&cfg.benchmark)?;
    let mut specs = vec![RunSpec::plain(Strategy::TrainOnly, &cfg.run)];
    for (i, t) in cfg.sweep.teachers.iter().enumerate() {
        let strat = Strategy::Condo { teacher: t.clone(), budget_rate: 1.0 };
        specs.push(RunSpec {
            label: format!("{}-t{i}", strat.label()),
            strategy: strat,
            params: cfg.run.clone(),
        });
    }
    execute_specs(&bench, &specs, out_dir, threads.or(cfg.parallel))
}

pub fn run_sweep(
    axis: SweepAxis,
    cfg: &ExperimentConfig,
    out_dir: &Path,
    threads: Option<usize>,
) -> Result<Vec<SummaryDoc>> {
    match axis {
        SweepAxis::Budget => sweep_budget(cfg, out_dir, threads),
        SweepAxis::Buffer => sweep_buffer(cfg, out_dir, threads),
        SweepAxis::Teacher => sweep_teacher(cfg, out_dir, threads),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Json,
}

/// Load every `<root>/<run>/summary.json`, sorted by run label.
pub fn collect_summaries(root: &Path) -> Result<Vec<SummaryDoc>> {
    let mut paths: Vec<PathBuf> = vec![];
    for entry in fs::read_dir(root)? {
        let p = entry?.path();
        if p.is_dir() && p.join("summary.json").is_file() {
            paths.push(p.join("summary.json"));
        }
    }
    let mut docs: Vec<SummaryDoc> = paths.iter().map(|p| load_summary(p)).collect::<Result<_>>()?;
    docs.sort_by(|a, b| a.run_label.cmp(&b.run_label));
    Ok(docs)
}

pub const REPORT_CSV_HEADER: &str = "run_label,scan_id,group,n_frames,\
median_pos_err_m,mean_pos_err_m,median_rot_err_deg,mean_rot_err_deg";

/// Per-scan rows across runs: n_runs x n_scans data rows.
pub fn per_scan_csv(docs: &[SummaryDoc]) -> String {
    let mut out = String::from(REPORT_CSV_HEADER);
    out.push('\n');
    for d in docs {
        for s in &d.final_report.per_scan {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                d.run_label,
                s.scan_id,
                s.group.label(),
                s.n_frames,
                fmt_f64(s.median_pos_err_m),
                fmt_f64(s.mean_pos_err_m),
                fmt_f64(s.median_rot_err_deg),
                fmt_f64(s.mean_rot_err_deg),
            ));
        }
    }
    out
}

pub const SUMMARY_TABLE_HEADER: &str = "run_label,group,n_frames,\
median_pos_err_m,mean_pos_err_m,median_rot_err_deg,mean_rot_err_deg,\
teacher_median_pos_err_m,teacher_median_rot_err_deg";

/// Pooled group rows across runs, with the teacher's own error when the
/// run had one.
pub fn summary_table_csv(docs: &[SummaryDoc]) -> String {
    let mut out = String::from(SUMMARY_TABLE_HEADER);
    out.push('\n');
    for d in docs {
        for g in &d.final_report.groups {
            let (tp, tr) = match &d.teacher_err {
                Some(t) => (fmt_f64(t.median_pos_err_m), fmt_f64(t.median_rot_err_deg)),
                None => (String::new(), String::new()),
            };
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{}\n",
                d.run_label,
                g.group.label(),
                g.n_frames,
                fmt_f64(g.median_pos_err_m),
                fmt_f64(g.mean_pos_err_m),
                fmt_f64(g.median_rot_err_deg),
                fmt_f64(g.mean_rot_err_deg),
                tp,
                tr,
            ));
        }
    }
    out
}

/// Assemble cross-run reports from the summaries under `root`. Returns
/// the files written.
pub fn emit_report(root: &Path, format: ReportFormat) -> Result<Vec<PathBuf>> {
    let docs = collect_summaries(root)?;
    if docs.is_empty() {
        return Err(Error::invalid(format!("no run summaries under {}", root.display())));
    }
    let mut written = vec![];
    match format {
        ReportFormat::Csv => {
            let per_scan = root.join("report.csv");
            fs::write(&per_scan, per_scan_csv(&docs))?;
            written.push(per_scan);
            let table = root.join("summary_table.csv");
            fs::write(&table, summary_table_csv(&docs))?;
            written.push(table);
        }
        ReportFormat::Json => {
            let path = root.join("report.json");
            let body = serde_json::to_string_pretty(&docs)
                .map_err(|e| Error::Serialization(e.to_string()))?;
            fs::write(&path, body)?;
            written.push(path);
        }
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::metrics::Group;
    use crate::model::ModelConfig;
    use crate::world::Preset;

    fn tiny_config() -> ExperimentConfig {
        ExperimentConfig {
            benchmark: BenchmarkConfig {
                feature_dim: 32,
                frames_per_scan: 64,
                train_scans_per_scene: 1,
                inference_scans_per_scene: 1,
                inference_conditions: vec![0.4, 1.0],
                n_waypoints: 4,
                max_step: 0.8,
                ..BenchmarkConfig::preset_defaults(Preset::ConditionShift, 11)
            },
            run: RunParams {
                seed: 5,
                model: ModelConfig { input_dim: 32, hidden: vec![16] },
                batch_size: 16,
                b: 4.0,
                ..RunParams::default()
            },
            strategies: vec![Strategy::Condo { teacher: d_sweep_teacher(), budget_rate: 1.0 }],
            sweep: SweepConfig {
                budget_rates: vec![1.0, 0.25],
                buffer_fractions: vec![0.5],
                ..SweepConfig::default()
            },
            out_dir: None,
            parallel: Some(2),
        }
    }

    #[test]
    fn experiment_always_includes_the_baseline() {
        let dir = tempfile::tempdir().unwrap();
        let docs = run_experiment(&tiny_config(), dir.path(), None).unwrap();
        assert_eq!(docs.len(), 2);
        assert_eq!(docs[0].run_label, "train_only");
        assert_eq!(docs[1].run_label, "condo-oracle-r1");
        for d in &docs {
            let run_dir = dir.path().join(&d.run_label);
            assert!(run_dir.join("rounds.csv").is_file());
            assert!(run_dir.join("per_frame_errors.csv").is_file());
            assert!(run_dir.join("summary.json").is_file());
            assert!(run_dir.join("checkpoints").join("round_0.json").is_file());
            assert!(d.final_report.group(Group::InferenceHeldout).is_some());
            // 1 deployment round + 2 arrival rounds, each evaluated.
            assert_eq!(d.per_round.len(), 3);
        }
        assert!(dir.path().join("benchmark.json").is_file());
        // The teacher run kept its labels; the baseline has none.
        assert!(dir.path().join("condo-oracle-r1").join("teacher_labels.json").is_file());
        assert!(!dir.path().join("train_only").join("teacher_labels.json").exists());
    }

    #[test]
    fn summaries_are_byte_identical_across_reruns() {
        let cfg = tiny_config();
        let d1 = tempfile::tempdir().unwrap();
        let d2 = tempfile::tempdir().unwrap();
        run_experiment(&cfg, d1.path(), None).unwrap();
        run_experiment(&cfg, d2.path(), None).unwrap();
        for label in ["train_only", "condo-oracle-r1"] {
            let a = fs::read(d1.path().join(label).join("summary.json")).unwrap();
            let b = fs::read(d2.path().join(label).join("summary.json")).unwrap();
            assert_eq!(a, b, "{label}");
        }
    }

    #[test]
    fn report_emission_is_deterministic_and_complete() {
        let cfg = tiny_config();
        let dir = tempfile::tempdir().unwrap();
        let docs = run_experiment(&cfg, dir.path(), None).unwrap();

        let written = emit_report(dir.path(), ReportFormat::Csv).unwrap();
        assert_eq!(written.len(), 2);
        let csv = fs::read_to_string(dir.path().join("report.csv")).unwrap();
        let n_scans = 3;
        assert_eq!(csv.lines().count(), 1 + docs.len() * n_scans);
        let first = fs::read(dir.path().join("report.csv")).unwrap();
        emit_report(dir.path(), ReportFormat::Csv).unwrap();
        assert_eq!(fs::read(dir.path().join("report.csv")).unwrap(), first);

        emit_report(dir.path(), ReportFormat::Json).unwrap();
        let body = fs::read_to_string(dir.path().join("report.json")).unwrap();
        let back: Vec<SummaryDoc> = serde_json::from_str(&body).unwrap();
        let mut sorted = docs.clone();
        sorted.sort_by(|a, b| a.run_label.cmp(&b.run_label));
        assert_eq!(back, sorted);
    }

    #[test]
    fn buffer_sweep_varies_capacity_not_strategy() {
        let cfg = tiny_config();
        let dir = tempfile::tempdir().unwrap();
        let docs = sweep_buffer(&cfg, dir.path(), None).unwrap();
        assert_eq!(docs.len(), 3);
        let capped = docs.iter().find(|d| d.run_label.ends_with("-buf0.5")).unwrap();
        // 96 unlabeled frames at fraction 0.5.
        assert_eq!(capped.params.replay_capacity, Capacity::Finite(48));
        assert_eq!(capped.strategy, docs[1].strategy);
        assert_eq!(docs[1].params.replay_capacity, Capacity::Unlimited);
    }

    #[test]
    fn teacher_sweep_reports_teacher_error() {
        let mut cfg = tiny_config();
        cfg.sweep.teachers = vec![
            TeacherConfig::GroundTruth,
            TeacherConfig::Oracle { sigma_t: 0.05, sigma_r_deg: 1.0 },
        ];
        let dir = tempfile::tempdir().unwrap();
        let docs = sweep_teacher(&cfg, dir.path(), None).unwrap();
        assert_eq!(docs.len(), 3);
        let gt = docs.iter().find(|d| d.run_label == "condo-ground_truth-r1-t0").unwrap();
        let te = gt.teacher_err.as_ref().unwrap();
        assert_eq!(te.median_pos_err_m, 0.0);
        let noisy = docs.iter().find(|d| d.run_label == "condo-oracle-r1-t1").unwrap();
        assert!(noisy.teacher_err.as_ref().unwrap().median_pos_err_m > 0.0);
        assert!(docs.iter().find(|d| d.run_label == "train_only").unwrap().teacher_err.is_none());
    }

    #[test]
    fn config_schema_is_strict_but_defaulted() {
        let json = r#"{
            "benchmark": {"preset": "condition_shift", "seed": 3},
            "strategies": [{"name": "train_only"}]
        }"#;
        let cfg = ExperimentConfig::from_json(json).unwrap();
        assert_eq!(cfg.run.batch_size, 64);
        assert_eq!(cfg.sweep.budget_rates, d_budget_rates());

        let bad = r#"{
            "benchmark": {"preset": "condition_shift", "seed": 3},
            "strateg1es": [{"name": "train_only"}]
        }"#;
        assert!(ExperimentConfig::from_json(bad).is_err());

        let bad_rate = r#"{
            "benchmark": {"preset": "condition_shift", "seed": 3},
            "sweep": {"budget_rates": [0.0]}
        }"#;
        assert!(ExperimentConfig::from_json(bad_rate).is_err());
    }

    #[test]
    fn duplicate_labels_are_rejected() {
        let cfg = ExperimentConfig {
            strategies: vec![Strategy::TrainOnly, Strategy::TrainOnly],
            ..tiny_config()
        };
        let dir = tempfile::tempdir().unwrap();
        assert!(run_experiment(&cfg, dir.path(), None).is_err());
    }
}
