//! `condo`: build benchmarks, run strategy experiments and sweeps, and
//! emit cross-run reports.
//!
//! Exit codes: 0 success, 2 bad configuration or usage, 3 runtime failure.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use condo_core::harness::{
    emit_report, run_experiment, run_sweep, summary_table_csv, ExperimentConfig, ReportFormat,
    SweepAxis,
};
use condo_core::world::{build_benchmark, Benchmark, BenchmarkConfig};

#[derive(Parser)]
#[command(name = "condo", version, about = "Continual pose-regression experiment runner")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Build the benchmark described by a config and write benchmark.json.
    Gen {
        /// Experiment config, or a bare benchmark config.
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run every configured strategy plus the train-only baseline.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Output directory; defaults to out_dir from the config.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Override both the benchmark and run seeds.
        #[arg(long)]
        seed: Option<u64>,
        /// Worker threads for sub-runs.
        #[arg(long)]
        parallel: Option<usize>,
    },
    /// Run a one-axis sweep around the configured setup.
    Sweep {
        #[arg(long, value_enum)]
        axis: Axis,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        parallel: Option<usize>,
    },
    /// Assemble cross-run tables from finished run directories.
    Report {
        /// Directory holding the per-run subdirectories.
        #[arg(long)]
        run: PathBuf,
        #[arg(long, value_enum, default_value_t = Format::Csv)]
        format: Format,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Axis {
    Budget,
    Buffer,
    Teacher,
}

impl From<Axis> for SweepAxis {
    fn from(a: Axis) -> SweepAxis {
        match a {
            Axis::Budget => SweepAxis::Budget,
            Axis::Buffer => SweepAxis::Buffer,
            Axis::Teacher => SweepAxis::Teacher,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Json,
}

impl From<Format> for ReportFormat {
    fn from(f: Format) -> ReportFormat {
        match f {
            Format::Csv => ReportFormat::Csv,
            Format::Json => ReportFormat::Json,
        }
    }
}

enum CliError {
    /// Unreadable, unparsable, or invalid configuration.
    Config(String),
    /// A sub-run or artifact write failed.
    Runtime(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Runtime(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Config(m) | CliError::Runtime(m) => m,
        }
    }
}

fn load_config(path: &Path) -> Result<ExperimentConfig, CliError> {
    let body = fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    ExperimentConfig::from_json(&body)
        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

/// gen accepts either a full experiment config or a bare benchmark config.
fn load_benchmark_config(path: &Path) -> Result<BenchmarkConfig, CliError> {
    let body = fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    if let Ok(cfg) = ExperimentConfig::from_json(&body) {
        return Ok(cfg.benchmark);
    }
    serde_json::from_str(&body).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

/// Build eagerly so an infeasible benchmark is reported as a config error,
/// not a runtime failure mid-experiment.
fn checked_benchmark(cfg: &BenchmarkConfig) -> Result<Benchmark, CliError> {
    build_benchmark(cfg).map_err(|e| CliError::Config(format!("benchmark config: {e}")))
}

fn resolve_out(flag: Option<PathBuf>, cfg: &ExperimentConfig) -> Result<PathBuf, CliError> {
    flag.or_else(|| cfg.out_dir.as_ref().map(PathBuf::from)).ok_or_else(|| {
        CliError::Config("no output directory: pass --out or set out_dir in the config".into())
    })
}

fn apply_seed(cfg: &mut ExperimentConfig, seed: Option<u64>) {
    if let Some(s) = seed {
        cfg.benchmark.seed = s;
        cfg.run.seed = s;
    }
}

fn run(cmd: Cmd) -> Result<(), CliError> {
    match cmd {
        Cmd::Gen { config, out } => {
            let bcfg = load_benchmark_config(&config)?;
            let bench = checked_benchmark(&bcfg)?;
            fs::create_dir_all(&out)
                .map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", out.display())))?;
            let path = out.join("benchmark.json");
            fs::write(&path, bench.to_json())
                .map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display())))?;
            println!(
                "wrote {} ({} scenes, {} training scans, {} events)",
                path.display(),
                bench.scenes.len(),
                bench.initial_training.len(),
                bench.events.len()
            );
            Ok(())
        }
        Cmd::Run { config, out, seed, parallel } => {
            let mut cfg = load_config(&config)?;
            apply_seed(&mut cfg, seed);
            let out = resolve_out(out, &cfg)?;
            checked_benchmark(&cfg.benchmark)?;
            let docs = run_experiment(&cfg, &out, parallel)
                .map_err(|e| CliError::Runtime(e.to_string()))?;
            print!("{}", summary_table_csv(&docs));
            println!("wrote {} runs under {}", docs.len(), out.display());
            Ok(())
        }
        Cmd::Sweep { axis, config, out, seed, parallel } => {
            let mut cfg = load_config(&config)?;
            apply_seed(&mut cfg, seed);
            let out = resolve_out(out, &cfg)?;
            checked_benchmark(&cfg.benchmark)?;
            let docs = run_sweep(axis.into(), &cfg, &out, parallel)
                .map_err(|e| CliError::Runtime(e.to_string()))?;
            print!("{}", summary_table_csv(&docs));
            println!("wrote {} runs under {}", docs.len(), out.display());
            Ok(())
        }
        Cmd::Report { run, format } => {
            let written =
                emit_report(&run, format.into()).map_err(|e| CliError::Runtime(e.to_string()))?;
            for p in written {
                println!("wrote {}", p.display());
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    // clap itself exits with 2 on usage errors, matching the config code.
    let cli = Cli::parse();
    match run(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.code())
        }
    }
}
