//! Benchmark harness CLI.
//!
//! `run` executes all replicates of one experiment config and persists
//! traces and summaries; `bench` sweeps a mode matrix around a base
//! config; `report` renders Markdown tables from persisted summaries.

use clap::{Args, Parser, Subcommand};
use rollout_bo::experiment::{
    self, persist_run, render_report, run_replicates, ExperimentConfig, ReportEntry,
    ResolvedConfig, RunSummary,
};
use rollout_bo::{HorizonMode, ObjectiveKind};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "rollout-bo",
    about = "Non-myopic Bayesian optimization benchmarks",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonArgs {
    /// TOML experiment config; defaults to Branin-Hoo with standard
    /// settings when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override the config's base seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the config's replicate count.
    #[arg(long)]
    replicates: Option<usize>,
    /// Override the config's discount factor.
    #[arg(long)]
    alpha: Option<f64>,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment config and persist per-replicate traces plus a
    /// summary.
    Run {
        #[command(flatten)]
        common: CommonArgs,
        /// Override the config's lookahead mode
        /// (adaptive | fixed:<h> | greedy).
        #[arg(long)]
        mode: Option<HorizonMode>,
        /// Output directory for config.json, replicate_<i>.csv,
        /// replicate_<i>.json, and summary.json.
        #[arg(long, default_value = "runs/latest")]
        out: PathBuf,
    },
    /// Run a matrix of lookahead modes around one base config.
    Bench {
        #[command(flatten)]
        common: CommonArgs,
        /// Restrict the matrix to a single mode.
        #[arg(long)]
        mode: Option<HorizonMode>,
        /// Output directory; each run lands in its own subdirectory.
        #[arg(long, default_value = "runs/bench")]
        out: PathBuf,
    },
    /// Render Markdown tables from persisted run summaries.
    Report {
        /// Directory containing summary.json, or subdirectories that do.
        #[arg(long, default_value = "runs/bench")]
        out: PathBuf,
    },
}

fn load_config(common: &CommonArgs) -> Result<ExperimentConfig, rollout_bo::Error> {
    let mut config = match &common.config {
        Some(path) => ExperimentConfig::from_toml_file(path)?,
        None => ExperimentConfig::new(ObjectiveKind::BraninHoo),
    };
    if let Some(seed) = common.seed {
        config.base_seed = seed;
    }
    if let Some(replicates) = common.replicates {
        config.replicates = replicates;
    }
    if let Some(alpha) = common.alpha {
        config.alpha = alpha;
    }
    config.validate()?;
    Ok(config)
}

fn run_label(config: &ExperimentConfig) -> String {
    format!(
        "{} {} α={}",
        serde_json::to_value(config.objective)
            .ok()
            .and_then(|v| v.as_str().map(str::to_owned))
            .unwrap_or_else(|| "objective".into()),
        config.mode,
        config.alpha
    )
}

fn execute_run(config: &ExperimentConfig, out: &Path) -> Result<RunSummary, rollout_bo::Error> {
    let (results, summary) = run_replicates(config)?;
    persist_run(out, config, &results, &summary)?;
    println!(
        "{}: {} replicates, mean gap {:.3}, median gap {:.3} -> {}",
        run_label(config),
        summary.replicates,
        summary.mean_gap,
        summary.median_gap,
        out.display()
    );
    Ok(summary)
}

fn bench_modes(config: &ExperimentConfig, only: Option<HorizonMode>) -> Vec<HorizonMode> {
    match only {
        Some(mode) => vec![mode],
        None => {
            let cap = config.h_bar;
            let mut modes = vec![HorizonMode::Greedy, HorizonMode::Adaptive];
            for h in [2, cap] {
                if h >= 2 && h <= cap && !modes.contains(&HorizonMode::Fixed(h)) {
                    modes.push(HorizonMode::Fixed(h));
                }
            }
            modes
        }
    }
}

fn mode_slug(mode: HorizonMode) -> String {
    mode.to_string().replace(':', "_")
}

fn run_bench(
    base: &ExperimentConfig,
    only: Option<HorizonMode>,
    out: &Path,
) -> Result<(), rollout_bo::Error> {
    let mut entries = Vec::new();
    for mode in bench_modes(base, only) {
        let mut config = base.clone();
        config.mode = mode;
        config.validate()?;
        let dir = out.join(format!(
            "{}_{}_a{}",
            serde_json::to_value(config.objective)
                .ok()
                .and_then(|v| v.as_str().map(str::to_owned))
                .unwrap_or_else(|| "objective".into()),
            mode_slug(mode),
            config.alpha
        ));
        let summary = execute_run(&config, &dir)?;
        entries.push(ReportEntry {
            label: run_label(&config),
            summary,
        });
    }
    let report = render_report(&entries);
    std::fs::write(out.join("report.md"), &report)?;
    println!("\n{report}");
    Ok(())
}

fn label_from_dir(dir: &Path) -> String {
    match experiment::read_json::<ResolvedConfig>(&dir.join("config.json")) {
        Ok(config) => format!(
            "{} {} α={}",
            serde_json::to_value(config.objective)
                .ok()
                .and_then(|v| v.as_str().map(str::to_owned))
                .unwrap_or_else(|| "objective".into()),
            config.mode,
            config.alpha
        ),
        Err(_) => dir
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| dir.display().to_string()),
    }
}

fn run_report(out: &Path) -> Result<(), rollout_bo::Error> {
    let mut entries = Vec::new();
    let mut dirs = vec![out.to_path_buf()];
    if out.is_dir() {
        let mut subdirs: Vec<PathBuf> = std::fs::read_dir(out)?
            .filter_map(|e| e.ok())
            .map(|e| e.path())
            .filter(|p| p.is_dir())
            .collect();
        subdirs.sort();
        dirs.extend(subdirs);
    }
    for dir in dirs {
        let summary_path = dir.join("summary.json");
        if !summary_path.is_file() {
            continue;
        }
        let summary: RunSummary = experiment::read_json(&summary_path)?;
        entries.push(ReportEntry {
            label: label_from_dir(&dir),
            summary,
        });
    }
    if entries.is_empty() {
        return Err(rollout_bo::Error::InvalidInput(format!(
            "no summary.json found under {}",
            out.display()
        )));
    }
    let report = render_report(&entries);
    std::fs::write(out.join("report.md"), &report)?;
    println!("{report}");
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Run { common, mode, out } => load_config(&common).and_then(|mut config| {
            if let Some(mode) = mode {
                config.mode = mode;
                config.validate()?;
            }
            execute_run(&config, &out).map(|_| ())
        }),
        Command::Bench { common, mode, out } => {
            load_config(&common).and_then(|config| run_bench(&config, mode, &out))
        }
        Command::Report { out } => run_report(&out),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
