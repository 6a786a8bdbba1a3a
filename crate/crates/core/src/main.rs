//! Experiment CLI: run task sequences, extract transfer metrics, export
//! plot data, or train a single scratch adversary for debugging.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use safeval::config::{ExperimentConfig, Preset};
use safeval::metrics::MetricConfig;
use safeval::runner;

#[derive(Parser)]
#[command(
    name = "safeval",
    about = "Iterative safety validation: DQN adversaries with transfer across related systems",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// Path to the experiment config (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Override the output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Override the master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Max concurrent training runs.
    #[arg(long)]
    jobs: Option<usize>,
    /// Scale preset: "paper" or "desk".
    #[arg(long)]
    preset: Option<Preset>,
}

impl ConfigArgs {
    fn load(&self) -> safeval::Result<ExperimentConfig> {
        let mut cfg = ExperimentConfig::load(&self.config)?;
        cfg.apply_env_overrides(std::env::vars())?;
        if let Some(out) = &self.out {
            cfg.out_dir = Some(out.clone());
        }
        if let Some(seed) = self.seed {
            cfg.master_seed = seed;
        }
        if let Some(jobs) = self.jobs {
            cfg.jobs = jobs;
        }
        if let Some(preset) = self.preset {
            cfg.preset = preset;
        }
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Build the task sequence and solve every task with the requested
    /// architectures. Completed runs are skipped on rerun.
    RunSequence(ConfigArgs),
    /// Compute jumpstart / final-improvement / step-ratio reports for a
    /// finished run directory.
    Metrics {
        /// Run directory produced by run-sequence.
        #[arg(long)]
        run: PathBuf,
        /// Moving-average width applied to curves before metrics.
        #[arg(long, default_value_t = 20)]
        smoothing: usize,
        /// Window width around the maximum for near-optimal performance.
        #[arg(long, default_value_t = 100)]
        window: usize,
    },
    /// Write per-metric tables (task index vs value per architecture).
    PlotData {
        #[arg(long)]
        run: PathBuf,
    },
    /// Train one scratch adversary on the configured environment.
    TrainScratch {
        #[command(flatten)]
        config: ConfigArgs,
        /// Where to put the run output (defaults to <out_dir>/train-scratch).
        #[arg(long)]
        run_out: Option<PathBuf>,
    },
}

fn run() -> safeval::Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::RunSequence(args) => {
            let resolved = args.load()?.resolve()?;
            eprintln!(
                "running {} ({:?}/{:?}), {} tasks, out {}",
                resolved.name,
                resolved.scenario,
                resolved.setting,
                resolved.num_tasks,
                resolved.out_dir.display()
            );
            let record = runner::cmd_run_sequence(&resolved)?;
            let trained = record.runs.iter().filter(|r| !r.skipped).count();
            let skipped = record.runs.iter().filter(|r| r.skipped).count();
            let failed = record.runs.iter().filter(|r| r.error.is_some()).count();
            for r in record.runs.iter().filter(|r| r.error.is_some()) {
                eprintln!(
                    "run task{} {} failed: {}",
                    r.task_index,
                    r.architecture,
                    r.error.as_deref().unwrap_or("")
                );
            }
            println!(
                "{} runs ({trained} trained, {skipped} resumed, {failed} failed) in {}",
                record.runs.len(),
                resolved.out_dir.display()
            );
            if failed > 0 {
                return Err(safeval::Error::Internal(format!("{failed} runs failed")));
            }
            Ok(())
        }
        Command::Metrics {
            run,
            smoothing,
            window,
        } => {
            let cfg = MetricConfig {
                smoothing_width: smoothing,
                near_optimal_window: window,
            };
            let out = runner::cmd_metrics(&run, &cfg)?;
            for w in &out.warnings {
                eprintln!("warning: {w}");
            }
            println!(
                "{} reports written under {} (aggregate in metrics/aggregate.csv)",
                out.reports.len(),
                run.display()
            );
            Ok(())
        }
        Command::PlotData { run } => {
            let files = runner::cmd_plot_data(&run)?;
            for f in files {
                println!("{}", f.display());
            }
            Ok(())
        }
        Command::TrainScratch { config, run_out } => {
            let resolved = config.load()?.resolve()?;
            let out = run_out.unwrap_or_else(|| resolved.out_dir.join("train-scratch"));
            let dir = runner::cmd_train_scratch(&resolved, &out)?;
            println!("scratch run complete: {}", dir.display());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
