//! Experiment CLI: run configs, compare completed runs, sweep parameters,
//! re-evaluate checkpoints, and export datasets.
//!
//! Every verb that writes files honours `COCLR_OUT` as an override of the
//! config's output directory — that is the only environment variable the
//! tool reads.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use coclr_core::config::{self, ExperimentConfig};
use coclr_core::numerics::Rng;
use coclr_core::runner::{self, evaluate_checkpoint, run_experiment, run_sweep, RunOptions};
use coclr_core::summary::{compare_runs, load_run_summary, render_comparison};
use coclr_core::synthdata::generate;

#[derive(Parser)]
#[command(
    name = "coclr",
    about = "Two-view contrastive co-training experiments",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Options shared by the verbs that execute training.
#[derive(Args)]
struct ExecArgs {
    /// Path to an experiment config file.
    #[arg(long)]
    config: PathBuf,
    /// Seed override: a bare integer N runs seeds 0..N; a comma-separated
    /// list (e.g. `0,3,7`) runs exactly those seeds.
    #[arg(long)]
    seeds: Option<String>,
    /// Output directory override (also overridable via COCLR_OUT).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Write t=0.000 on every metric record so identical configs produce
    /// byte-identical metrics files.
    #[arg(long)]
    normalize_timestamps: bool,
    /// Emit SVG plots of training curves per seed.
    #[arg(long)]
    plots: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Execute every seed of a config and write metrics, checkpoints, and a
    /// summary table.
    Run(ExecArgs),
    /// Compare two completed runs: per-metric medians, per-seed deltas, and
    /// a sign test.
    Compare {
        /// Directory that contains the run subdirectories.
        #[arg(long)]
        dir: PathBuf,
        /// Name of the baseline run (its subdirectory under --dir).
        #[arg(long)]
        baseline: String,
        /// Name of the candidate run.
        #[arg(long)]
        candidate: String,
    },
    /// Run one experiment per value of a swept parameter.
    Sweep {
        #[command(flatten)]
        exec: ExecArgs,
        /// Config key to sweep, e.g. `plan.k`.
        #[arg(long)]
        param: String,
        /// Comma-separated values, e.g. `1,5,50`.
        #[arg(long)]
        values: String,
    },
    /// Re-evaluate a saved checkpoint pair against its config's dataset.
    Eval {
        /// Path to the config the checkpoint was trained under.
        #[arg(long)]
        config: PathBuf,
        /// A seed directory produced by `run` (e.g. runs/bench/seed0).
        #[arg(long)]
        checkpoint: PathBuf,
        /// Which checkpoint pair to load: `final` or `stage<I>`.
        #[arg(long, default_value = "final")]
        label: String,
    },
    /// Generate a config's dataset for one seed and write it as plain text.
    ExportDataset {
        #[arg(long)]
        config: PathBuf,
        /// Dataset seed (the run for seed S uses this same value S).
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output file path.
        #[arg(long)]
        out: PathBuf,
    },
}

fn parse_seeds(text: &str) -> Result<Vec<u64>, String> {
    let parse_one = |s: &str| -> Result<u64, String> {
        s.trim()
            .parse::<u64>()
            .map_err(|_| format!("--seeds: `{s}` is not a non-negative integer"))
    };
    if text.contains(',') {
        text.split(',').map(parse_one).collect()
    } else {
        let n = parse_one(text)?;
        if n == 0 {
            return Err("--seeds: need at least one seed".into());
        }
        Ok((0..n).collect())
    }
}

/// Load a config and apply the CLI/environment overrides. Precedence for the
/// output directory: --out flag, then COCLR_OUT, then the config's value.
fn load_config(exec: &ExecArgs) -> Result<ExperimentConfig, String> {
    let mut config = config::load(&exec.config).map_err(|e| e.to_string())?;
    if let Some(seeds) = &exec.seeds {
        config.seeds = parse_seeds(seeds)?;
    }
    if let Some(out) = &exec.out {
        config.out = out.clone();
    } else if let Ok(out) = std::env::var("COCLR_OUT") {
        if !out.is_empty() {
            config.out = PathBuf::from(out);
        }
    }
    Ok(config)
}

fn run_command(command: Command) -> Result<(), String> {
    match command {
        Command::Run(exec) => {
            let config = load_config(&exec)?;
            let options = RunOptions {
                normalize_timestamps: exec.normalize_timestamps,
                plots: exec.plots,
            };
            let report = run_experiment(&config, options).map_err(|e| e.to_string())?;
            print!("{}", report.table);
            println!("outputs in {}", report.dir.display());
            Ok(())
        }
        Command::Compare {
            dir,
            baseline,
            candidate,
        } => {
            let base = load_run_summary(&dir.join(&baseline)).map_err(|e| e.to_string())?;
            let cand = load_run_summary(&dir.join(&candidate)).map_err(|e| e.to_string())?;
            let comparisons = compare_runs(&base, &cand).map_err(|e| e.to_string())?;
            print!("{}", render_comparison(&baseline, &candidate, &comparisons));
            Ok(())
        }
        Command::Sweep {
            exec,
            param,
            values,
        } => {
            let config = load_config(&exec)?;
            let options = RunOptions {
                normalize_timestamps: exec.normalize_timestamps,
                plots: exec.plots,
            };
            let values: Vec<String> = values
                .split(',')
                .map(|v| v.trim().to_string())
                .filter(|v| !v.is_empty())
                .collect();
            let (_, table) =
                run_sweep(&config, &param, &values, options).map_err(|e| e.to_string())?;
            print!("{table}");
            Ok(())
        }
        Command::Eval {
            config,
            checkpoint,
            label,
        } => {
            let config = config::load(&config).map_err(|e| e.to_string())?;
            let finals =
                evaluate_checkpoint(&config, &checkpoint, &label).map_err(|e| e.to_string())?;
            for (name, value) in finals {
                println!("{name} = {value}");
            }
            Ok(())
        }
        Command::ExportDataset { config, seed, out } => {
            let config = config::load(&config).map_err(|e| e.to_string())?;
            let data = generate(
                &config.dataset,
                &mut Rng::new(runner::DATASET_SEED_OFFSET + seed),
            )
            .map_err(|e| e.to_string())?;
            data.export(&out).map_err(|e| e.to_string())?;
            println!(
                "wrote {} samples ({} train / {} test) to {}",
                data.labels.len(),
                data.train_idx.len(),
                data.test_idx.len(),
                out.display()
            );
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run_command(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(message) => {
            eprintln!("error: {message}");
            ExitCode::FAILURE
        }
    }
}
