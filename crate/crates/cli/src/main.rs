//! Config-driven experiment runner for the multi-reward balancing engine.

mod checks;
mod config;
mod run;
mod sweep;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand};

use config::{apply_output_root, load_raw, resolve, RawExperiment};
use sweep::SweepAxis;

#[derive(Parser)]
#[command(
    name = "harmony",
    about = "Multi-reward balancing experiments on a toy flow policy",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment across its seeds and write artifact directories.
    Run {
        /// Experiment TOML; defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Preset name (overrides the config file's preset).
        #[arg(long)]
        preset: Option<String>,
        /// Output directory (overrides the config file).
        #[arg(long)]
        output: Option<PathBuf>,
        /// Comma-separated seeds (overrides the config file).
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
        /// Training steps per seed (overrides the config file).
        #[arg(long)]
        steps: Option<u64>,
    },
    /// Sweep the amortization interval or the EMA decay.
    Sweep {
        #[arg(long, value_enum)]
        axis: SweepAxis,
        /// Grid values; each axis has its standard grid by default.
        #[arg(long, value_delimiter = ',')]
        values: Option<Vec<f64>>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        preset: Option<String>,
        #[arg(long)]
        output: Option<PathBuf>,
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
        #[arg(long)]
        steps: Option<u64>,
    },
    /// Verify the single-backward equivalence on random draws.
    CheckProp1 {
        #[arg(long, default_value_t = 100)]
        trials: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
    /// Verify the min-norm solver against grid search, the closed form, and
    /// the KKT certificate.
    CheckQp {
        #[arg(long, default_value_t = 200)]
        instances: usize,
        #[arg(long, default_value_t = 11)]
        seed: u64,
    },
    /// Verify multi-worker gradient synchronization equivalence.
    DdpSim {
        #[arg(long, value_delimiter = ',', default_values_t = vec![1usize, 2, 4])]
        world_sizes: Vec<usize>,
        #[arg(long, default_value_t = 13)]
        seed: u64,
    },
}

fn load_settings(
    config_path: Option<PathBuf>,
    preset: Option<String>,
    output: Option<PathBuf>,
    seeds: Option<Vec<u64>>,
    steps: Option<u64>,
) -> Result<config::ExperimentSettings> {
    let mut raw = match config_path {
        Some(path) => load_raw(&path)?,
        None => RawExperiment::default(),
    };
    if preset.is_some() {
        raw.preset = preset;
    }
    if output.is_some() {
        raw.output_dir = output;
    }
    if seeds.is_some() {
        raw.seeds = seeds;
    }
    if steps.is_some() {
        raw.steps = steps;
    }
    resolve(raw)
}

fn execute() -> Result<()> {
    match Cli::parse().command {
        Command::Run {
            config,
            preset,
            output,
            seeds,
            steps,
        } => {
            let settings = load_settings(config, preset, output, seeds, steps)?;
            let out_dir = apply_output_root(&settings.output_dir);
            let outcomes = run::run_experiment(&settings, &out_dir)?;
            for outcome in &outcomes {
                let a = &outcome.artifacts;
                println!(
                    "seed {}: rewards {:?} -> {:?} ({} solves) at {}",
                    outcome.seed,
                    a.initial_eval
                        .iter()
                        .map(|x| (x * 1000.0).round() / 1000.0)
                        .collect::<Vec<_>>(),
                    a.final_eval
                        .iter()
                        .map(|x| (x * 1000.0).round() / 1000.0)
                        .collect::<Vec<_>>(),
                    a.final_state.qp_solve_count,
                    outcome.dir.display()
                );
            }
            let deltas = run::summarize(&outcomes);
            println!(
                "mean reward deltas across seeds: {:?}",
                deltas
                    .iter()
                    .map(|x| (x * 10000.0).round() / 10000.0)
                    .collect::<Vec<_>>()
            );
            Ok(())
        }
        Command::Sweep {
            axis,
            values,
            config,
            preset,
            output,
            seeds,
            steps,
        } => {
            let settings = load_settings(config, preset, output, seeds, steps)?;
            let out_dir = apply_output_root(&settings.output_dir);
            let values = values.unwrap_or_else(|| axis.default_values());
            let cells = sweep::run_sweep(&settings, axis, &values, &out_dir)?;
            println!("{} sweep ({} cells):", axis.label(), cells.len());
            for cell in &cells {
                println!(
                    "  {} = {:>5}: final rewards {:?}, conflict rate {:.3}",
                    axis.label(),
                    cell.value,
                    cell.final_rewards
                        .iter()
                        .map(|x| (x * 1000.0).round() / 1000.0)
                        .collect::<Vec<_>>(),
                    cell.conflict_rate
                );
            }
            println!(
                "summary written to {}",
                out_dir.join("summary.csv").display()
            );
            Ok(())
        }
        Command::CheckProp1 { trials, seed } => checks::check_prop1(trials, seed),
        Command::CheckQp { instances, seed } => checks::check_qp(instances, seed),
        Command::DdpSim { world_sizes, seed } => checks::check_ddp(&world_sizes, seed),
    }
}

fn main() -> ExitCode {
    match execute() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
