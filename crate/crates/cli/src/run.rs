//! Executes resolved experiments and writes the artifact directory.
//!
//! Each seed owns `seed_<n>/` inside the experiment's output directory:
//!
//! ```text
//! metrics.jsonl      one step record per line
//! rewards.csv        step, per-reward batch-mean raw rewards
//! coefficients.csv   step, smoothed coefficients, fallback counter
//! heatmap.csv        first-batch advantage matrix (specialist structure)
//! manifest.json      resolved settings + seed + outcome; enough to re-run
//!                    the experiment bit-identically
//! ```

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;

use harmony_core::advantage::export_specialist_heatmap;
use harmony_core::diagnostics::{write_coefficient_curves, write_metrics, write_reward_curves};
use harmony_core::pipeline::{run_training, RunArtifacts};

use crate::config::{run_config, ExperimentSettings};

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    status: &'a str,
    seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
    initial_mean_rewards: Vec<f64>,
    final_mean_rewards: Vec<f64>,
    qp_solve_count: u64,
    pareto_fallback_used: u64,
    clamp_activation_count: u64,
    degenerate_qp_count: u64,
    mean_update_seconds: f64,
    settings: &'a ExperimentSettings,
}

fn write_manifest(
    dir: &Path,
    settings: &ExperimentSettings,
    seed: u64,
    outcome: &Result<RunArtifacts, harmony_core::Error>,
) -> Result<()> {
    let manifest = match outcome {
        Ok(artifacts) => Manifest {
            status: "ok",
            seed,
            error: None,
            initial_mean_rewards: artifacts.initial_eval.clone(),
            final_mean_rewards: artifacts.final_eval.clone(),
            qp_solve_count: artifacts.final_state.qp_solve_count,
            pareto_fallback_used: artifacts.final_state.pareto_fallback_used,
            clamp_activation_count: artifacts.final_state.clamp_activation_count,
            degenerate_qp_count: artifacts.final_state.degenerate_qp_count,
            mean_update_seconds: artifacts.mean_update_seconds,
            settings,
        },
        Err(e) => Manifest {
            status: "failed",
            seed,
            error: Some(e.to_string()),
            initial_mean_rewards: Vec::new(),
            final_mean_rewards: Vec::new(),
            qp_solve_count: 0,
            pareto_fallback_used: 0,
            clamp_activation_count: 0,
            degenerate_qp_count: 0,
            mean_update_seconds: 0.0,
            settings,
        },
    };
    let json = serde_json::to_string_pretty(&manifest)?;
    std::fs::write(dir.join("manifest.json"), json + "\n")?;
    Ok(())
}

/// Result of one seed's run.
pub struct SeedOutcome {
    pub seed: u64,
    pub dir: PathBuf,
    pub artifacts: RunArtifacts,
}

/// Runs one seed and writes its artifact directory. A mid-run failure still
/// produces a failure manifest before the error propagates.
pub fn run_seed(settings: &ExperimentSettings, out_dir: &Path, seed: u64) -> Result<SeedOutcome> {
    let dir = out_dir.join(format!("seed_{seed}"));
    std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    let config = run_config(settings, seed);
    let outcome = run_training(&config);
    write_manifest(&dir, settings, seed, &outcome)?;
    let artifacts = outcome.with_context(|| format!("seed {seed} failed mid-run"))?;

    write_metrics(&artifacts.step_records, &dir.join("metrics.jsonl"))?;
    write_reward_curves(&artifacts.reward_curve, &dir.join("rewards.csv"))?;
    write_coefficient_curves(&artifacts.coefficient_curve, &dir.join("coefficients.csv"))?;
    if let Some(matrix) = &artifacts.first_advantages {
        export_specialist_heatmap(matrix, &dir.join("heatmap.csv"))?;
    }
    Ok(SeedOutcome {
        seed,
        dir,
        artifacts,
    })
}

/// Runs every seed of the experiment sequentially.
pub fn run_experiment(settings: &ExperimentSettings, out_dir: &Path) -> Result<Vec<SeedOutcome>> {
    std::fs::create_dir_all(out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
    settings
        .seeds
        .iter()
        .map(|&seed| run_seed(settings, out_dir, seed))
        .collect()
}

/// One line per reward: mean delta across seeds.
pub fn summarize(outcomes: &[SeedOutcome]) -> Vec<f64> {
    if outcomes.is_empty() {
        return Vec::new();
    }
    let k = outcomes[0].artifacts.initial_eval.len();
    let mut deltas = vec![0.0; k];
    for outcome in outcomes {
        for i in 0..k {
            deltas[i] += (outcome.artifacts.final_eval[i] - outcome.artifacts.initial_eval[i])
                / outcomes.len() as f64;
        }
    }
    deltas
}
