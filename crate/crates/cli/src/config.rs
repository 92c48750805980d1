//! Experiment configuration: TOML files, presets, and resolution into
//! per-seed run configs.
//!
//! Unknown keys are errors, not warnings; a misspelled ablation switch must
//! fail loudly instead of silently running the wrong experiment.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use harmony_core::advantage::StatsMode;
use harmony_core::harmonizer::{HarmonizerConfig, HarmonizerMode};
use harmony_core::nft::{ModelConfig, NftLossConfig};
use harmony_core::pipeline::RunConfig;
use harmony_core::simplex_qp::SimplexWeights;
use harmony_core::toy_env::Scenario;

/// Raw experiment file: everything optional, a preset supplies the rest.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawExperiment {
    pub preset: Option<String>,
    /// Path to a scenario TOML; the built-in conflicting scenario otherwise.
    pub scenario: Option<PathBuf>,
    pub steps: Option<u64>,
    pub group_size: Option<usize>,
    pub timesteps_per_sample: Option<usize>,
    pub seeds: Option<Vec<u64>>,
    pub output_dir: Option<PathBuf>,
    pub eval_samples_per_prompt: Option<usize>,
    pub advantage_epsilon: Option<f64>,
    pub stats_mode: Option<StatsMode>,
    pub condition_anchors: Option<Vec<Vec<f64>>>,
    pub init_contraction: Option<f64>,
    pub model: Option<ModelConfig>,
    pub harmonizer: Option<HarmonizerConfig>,
    pub nft: Option<NftLossConfig>,
}

/// Fully resolved experiment: the manifest serializes exactly this.
#[derive(Debug, Clone, Serialize)]
pub struct ExperimentSettings {
    pub preset: Option<String>,
    pub scenario: Scenario,
    pub steps: u64,
    pub group_size: usize,
    pub timesteps_per_sample: usize,
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
    pub eval_samples_per_prompt: usize,
    pub advantage_epsilon: f64,
    pub stats_mode: StatsMode,
    pub condition_anchors: Vec<Vec<f64>>,
    pub init_contraction: f64,
    pub model: ModelConfig,
    pub harmonizer: HarmonizerConfig,
    pub nft: NftLossConfig,
}

impl Default for ExperimentSettings {
    fn default() -> Self {
        let template = RunConfig::new(Scenario::default_conflicting(), 0);
        Self {
            preset: None,
            scenario: template.scenario,
            steps: template.steps,
            group_size: template.group_size,
            timesteps_per_sample: template.timesteps_per_sample,
            seeds: vec![1, 2, 3, 4, 5],
            output_dir: PathBuf::from("runs/experiment"),
            eval_samples_per_prompt: template.eval_samples_per_prompt,
            advantage_epsilon: template.advantage_epsilon,
            stats_mode: template.stats_mode,
            condition_anchors: template.condition_anchors,
            init_contraction: template.init_contraction,
            model: template.model,
            harmonizer: template.harmonizer,
            nft: template.nft,
        }
    }
}

/// Preset names shipped with the runner.
pub const PRESETS: &[&str] = &[
    "harmonized_default",
    "weighted_sum",
    "fixed_alpha_uniform",
    "per_step_solve",
    "no_normalization",
    "uniform_consolidation",
];

fn apply_preset(settings: &mut ExperimentSettings, name: &str) -> Result<()> {
    settings.preset = Some(name.to_string());
    match name {
        // amortized balancing with the defaults: N = 10, decay 0.7
        "harmonized_default" => {
            settings.harmonizer.mode = HarmonizerMode::Amortized;
            settings.harmonizer.amortization_interval = 10;
            settings.harmonizer.ema_decay = 0.7;
        }
        // scalarize rewards, standardize the sum, single pass
        "weighted_sum" => {
            settings.harmonizer.mode = HarmonizerMode::WeightedSum;
        }
        // keep the balancing machinery but pin uniform coefficients
        "fixed_alpha_uniform" => {
            settings.harmonizer.mode = HarmonizerMode::FixedAlpha;
            settings.harmonizer.fixed_alpha = None; // uniform, resolved per K
        }
        // re-estimate coefficients at every step, no smoothing
        "per_step_solve" => {
            settings.harmonizer.mode = HarmonizerMode::FullEveryStep;
            settings.harmonizer.ema_decay = 0.0;
        }
        // feed raw inner products to the solve
        "no_normalization" => {
            settings.harmonizer.mode = HarmonizerMode::Amortized;
            settings.harmonizer.amortization_interval = 10;
            settings.harmonizer.ema_decay = 0.7;
            settings.harmonizer.normalize_gradients = false;
        }
        // dynamic coefficients, then a uniform final stage
        "uniform_consolidation" => {
            settings.harmonizer.mode = HarmonizerMode::Amortized;
            settings.harmonizer.amortization_interval = 10;
            settings.harmonizer.ema_decay = 0.7;
            settings.harmonizer.uniform_after_step = Some(settings.steps * 4 / 5);
        }
        other => bail!(
            "unknown preset `{other}`; available: {}",
            PRESETS.join(", ")
        ),
    }
    Ok(())
}

/// Loads a raw experiment file, reporting the failing key path on error.
pub fn load_raw(path: &Path) -> Result<RawExperiment> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading config {}", path.display()))?;
    toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
}

/// Resolves preset and overrides into concrete settings.
pub fn resolve(raw: RawExperiment) -> Result<ExperimentSettings> {
    let mut settings = ExperimentSettings::default();
    if let Some(name) = &raw.preset {
        apply_preset(&mut settings, name)?;
    }
    if let Some(path) = &raw.scenario {
        settings.scenario =
            Scenario::load(path).with_context(|| format!("loading scenario {}", path.display()))?;
    }
    if let Some(v) = raw.steps {
        settings.steps = v;
        // keep the consolidation schedule proportional when steps change
        if settings.preset.as_deref() == Some("uniform_consolidation") {
            settings.harmonizer.uniform_after_step = Some(v * 4 / 5);
        }
    }
    if let Some(v) = raw.group_size {
        settings.group_size = v;
    }
    if let Some(v) = raw.timesteps_per_sample {
        settings.timesteps_per_sample = v;
    }
    if let Some(v) = raw.seeds {
        settings.seeds = v;
    }
    if let Some(v) = raw.output_dir {
        settings.output_dir = v;
    }
    if let Some(v) = raw.eval_samples_per_prompt {
        settings.eval_samples_per_prompt = v;
    }
    if let Some(v) = raw.advantage_epsilon {
        settings.advantage_epsilon = v;
    }
    if let Some(v) = raw.stats_mode {
        settings.stats_mode = v;
    }
    if let Some(v) = raw.init_contraction {
        settings.init_contraction = v;
    }
    if let Some(v) = raw.model {
        // a different condition count regenerates the default mode layout
        settings.condition_anchors = RunConfig::default_anchors(v.num_conditions);
        settings.model = v;
    }
    if let Some(v) = raw.condition_anchors {
        settings.condition_anchors = v;
    }
    if let Some(v) = raw.harmonizer {
        settings.harmonizer = v;
    }
    if let Some(v) = raw.nft {
        settings.nft = v;
    }
    if settings.seeds.is_empty() {
        bail!("config error at `seeds`: at least one seed is required");
    }

    // uniform coefficients resolve against the scenario's reward count
    if settings.harmonizer.mode == HarmonizerMode::FixedAlpha
        && settings.harmonizer.fixed_alpha.is_none()
    {
        settings.harmonizer.fixed_alpha =
            Some(SimplexWeights::uniform(settings.scenario.num_rewards()));
    }

    // fail before any run starts, with the offending field named
    run_config(&settings, settings.seeds[0])
        .validate()
        .map_err(|e| anyhow::anyhow!("config error: {e}"))?;
    Ok(settings)
}

/// Per-seed run config for resolved settings.
pub fn run_config(settings: &ExperimentSettings, seed: u64) -> RunConfig {
    let mut config = RunConfig::new(settings.scenario.clone(), seed);
    config.model = settings.model.clone();
    config.harmonizer = settings.harmonizer.clone();
    config.nft = settings.nft;
    config.steps = settings.steps;
    config.group_size = settings.group_size;
    config.timesteps_per_sample = settings.timesteps_per_sample;
    config.stats_mode = settings.stats_mode;
    config.advantage_epsilon = settings.advantage_epsilon;
    config.eval_samples_per_prompt = settings.eval_samples_per_prompt;
    config.condition_anchors = settings.condition_anchors.clone();
    config.init_contraction = settings.init_contraction;
    config
}

/// Applies the output-root environment override.
pub fn apply_output_root(dir: &Path) -> PathBuf {
    match std::env::var_os("HARMONY_OUTPUT_ROOT") {
        Some(root) if dir.is_relative() => PathBuf::from(root).join(dir),
        _ => dir.to_path_buf(),
    }
}

/// Worker-thread count for sweeps (defaults to 1).
pub fn thread_count() -> usize {
    std::env::var("HARMONY_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n >= 1)
        .unwrap_or(1)
}
