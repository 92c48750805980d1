//! End-to-end training loop over the toy environment.
//!
//! One step: roll out a group per prompt class, score the terminal samples,
//! standardize per-prompt advantages, build straight-path training pairs
//! against the rollout-time snapshot, run one harmonizer step, add the
//! reference-regularization gradient, and apply the update. Reward means,
//! smoothed coefficients, counters, and refresh-step harmony reports are
//! recorded along the way.
//!
//! Before-and-after reward evaluations share one evaluation seed, so the same
//! noise endpoints are integrated through the initial and the trained model
//! and per-reward deltas isolate the effect of training.

use std::time::{Duration, Instant};

use crate::advantage::{
    advantage_to_r, scalarize_rewards, AdvantageEngine, AdvantageMatrix, InterpolationCoefficient,
    StatsMode,
};
use crate::diagnostics::{
    harmony_stats, CoefficientCurvePoint, HarmonyReport, RewardCurvePoint, StepRecord,
};
use crate::error::{Error, Result};
use crate::harmonizer::{
    amortized_step, apply_update, solve_full_harmonization, weighted_sum_direction,
    HarmonizerConfig, HarmonizerMode, HarmonizerState, UpdateDirection,
};
use crate::nft::{
    kl_surrogate_gradient, nft_gradient, per_reward_gradients, ModelConfig, NftLossConfig,
    VelocityModel,
};
use crate::simplex_qp::SimplexWeights;
use crate::toy_env::{
    build_training_batch, evaluate_rewards, expand_advantages, sample_rollouts, Scenario,
};

const SALT_INIT: u64 = 1;
const SALT_ROLLOUT: u64 = 2;
const SALT_BATCH: u64 = 3;
const SALT_EVAL: u64 = 4;

/// Splitmix64-style mixing of (base seed, counter, salt) into a stream seed.
fn derive_seed(base: u64, counter: u64, salt: u64) -> u64 {
    let mut z = base
        ^ counter.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ salt.wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Everything a single training run needs.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub scenario: Scenario,
    pub model: ModelConfig,
    pub harmonizer: HarmonizerConfig,
    pub nft: NftLossConfig,
    pub steps: u64,
    /// Rollouts per prompt class per step.
    pub group_size: usize,
    /// Training pairs built per rollout.
    pub timesteps_per_sample: usize,
    pub stats_mode: StatsMode,
    pub advantage_epsilon: f64,
    pub seed: u64,
    /// Rollouts per prompt class in the before/after evaluations.
    pub eval_samples_per_prompt: usize,
    /// Initial generation mode per condition class. Distinct prompt classes
    /// start around distinct modes, the way distinct prompts do for a
    /// pretrained generator; the default spreads the modes over the unit
    /// circle.
    pub condition_anchors: Vec<Vec<f64>>,
    /// Contraction rate of the initial flow around each mode; the terminal
    /// noise scale is `exp(-rate)`. 0 leaves the unit noise scale.
    pub init_contraction: f64,
}

impl RunConfig {
    pub fn new(scenario: Scenario, seed: u64) -> Self {
        let model = ModelConfig::default();
        let condition_anchors = Self::default_anchors(model.num_conditions);
        Self {
            scenario,
            model,
            harmonizer: HarmonizerConfig::default(),
            nft: NftLossConfig::default(),
            steps: 500,
            group_size: 24,
            timesteps_per_sample: 4,
            stats_mode: StatsMode::PerBatch,
            advantage_epsilon: 1e-8,
            seed,
            eval_samples_per_prompt: 64,
            condition_anchors,
            init_contraction: 0.7,
        }
    }

    /// Default mode layout: the unit circle, class c at angle
    /// `2*pi*c / num_conditions`. With four classes that puts one mode at
    /// each distance target (class 0 east, adjacent to the specialist
    /// region) and two on the neutral axis.
    pub fn default_anchors(num_conditions: usize) -> Vec<Vec<f64>> {
        (0..num_conditions)
            .map(|i| {
                let angle = std::f64::consts::TAU * i as f64 / num_conditions as f64;
                vec![angle.cos(), angle.sin()]
            })
            .collect()
    }

    /// Velocity anchors realizing [`Self::condition_anchors`] as initial
    /// modes. With contraction `g`, integrating `dx = (a - g x) dt` over unit
    /// time puts the mode at `a (1 - exp(-g)) / g`, so the velocity biases
    /// are scaled to land the modes exactly on the configured points.
    pub fn velocity_anchors(&self) -> Vec<Vec<f64>> {
        let g = self.init_contraction;
        let mean_gain = if g > 0.0 { (1.0 - (-g).exp()) / g } else { 1.0 };
        self.condition_anchors
            .iter()
            .map(|a| a.iter().map(|x| x / mean_gain).collect())
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        self.scenario.validate()?;
        self.model.validate()?;
        self.harmonizer.validate()?;
        self.nft.validate()?;
        if self.model.state_dim != 2 {
            return Err(Error::Config(
                "the rollout environment generates 2-D states".into(),
            ));
        }
        if (self.model.num_conditions as u32) < self.scenario.num_prompt_classes {
            return Err(Error::Config(format!(
                "model embeds {} conditions but the scenario declares {} prompt classes",
                self.model.num_conditions, self.scenario.num_prompt_classes
            )));
        }
        if self.steps == 0 {
            return Err(Error::Config("steps must be >= 1".into()));
        }
        if self.group_size < 2 {
            return Err(Error::Config("group_size must be >= 2".into()));
        }
        if self.timesteps_per_sample == 0 {
            return Err(Error::Config("timesteps_per_sample must be >= 1".into()));
        }
        if !(self.advantage_epsilon > 0.0) {
            return Err(Error::Config("advantage_epsilon must be > 0".into()));
        }
        if self.eval_samples_per_prompt < 2 {
            return Err(Error::Config("eval_samples_per_prompt must be >= 2".into()));
        }
        if self.condition_anchors.len() != self.model.num_conditions {
            return Err(Error::Config(format!(
                "{} condition anchors for {} conditions",
                self.condition_anchors.len(),
                self.model.num_conditions
            )));
        }
        for (c, anchor) in self.condition_anchors.iter().enumerate() {
            if anchor.len() != self.model.state_dim {
                return Err(Error::Config(format!("anchor {c} has the wrong dimension")));
            }
            if anchor.iter().any(|x| !x.is_finite()) {
                return Err(Error::Config(format!("anchor {c} is not finite")));
            }
        }
        if !self.init_contraction.is_finite() || self.init_contraction < 0.0 {
            return Err(Error::Config(
                "init_contraction must be finite and >= 0".into(),
            ));
        }
        Ok(())
    }
}

/// Everything a run leaves behind, in memory.
#[derive(Debug, Clone)]
pub struct RunArtifacts {
    pub step_records: Vec<StepRecord>,
    pub reward_curve: Vec<RewardCurvePoint>,
    pub coefficient_curve: Vec<CoefficientCurvePoint>,
    /// Harmony of the harmonized direction on nondegenerate refresh steps.
    pub harmony_harmonized: Vec<HarmonyReport>,
    /// Harmony of the uniform weighted-sum direction on the same steps.
    pub harmony_weighted_sum: Vec<HarmonyReport>,
    /// Per-reward mean rewards before training, on the shared eval seed.
    pub initial_eval: Vec<f64>,
    /// Per-reward mean rewards after training, on the shared eval seed.
    pub final_eval: Vec<f64>,
    /// Advantage matrix of the first step (specialist-structure heatmap data).
    pub first_advantages: Option<AdvantageMatrix>,
    pub final_model: VelocityModel,
    pub final_state: HarmonizerState,
    /// Mean wall-clock of the update phase per step (gradient computation,
    /// solve, parameter update; excludes rollouts and scoring, which are
    /// identical across modes).
    pub mean_update_seconds: f64,
}

/// The exact model a run with this config starts from.
pub fn initial_model(config: &RunConfig) -> Result<VelocityModel> {
    config.validate()?;
    VelocityModel::random_init_anchored(
        config.model.clone(),
        derive_seed(config.seed, 0, SALT_INIT),
        &config.velocity_anchors(),
        config.init_contraction,
    )
}

/// Mean reward per reward dimension on a fixed evaluation seed.
pub fn evaluate_mean_rewards(
    model: &VelocityModel,
    scenario: &Scenario,
    samples_per_prompt: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    let rollouts = sample_rollouts(
        model,
        &scenario.prompt_ids(),
        samples_per_prompt,
        scenario.ode_steps,
        seed,
    )?;
    let scored = evaluate_rewards(&rollouts, &scenario.rewards)?;
    let k = scenario.num_rewards();
    let mut means = vec![0.0; k];
    for s in &scored {
        for (i, &r) in s.rewards.iter().enumerate() {
            means[i] += r;
        }
    }
    for m in &mut means {
        *m /= scored.len() as f64;
    }
    Ok(means)
}

/// Runs the full training loop.
pub fn run_training(config: &RunConfig) -> Result<RunArtifacts> {
    config.validate()?;
    let k = config.scenario.num_rewards();
    let scalarized_baseline = config.harmonizer.mode == HarmonizerMode::WeightedSum;
    let baseline_weights = match &config.harmonizer.fixed_alpha {
        Some(w) => {
            if w.len() != k {
                return Err(Error::Config(format!(
                    "fixed_alpha has {} entries for {k} rewards",
                    w.len()
                )));
            }
            w.clone()
        }
        None => SimplexWeights::uniform(k),
    };
    let mut model = initial_model(config)?;
    let ref_model = model.clone();
    let mut engine = AdvantageEngine::new(k, config.stats_mode, config.advantage_epsilon)?;
    // the scalarized baseline standardizes the aggregated reward instead of
    // the per-reward columns
    let mut scalar_engine = AdvantageEngine::new(1, config.stats_mode, config.advantage_epsilon)?;
    let mut state = HarmonizerState::new(k);
    let prompts = config.scenario.prompt_ids();
    let eval_seed = derive_seed(config.seed, 0, SALT_EVAL);

    let initial_eval = evaluate_mean_rewards(
        &model,
        &config.scenario,
        config.eval_samples_per_prompt,
        eval_seed,
    )?;

    let mut step_records = Vec::with_capacity(config.steps as usize);
    let mut reward_curve = Vec::with_capacity(config.steps as usize);
    let mut coefficient_curve = Vec::with_capacity(config.steps as usize);
    let mut harmony_harmonized = Vec::new();
    let mut harmony_weighted_sum = Vec::new();
    let mut first_advantages = None;
    let mut last_mean_norm = 1.0;
    let mut update_time = Duration::ZERO;

    for step in 0..config.steps {
        let rollouts = sample_rollouts(
            &model,
            &prompts,
            config.group_size,
            config.scenario.ode_steps,
            derive_seed(config.seed, step, SALT_ROLLOUT),
        )?;
        let scored = evaluate_rewards(&rollouts, &config.scenario.rewards)?;
        let mut means = vec![0.0; k];
        for s in &scored {
            for (i, &r) in s.rewards.iter().enumerate() {
                means[i] += r;
            }
        }
        for m in &mut means {
            *m /= scored.len() as f64;
        }
        reward_curve.push(RewardCurvePoint {
            step,
            mean_rewards: means,
        });

        let advantages = engine.process(&scored)?;
        if step == 0 {
            first_advantages = Some(advantages.clone());
        }

        // v_old comes from the snapshot taken at rollout time (refreshed
        // every rollout)
        let snapshot = model.clone();
        let batch = build_training_batch(
            &rollouts,
            &snapshot,
            config.timesteps_per_sample,
            derive_seed(config.seed, step, SALT_BATCH),
        )?;
        let update_started = Instant::now();
        let (direction, refresh) = if scalarized_baseline {
            // aggregate rewards to one scalar, standardize that, one backward
            let scalar_scored = scalarize_rewards(&scored, baseline_weights.as_slice())?;
            let scalar_advantages = scalar_engine.process(&scalar_scored)?;
            let expanded = expand_advantages(&scalar_advantages, &batch)?;
            let mut rs: Vec<InterpolationCoefficient> = Vec::with_capacity(expanded.rows());
            for i in 0..expanded.rows() {
                let rc = advantage_to_r(expanded.entry(i, 0), config.harmonizer.a_max)?;
                if rc.clamp_active {
                    state.clamp_activation_count += 1;
                }
                rs.push(rc);
            }
            let nft_config = NftLossConfig {
                beta: config.nft.beta,
                a_max: config.harmonizer.a_max,
                kl_weight: 0.0,
            };
            let grad = nft_gradient(&model, &batch, &rs, &nft_config)?;
            state.step += 1;
            (
                UpdateDirection {
                    d_star: grad.clone(),
                    d_final: grad,
                    mean_norm: 1.0,
                    alpha_used: baseline_weights.clone(),
                },
                None,
            )
        } else {
            let expanded = expand_advantages(&advantages, &batch)?;
            let outcome = amortized_step(
                &model,
                &batch,
                &expanded,
                &mut state,
                &config.harmonizer,
                config.nft.beta,
            )?;
            (outcome.direction, outcome.refresh)
        };
        let kl_grad = kl_surrogate_gradient(&model, &ref_model, &batch)?;
        apply_update(&mut model, &direction, &kl_grad, &config.harmonizer)?;
        update_time += update_started.elapsed();

        let grad_norms = if let Some(refresh) = &refresh {
            if !refresh.solve.degenerate {
                harmony_harmonized.push(harmony_stats(
                    &refresh.solve.direction.d_star,
                    &refresh.per_reward_gradients,
                )?);
                harmony_weighted_sum.push(harmony_stats(
                    &weighted_sum_direction(
                        &refresh.per_reward_gradients,
                        &SimplexWeights::uniform(k),
                    )?,
                    &refresh.per_reward_gradients,
                )?);
            }
            last_mean_norm = refresh.solve.direction.mean_norm;
            refresh.solve.per_reward_norms.clone()
        } else {
            Vec::new()
        };

        step_records.push(StepRecord {
            step,
            mode: config.harmonizer.mode.to_string(),
            alpha_star: if scalarized_baseline {
                baseline_weights.as_slice().to_vec()
            } else {
                state.last_solved_alpha.as_slice().to_vec()
            },
            alpha_ema: if scalarized_baseline {
                baseline_weights.as_slice().to_vec()
            } else {
                state.smoothed_alpha.as_slice().to_vec()
            },
            mean_norm: last_mean_norm,
            grad_norms,
            qp_solve_count: state.qp_solve_count,
            pareto_fallback_used: state.pareto_fallback_used,
            clamp_activation_count: state.clamp_activation_count,
            degenerate_qp_count: state.degenerate_qp_count,
        });
        coefficient_curve.push(CoefficientCurvePoint {
            step,
            alpha: direction.alpha_used.as_slice().to_vec(),
            pareto_fallback_used: state.pareto_fallback_used,
        });
    }

    let final_eval = evaluate_mean_rewards(
        &model,
        &config.scenario,
        config.eval_samples_per_prompt,
        eval_seed,
    )?;

    Ok(RunArtifacts {
        step_records,
        reward_curve,
        coefficient_curve,
        harmony_harmonized,
        harmony_weighted_sum,
        initial_eval,
        final_eval,
        first_advantages,
        final_model: model,
        final_state: state,
        mean_update_seconds: update_time.as_secs_f64() / config.steps as f64,
    })
}

/// Side-by-side conflict measurement of the two update rules at a fixed model.
#[derive(Debug, Clone)]
pub struct ContrastReport {
    pub weighted_sum: Vec<HarmonyReport>,
    pub harmonized: Vec<HarmonyReport>,
    pub weighted_sum_conflict_rate: f64,
    pub harmonized_conflict_rate: f64,
    pub degenerate_solves: usize,
}

/// Measures, over `batches` independent batches at the given model, the
/// harmony of the uniform weighted-sum direction and of the harmonized
/// direction against the same raw per-reward gradients.
pub fn measure_harmony_contrast(
    model: &VelocityModel,
    config: &RunConfig,
    batches: usize,
    seed: u64,
) -> Result<ContrastReport> {
    config.validate()?;
    if batches == 0 {
        return Err(Error::EmptyInput("no batches to measure".into()));
    }
    let k = config.scenario.num_rewards();
    let mut engine = AdvantageEngine::new(k, StatsMode::PerBatch, config.advantage_epsilon)?;
    let mut ws_reports = Vec::with_capacity(batches);
    let mut harmonized_reports = Vec::with_capacity(batches);
    let mut degenerate = 0usize;
    for b in 0..batches {
        let rollouts = sample_rollouts(
            model,
            &config.scenario.prompt_ids(),
            config.group_size,
            config.scenario.ode_steps,
            derive_seed(seed, b as u64, SALT_ROLLOUT),
        )?;
        let scored = evaluate_rewards(&rollouts, &config.scenario.rewards)?;
        let advantages = engine.process(&scored)?;
        let batch = build_training_batch(
            &rollouts,
            model,
            config.timesteps_per_sample,
            derive_seed(seed, b as u64, SALT_BATCH),
        )?;
        let expanded = expand_advantages(&advantages, &batch)?;
        let nft_config = NftLossConfig {
            beta: config.nft.beta,
            a_max: config.harmonizer.a_max,
            kl_weight: 0.0,
        };
        let grads = per_reward_gradients(model, &batch, &expanded, &nft_config)?;

        let ws = weighted_sum_direction(&grads, &SimplexWeights::uniform(k))?;
        ws_reports.push(harmony_stats(&ws, &grads)?);

        let solve = solve_full_harmonization(&grads, &config.harmonizer)?;
        if solve.degenerate {
            degenerate += 1;
        } else {
            harmonized_reports.push(harmony_stats(&solve.direction.d_star, &grads)?);
        }
    }
    let ws_rate = crate::diagnostics::aggregate_conflict_rate(&ws_reports)?;
    let harmonized_rate = if harmonized_reports.is_empty() {
        0.0
    } else {
        crate::diagnostics::aggregate_conflict_rate(&harmonized_reports)?
    };
    Ok(ContrastReport {
        weighted_sum: ws_reports,
        harmonized: harmonized_reports,
        weighted_sum_conflict_rate: ws_rate,
        harmonized_conflict_rate: harmonized_rate,
        degenerate_solves: degenerate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harmonizer::HarmonizerMode;

    fn short_config(seed: u64) -> RunConfig {
        let mut config = RunConfig::new(Scenario::default_conflicting(), seed);
        config.steps = 12;
        config.group_size = 8;
        config.eval_samples_per_prompt = 8;
        config
    }

    #[test]
    fn short_run_produces_consistent_artifacts() {
        let config = short_config(7);
        let artifacts = run_training(&config).unwrap();
        assert_eq!(artifacts.step_records.len(), 12);
        assert_eq!(artifacts.reward_curve.len(), 12);
        assert_eq!(artifacts.coefficient_curve.len(), 12);
        assert_eq!(artifacts.initial_eval.len(), 3);
        assert_eq!(artifacts.final_eval.len(), 3);
        assert!(artifacts.first_advantages.is_some());
        // N = 10 over 12 steps refreshes at steps 0 and 10
        assert_eq!(artifacts.final_state.qp_solve_count, 2);
    }

    #[test]
    fn runs_are_deterministic_per_seed() {
        let config = short_config(11);
        let a = run_training(&config).unwrap();
        let b = run_training(&config).unwrap();
        assert_eq!(a.step_records, b.step_records);
        assert_eq!(a.final_model, b.final_model);
        assert_eq!(a.initial_eval, b.initial_eval);
        assert_eq!(a.final_eval, b.final_eval);
    }

    #[test]
    fn different_seeds_diverge() {
        let a = run_training(&short_config(1)).unwrap();
        let b = run_training(&short_config(2)).unwrap();
        assert_ne!(a.final_model, b.final_model);
    }

    #[test]
    fn weighted_sum_mode_never_solves() {
        let mut config = short_config(13);
        config.harmonizer.mode = HarmonizerMode::WeightedSum;
        let artifacts = run_training(&config).unwrap();
        assert_eq!(artifacts.final_state.qp_solve_count, 0);
        assert!(artifacts.harmony_harmonized.is_empty());
    }

    #[test]
    fn paired_evaluations_share_the_noise_draws() {
        let config = short_config(17);
        // an untouched model evaluated twice gives identical means
        let model = VelocityModel::random_init(config.model.clone(), 5).unwrap();
        let a = evaluate_mean_rewards(&model, &config.scenario, 8, 123).unwrap();
        let b = evaluate_mean_rewards(&model, &config.scenario, 8, 123).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn contrast_measurement_reports_both_rules() {
        let config = short_config(19);
        let model = VelocityModel::random_init(config.model.clone(), 23).unwrap();
        let report = measure_harmony_contrast(&model, &config, 5, 29).unwrap();
        assert_eq!(report.weighted_sum.len(), 5);
        assert_eq!(report.harmonized.len() + report.degenerate_solves, 5);
    }
}
