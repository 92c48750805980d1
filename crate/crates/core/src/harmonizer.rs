//! Combines per-reward gradients into a single update direction.
//!
//! The full procedure normalizes each per-reward gradient to unit norm,
//! solves the min-norm problem over their convex hull for balancing
//! coefficients, reconstructs the direction, and rescales it by the mean norm
//! of the raw gradients. The reference-regularization gradient is applied
//! outside the solve as a separately weighted additive term.
//!
//! Because the loss is affine in the interpolation coefficient, applying a
//! coefficient vector does not actually require the per-reward gradients:
//! one backward pass at the combined advantage `sum_k alpha_k * A_k`
//! reproduces the convex combination of per-reward gradients exactly while no
//! clamp is active. The amortized mode exploits this: the solve runs every
//! N-th step to refresh the coefficients, and every step (including refresh
//! steps) applies the EMA-smoothed coefficients through a single combined
//! backward pass. Coefficients estimated from one mini-batch fluctuate, so
//! successive solutions are smoothed with an EMA; both operands live on the
//! simplex, hence so does the average.

use serde::{Deserialize, Serialize};

use crate::advantage::{advantage_to_r, AdvantageMatrix, InterpolationCoefficient};
use crate::error::{Error, Result};
use crate::gradient::GradientVector;
use crate::nft::{nft_gradient, per_reward_gradients, NftBatch, NftLossConfig, VelocityModel};
use crate::simplex_qp::{build_gram, solve_min_norm, GramMatrix, SimplexWeights};

/// Update-rule selection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HarmonizerMode {
    /// Refresh the balancing coefficients every step (amortization interval
    /// pinned to 1).
    FullEveryStep,
    /// Refresh every N-th step, reuse smoothed coefficients in between.
    Amortized,
    /// Scalarized baseline: fixed weights over rewards, no solve, no EMA.
    WeightedSum,
    /// Fixed coefficients (ablation), no solve, no EMA.
    FixedAlpha,
}

impl std::fmt::Display for HarmonizerMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            HarmonizerMode::FullEveryStep => "full_every_step",
            HarmonizerMode::Amortized => "amortized",
            HarmonizerMode::WeightedSum => "weighted_sum",
            HarmonizerMode::FixedAlpha => "fixed_alpha",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HarmonizerConfig {
    pub mode: HarmonizerMode,
    /// N: steps per coefficient refresh in amortized mode.
    pub amortization_interval: usize,
    /// EMA decay rho in [0, 1); 0 disables smoothing.
    pub ema_decay: f64,
    /// Weights for the weighted-sum and fixed-alpha modes.
    pub fixed_alpha: Option<SimplexWeights>,
    /// Normalize gradients to unit norm before the solve. Disabling feeds raw
    /// inner products to the QP (ablation switch).
    pub normalize_gradients: bool,
    pub learning_rate: f64,
    /// Weight of the reference-regularization gradient in the applied update.
    pub kl_weight: f64,
    /// Advantage clamp scale.
    pub a_max: f64,
    /// Optional schedule: from this step on, use uniform coefficients and stop
    /// refreshing (final consolidation stage).
    pub uniform_after_step: Option<u64>,
    /// Gradients with norm below this are flagged as carrying no signal.
    pub zero_norm_eps: f64,
    pub qp_max_iters: usize,
    pub qp_tol: f64,
}

impl Default for HarmonizerConfig {
    fn default() -> Self {
        Self {
            mode: HarmonizerMode::Amortized,
            amortization_interval: 10,
            ema_decay: 0.7,
            fixed_alpha: None,
            normalize_gradients: true,
            learning_rate: 0.1,
            kl_weight: 0.01,
            a_max: 5.0,
            uniform_after_step: None,
            zero_norm_eps: 1e-12,
            qp_max_iters: 250,
            qp_tol: 1e-10,
        }
    }
}

impl HarmonizerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.amortization_interval < 1 {
            return Err(Error::Parameter(
                "amortization_interval must be >= 1".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.ema_decay) {
            return Err(Error::Parameter(format!(
                "ema_decay must be in [0, 1), got {}",
                self.ema_decay
            )));
        }
        if !(self.learning_rate >= 0.0) {
            return Err(Error::Parameter("learning_rate must be >= 0".into()));
        }
        if !(self.kl_weight >= 0.0) {
            return Err(Error::Parameter("kl_weight must be >= 0".into()));
        }
        if !(self.a_max > 0.0) {
            return Err(Error::Parameter("a_max must be > 0".into()));
        }
        if !(self.zero_norm_eps > 0.0) {
            return Err(Error::Parameter("zero_norm_eps must be > 0".into()));
        }
        if self.qp_max_iters < 1 || !(self.qp_tol > 0.0) {
            return Err(Error::Parameter("invalid QP solver settings".into()));
        }
        Ok(())
    }

    /// Interval actually in force: the every-step mode pins it to 1.
    pub fn effective_interval(&self) -> usize {
        match self.mode {
            HarmonizerMode::FullEveryStep => 1,
            _ => self.amortization_interval,
        }
    }
}

/// Mutable harmonizer bookkeeping carried across steps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HarmonizerState {
    /// EMA-smoothed coefficients, initialized uniform.
    pub smoothed_alpha: SimplexWeights,
    /// Most recent QP solution.
    pub last_solved_alpha: SimplexWeights,
    pub steps_since_refresh: usize,
    /// Total steps taken.
    pub step: u64,
    pub qp_solve_count: u64,
    /// Steps where a clamp voided the exact single-backward equivalence.
    pub pareto_fallback_used: u64,
    /// Individual clamp activations across samples and rewards.
    pub clamp_activation_count: u64,
    /// Solves that returned a fully-conflicting (near-zero) direction.
    pub degenerate_qp_count: u64,
}

impl HarmonizerState {
    pub fn new(num_rewards: usize) -> Self {
        Self {
            smoothed_alpha: SimplexWeights::uniform(num_rewards),
            last_solved_alpha: SimplexWeights::uniform(num_rewards),
            steps_since_refresh: 0,
            step: 0,
            qp_solve_count: 0,
            pareto_fallback_used: 0,
            clamp_activation_count: 0,
            degenerate_qp_count: 0,
        }
    }

    pub fn num_rewards(&self) -> usize {
        self.smoothed_alpha.len()
    }
}

/// A computed update direction plus the scale bookkeeping around it.
#[derive(Debug, Clone)]
pub struct UpdateDirection {
    /// Direction before rescaling.
    pub d_star: GradientVector,
    /// Direction actually applied: `d_star * mean_norm`.
    pub d_final: GradientVector,
    /// Mean norm of the raw per-reward gradients (1.0 when the direction is
    /// already in raw-gradient scale).
    pub mean_norm: f64,
    pub alpha_used: SimplexWeights,
}

/// Output of [`normalize_gradients`].
#[derive(Debug, Clone)]
pub struct NormalizedGradients {
    /// Unit vectors, or the zero vector where flagged.
    pub unit: Vec<GradientVector>,
    /// True where the input norm fell below eps.
    pub zero_flagged: Vec<bool>,
    /// Raw input norms.
    pub norms: Vec<f64>,
}

/// Scales each gradient to unit norm. Inputs with norm below `eps` come back
/// as the zero vector with their flag set; that is a normal return, not an
/// error.
pub fn normalize_gradients(gradients: &[GradientVector], eps: f64) -> Result<NormalizedGradients> {
    if !(eps > 0.0) {
        return Err(Error::Parameter(format!("eps must be > 0, got {eps}")));
    }
    let mut unit = Vec::with_capacity(gradients.len());
    let mut zero_flagged = Vec::with_capacity(gradients.len());
    let mut norms = Vec::with_capacity(gradients.len());
    for g in gradients {
        let n = g.norm();
        norms.push(n);
        if n < eps {
            unit.push(GradientVector::zeros(g.len()));
            zero_flagged.push(true);
        } else {
            unit.push(g.divided_by(n));
            zero_flagged.push(false);
        }
    }
    Ok(NormalizedGradients {
        unit,
        zero_flagged,
        norms,
    })
}

/// Everything produced by one full harmonization solve.
#[derive(Debug, Clone)]
pub struct FullSolve {
    pub direction: UpdateDirection,
    /// Balancing coefficients over all K rewards (zero at flagged entries).
    pub alpha: SimplexWeights,
    /// The convex hull of the (normalized) gradients contains the origin;
    /// the direction is unusably small.
    pub degenerate: bool,
    pub zero_flagged: Vec<bool>,
    /// The matrix the QP actually saw (diagnostics and ablation plumbing).
    pub gram: GramMatrix,
    pub qp_iterations: usize,
    /// Norms of the raw input gradients.
    pub per_reward_norms: Vec<f64>,
}

/// Normalize, solve the min-norm problem, reconstruct, and rescale.
///
/// Rewards whose gradient is zero-flagged are excluded from the solve and
/// assigned coefficient 0; the remaining coefficients are renormalized. When
/// `normalize_gradients` is off, the raw gradients go into the Gram matrix and
/// the reconstruction unchanged.
pub fn solve_full_harmonization(
    gradients: &[GradientVector],
    config: &HarmonizerConfig,
) -> Result<FullSolve> {
    config.validate()?;
    if gradients.is_empty() {
        return Err(Error::EmptyInput("no gradients to harmonize".into()));
    }
    let k = gradients.len();
    let normalized = normalize_gradients(gradients, config.zero_norm_eps)?;
    let active: Vec<usize> = (0..k).filter(|&i| !normalized.zero_flagged[i]).collect();
    if active.is_empty() {
        return Err(Error::NoSignal(
            "every per-reward gradient is zero-flagged".into(),
        ));
    }

    let solve_inputs: Vec<GradientVector> = active
        .iter()
        .map(|&i| {
            if config.normalize_gradients {
                normalized.unit[i].clone()
            } else {
                gradients[i].clone()
            }
        })
        .collect();
    let gram = build_gram(&solve_inputs)?;
    let qp = solve_min_norm(&gram, config.qp_max_iters, config.qp_tol)?;

    let mut alpha_full = vec![0.0; k];
    for (slot, &i) in active.iter().enumerate() {
        alpha_full[i] = qp.alpha.get(slot);
    }
    let alpha = SimplexWeights::new(alpha_full)?;

    let d_star = GradientVector::linear_combination(&solve_inputs, qp.alpha.as_slice())?;
    let mean_norm = normalized.norms.iter().sum::<f64>() / k as f64;
    let d_final = d_star.scaled(mean_norm);

    Ok(FullSolve {
        direction: UpdateDirection {
            d_star,
            d_final,
            mean_norm,
            alpha_used: alpha.clone(),
        },
        alpha,
        degenerate: qp.degenerate,
        zero_flagged: normalized.zero_flagged,
        gram,
        qp_iterations: qp.iterations,
        per_reward_norms: normalized.norms,
    })
}

/// Scalarized-baseline direction: `sum_k w_k g_k` over the raw gradients.
pub fn weighted_sum_direction(
    gradients: &[GradientVector],
    weights: &SimplexWeights,
) -> Result<GradientVector> {
    if gradients.len() != weights.len() {
        return Err(Error::Dimension(format!(
            "{} gradients vs {} weights",
            gradients.len(),
            weights.len()
        )));
    }
    GradientVector::linear_combination(gradients, weights.as_slice())
}

/// `smoothed = rho * smoothed + (1 - rho) * fresh`; also records `fresh` as
/// the last solved coefficients.
pub fn ema_update(
    state: &mut HarmonizerState,
    fresh_alpha: &SimplexWeights,
    rho: f64,
) -> Result<()> {
    if !(0.0..1.0).contains(&rho) {
        return Err(Error::Parameter(format!(
            "rho must be in [0, 1), got {rho}"
        )));
    }
    state.smoothed_alpha = state.smoothed_alpha.convex_combination(fresh_alpha, rho)?;
    state.last_solved_alpha = fresh_alpha.clone();
    Ok(())
}

/// Dot product of one advantage row with the balancing coefficients. Convexity
/// bounds it by the largest per-reward magnitude.
pub fn combined_advantage(advantage_row: &[f64], alpha: &SimplexWeights) -> Result<f64> {
    if advantage_row.len() != alpha.len() {
        return Err(Error::Dimension(format!(
            "{} advantages vs {} coefficients",
            advantage_row.len(),
            alpha.len()
        )));
    }
    Ok(advantage_row
        .iter()
        .zip(alpha.as_slice())
        .map(|(a, w)| a * w)
        .sum())
}

/// Byproducts of a refresh step.
#[derive(Debug, Clone)]
pub struct RefreshOutcome {
    pub solve: FullSolve,
    /// Raw per-reward gradients computed for the solve.
    pub per_reward_gradients: Vec<GradientVector>,
}

/// Result of one harmonizer step: the direction to apply (the parameter
/// update itself happens in [`apply_update`]) plus refresh byproducts when the
/// coefficients were re-estimated this step.
#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub direction: UpdateDirection,
    pub refresh: Option<RefreshOutcome>,
}

/// Single-backward direction through the combined advantage, with clamp
/// bookkeeping. Returns the gradient, the per-sample coefficients, and the
/// number of clamp activations observed.
fn combined_direction(
    model: &VelocityModel,
    batch: &NftBatch,
    advantages: &AdvantageMatrix,
    alpha: &SimplexWeights,
    a_max: f64,
    beta: f64,
) -> Result<(GradientVector, u64)> {
    let mut clamp_activations = 0u64;
    let mut rs: Vec<InterpolationCoefficient> = Vec::with_capacity(advantages.rows());
    for i in 0..advantages.rows() {
        let row = advantages.row(i);
        for &a in row {
            if a.abs() >= a_max {
                clamp_activations += 1;
            }
        }
        let a_bar = combined_advantage(row, alpha)?;
        let rc = advantage_to_r(a_bar, a_max)?;
        if rc.clamp_active {
            clamp_activations += 1;
        }
        rs.push(rc);
    }
    let nft_config = NftLossConfig {
        beta,
        a_max,
        kl_weight: 0.0,
    };
    let grad = nft_gradient(model, batch, &rs, &nft_config)?;
    Ok((grad, clamp_activations))
}

/// One harmonizer step over a training batch.
///
/// In the amortized and every-step modes, a refresh step (every N-th step;
/// every step when the interval is 1) computes per-reward gradients, solves
/// the min-norm problem, and folds the fresh coefficients into the EMA; a
/// degenerate solve keeps the previous smoothed coefficients instead and is
/// counted. Every step then applies the smoothed coefficients through one
/// combined-advantage backward pass. The scalarized and fixed-coefficient
/// modes skip the solve entirely.
pub fn amortized_step(
    model: &VelocityModel,
    batch: &NftBatch,
    advantages: &AdvantageMatrix,
    state: &mut HarmonizerState,
    config: &HarmonizerConfig,
    beta: f64,
) -> Result<StepOutcome> {
    config.validate()?;
    let k = advantages.num_rewards();
    if k != state.num_rewards() {
        return Err(Error::Dimension(format!(
            "{k} rewards in the batch, state tracks {}",
            state.num_rewards()
        )));
    }
    if advantages.rows() != batch.len() {
        return Err(Error::Dimension(format!(
            "{} advantage rows for {} batch elements",
            advantages.rows(),
            batch.len()
        )));
    }

    let outcome = match config.mode {
        HarmonizerMode::WeightedSum | HarmonizerMode::FixedAlpha => {
            let weights = match (&config.fixed_alpha, config.mode) {
                (Some(w), _) => {
                    if w.len() != k {
                        return Err(Error::Dimension(format!(
                            "fixed_alpha has {} entries for {k} rewards",
                            w.len()
                        )));
                    }
                    w.clone()
                }
                (None, HarmonizerMode::WeightedSum) => SimplexWeights::uniform(k),
                (None, _) => {
                    return Err(Error::Parameter(
                        "fixed_alpha mode requires fixed_alpha weights".into(),
                    ))
                }
            };
            let (grad, clamps) =
                combined_direction(model, batch, advantages, &weights, config.a_max, beta)?;
            state.clamp_activation_count += clamps;
            StepOutcome {
                direction: UpdateDirection {
                    d_star: grad.clone(),
                    d_final: grad,
                    mean_norm: 1.0,
                    alpha_used: weights,
                },
                refresh: None,
            }
        }
        HarmonizerMode::Amortized | HarmonizerMode::FullEveryStep => {
            let interval = config.effective_interval();
            let uniform_stage = config.uniform_after_step.is_some_and(|s| state.step >= s);
            let mut refresh_outcome = None;
            if state.steps_since_refresh == 0 && !uniform_stage {
                let nft_config = NftLossConfig {
                    beta,
                    a_max: config.a_max,
                    kl_weight: 0.0,
                };
                let grads = per_reward_gradients(model, batch, advantages, &nft_config)?;
                let solve = solve_full_harmonization(&grads, config)?;
                state.qp_solve_count += 1;
                if solve.degenerate {
                    // fully conflicting batch: keep the previous smoothed
                    // coefficients rather than folding in a meaningless solve
                    state.degenerate_qp_count += 1;
                } else {
                    ema_update(state, &solve.alpha, config.ema_decay)?;
                }
                refresh_outcome = Some(RefreshOutcome {
                    solve,
                    per_reward_gradients: grads,
                });
            }
            let alpha_used = if uniform_stage {
                SimplexWeights::uniform(k)
            } else {
                state.smoothed_alpha.clone()
            };
            let (grad, clamps) =
                combined_direction(model, batch, advantages, &alpha_used, config.a_max, beta)?;
            state.clamp_activation_count += clamps;
            if clamps > 0 {
                // the clamp breaks the exact equivalence between the combined
                // pass and the per-reward convex combination for this step
                state.pareto_fallback_used += 1;
            }
            state.steps_since_refresh = (state.steps_since_refresh + 1) % interval;
            StepOutcome {
                direction: UpdateDirection {
                    d_star: grad.clone(),
                    d_final: grad,
                    mean_norm: 1.0,
                    alpha_used,
                },
                refresh: refresh_outcome,
            }
        }
    };
    state.step += 1;
    Ok(outcome)
}

/// In-place parameter step:
/// `theta -= learning_rate * (d_final + kl_weight * kl_gradient)`.
pub fn apply_update(
    model: &mut VelocityModel,
    direction: &UpdateDirection,
    kl_gradient: &GradientVector,
    config: &HarmonizerConfig,
) -> Result<()> {
    if direction.d_final.len() != model.param_count() {
        return Err(Error::Dimension(format!(
            "direction has {} entries, model has {} params",
            direction.d_final.len(),
            model.param_count()
        )));
    }
    if kl_gradient.len() != model.param_count() {
        return Err(Error::Dimension(format!(
            "regularization gradient has {} entries, model has {} params",
            kl_gradient.len(),
            model.param_count()
        )));
    }
    let eta = config.learning_rate;
    let kl_w = config.kl_weight;
    let params = model.params_mut();
    for (i, p) in params.iter_mut().enumerate() {
        *p -= eta * (direction.d_final.as_slice()[i] + kl_w * kl_gradient.as_slice()[i]);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nft::{ModelConfig, NftBatchElement};

    fn gv(values: &[f64]) -> GradientVector {
        GradientVector::from_vec(values.to_vec())
    }

    #[test]
    fn normalize_three_four_five() {
        let out = normalize_gradients(&[gv(&[3.0, 4.0])], 1e-12).unwrap();
        assert_eq!(out.unit[0].as_slice(), &[0.6, 0.8]);
        assert!(!out.zero_flagged[0]);
        assert_eq!(out.norms[0], 5.0);
    }

    #[test]
    fn normalize_is_idempotent_on_unit_vectors() {
        let out = normalize_gradients(&[gv(&[1.0, 0.0])], 1e-12).unwrap();
        assert_eq!(out.unit[0].as_slice(), &[1.0, 0.0]);
    }

    #[test]
    fn normalize_flags_near_zero_vectors() {
        let out = normalize_gradients(&[gv(&[1e-20, 0.0])], 1e-12).unwrap();
        assert!(out.zero_flagged[0]);
        assert_eq!(out.unit[0].as_slice(), &[0.0, 0.0]);
    }

    #[test]
    fn single_reward_harmonization_recovers_the_gradient() {
        let g = gv(&[3.0, 4.0]);
        let solve =
            solve_full_harmonization(std::slice::from_ref(&g), &HarmonizerConfig::default())
                .unwrap();
        assert_eq!(solve.alpha.as_slice(), &[1.0]);
        assert!(solve.direction.d_final.max_abs_diff(&g).unwrap() < 1e-12);
    }

    #[test]
    fn identical_gradients_harmonize_to_themselves() {
        let g = gv(&[1.0, 2.0, -0.5]);
        let solve = solve_full_harmonization(&[g.clone(), g.clone()], &HarmonizerConfig::default())
            .unwrap();
        assert!(solve.direction.d_final.max_abs_diff(&g).unwrap() < 1e-10);
    }

    #[test]
    fn zero_flagged_rewards_are_excluded_and_renormalized() {
        let g1 = gv(&[1.0, 0.0]);
        let g2 = gv(&[1e-20, 0.0]);
        let solve = solve_full_harmonization(&[g1, g2], &HarmonizerConfig::default()).unwrap();
        assert!(solve.zero_flagged[1]);
        assert_eq!(solve.alpha.as_slice(), &[1.0, 0.0]);
    }

    #[test]
    fn all_zero_gradients_is_a_no_signal_error() {
        let g = gv(&[0.0, 0.0]);
        assert!(matches!(
            solve_full_harmonization(&[g.clone(), g], &HarmonizerConfig::default()),
            Err(Error::NoSignal(_))
        ));
    }

    #[test]
    fn disabling_normalization_feeds_raw_inner_products_to_the_qp() {
        let g1 = gv(&[3.0, 0.0]);
        let g2 = gv(&[0.0, 1.0]);
        let normalized =
            solve_full_harmonization(&[g1.clone(), g2.clone()], &HarmonizerConfig::default())
                .unwrap();
        assert!((normalized.gram.entry(0, 0) - 1.0).abs() < 1e-12);

        let raw_config = HarmonizerConfig {
            normalize_gradients: false,
            ..Default::default()
        };
        let raw = solve_full_harmonization(&[g1, g2], &raw_config).unwrap();
        assert!((raw.gram.entry(0, 0) - 9.0).abs() < 1e-12);
        assert!((raw.gram.entry(1, 1) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn weighted_sum_uniform_average() {
        let d = weighted_sum_direction(
            &[gv(&[1.0, 0.0]), gv(&[0.0, 1.0])],
            &SimplexWeights::uniform(2),
        )
        .unwrap();
        assert_eq!(d.as_slice(), &[0.5, 0.5]);
    }

    #[test]
    fn weighted_sum_one_hot_selects() {
        let g2 = gv(&[0.0, 1.0]);
        let d = weighted_sum_direction(
            &[gv(&[1.0, 0.0]), g2.clone()],
            &SimplexWeights::one_hot(2, 1),
        )
        .unwrap();
        assert_eq!(d, g2);
    }

    #[test]
    fn weighted_sum_specialist_upweighting_preset() {
        // five rewards weighted 1:1:1:2:2
        let weights =
            SimplexWeights::new([1.0, 1.0, 1.0, 2.0, 2.0].iter().map(|w| w / 7.0).collect())
                .unwrap();
        let grads: Vec<GradientVector> = (0..5)
            .map(|i| {
                let mut v = vec![0.0; 5];
                v[i] = 7.0;
                gv(&v)
            })
            .collect();
        let d = weighted_sum_direction(&grads, &weights).unwrap();
        assert_eq!(d.as_slice(), &[1.0, 1.0, 1.0, 2.0, 2.0]);
    }

    #[test]
    fn ema_with_zero_decay_copies_the_fresh_solution() {
        let mut state = HarmonizerState::new(2);
        let fresh = SimplexWeights::new(vec![0.9, 0.1]).unwrap();
        ema_update(&mut state, &fresh, 0.0).unwrap();
        assert_eq!(state.smoothed_alpha, fresh);
    }

    #[test]
    fn ema_mixes_toward_the_fresh_solution() {
        let mut state = HarmonizerState::new(2);
        let fresh = SimplexWeights::one_hot(2, 0);
        ema_update(&mut state, &fresh, 0.7).unwrap();
        assert!((state.smoothed_alpha.get(0) - 0.65).abs() < 1e-15);
        assert!((state.smoothed_alpha.get(1) - 0.35).abs() < 1e-15);
    }

    #[test]
    fn ema_converges_geometrically_under_constant_target() {
        let mut state = HarmonizerState::new(3);
        let target = SimplexWeights::new(vec![0.6, 0.3, 0.1]).unwrap();
        let rho = 0.7f64;
        let initial_dist: f64 = state
            .smoothed_alpha
            .as_slice()
            .iter()
            .zip(target.as_slice())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        for t in 1..=40u32 {
            ema_update(&mut state, &target, rho).unwrap();
            let dist: f64 = state
                .smoothed_alpha
                .as_slice()
                .iter()
                .zip(target.as_slice())
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            assert!((dist - rho.powi(t as i32) * initial_dist).abs() < 1e-10);
        }
    }

    #[test]
    fn ema_rejects_invalid_decay() {
        let mut state = HarmonizerState::new(2);
        let fresh = SimplexWeights::uniform(2);
        assert!(matches!(
            ema_update(&mut state, &fresh, 1.0),
            Err(Error::Parameter(_))
        ));
        assert!(matches!(
            ema_update(&mut state, &fresh, -0.1),
            Err(Error::Parameter(_))
        ));
    }

    #[test]
    fn combined_advantage_one_hot_and_mixed() {
        let one_hot = SimplexWeights::one_hot(3, 1);
        assert_eq!(
            combined_advantage(&[5.0, -2.0, 1.0], &one_hot).unwrap(),
            -2.0
        );

        let mixed = SimplexWeights::new(vec![0.3, 0.7]).unwrap();
        let a_bar = combined_advantage(&[1.0, -1.0], &mixed).unwrap();
        assert!((a_bar + 0.4).abs() < 1e-15);
    }

    #[test]
    fn combined_advantage_is_bounded_by_the_largest_entry() {
        let alpha = SimplexWeights::new(vec![0.2, 0.5, 0.3]).unwrap();
        let row = [3.0, -4.5, 1.0];
        let a_bar = combined_advantage(&row, &alpha).unwrap();
        let max_abs = row.iter().map(|a| a.abs()).fold(0.0, f64::max);
        assert!(a_bar.abs() <= max_abs);
    }

    fn step_fixture(k: usize) -> (VelocityModel, NftBatch, AdvantageMatrix) {
        let config = ModelConfig {
            state_dim: 2,
            num_conditions: 2,
            hidden_sizes: vec![6],
        };
        let model = VelocityModel::random_init(config, 99).unwrap();
        let n = 6;
        let elements: Vec<NftBatchElement> = (0..n)
            .map(|i| {
                let x = vec![0.1 * i as f64 - 0.2, 0.3];
                let t = 0.2 + 0.1 * (i % 4) as f64;
                let c = (i % 2) as u32;
                let v_old = model.forward_velocity(&x, t, c).unwrap();
                NftBatchElement {
                    x_t: x,
                    t,
                    target_v: vec![0.5, -0.25 + 0.1 * i as f64],
                    v_old,
                    condition: c,
                    source_index: i,
                }
            })
            .collect();
        let batch = NftBatch::new(elements, 2).unwrap();
        let entries: Vec<f64> = (0..n * k)
            .map(|j| ((j as f64 * 0.731).sin()) * 2.0)
            .collect();
        let adv =
            AdvantageMatrix::from_parts((0..n as u64).collect(), vec![0; n], k, entries, 1e-8)
                .unwrap();
        (model, batch, adv)
    }

    #[test]
    fn interval_one_matches_full_every_step_mode() {
        let (model, batch, adv) = step_fixture(3);
        let amortized = HarmonizerConfig {
            mode: HarmonizerMode::Amortized,
            amortization_interval: 1,
            ..Default::default()
        };
        let full = HarmonizerConfig {
            mode: HarmonizerMode::FullEveryStep,
            amortization_interval: 10, // ignored by this mode
            ..Default::default()
        };
        let mut s1 = HarmonizerState::new(3);
        let mut s2 = HarmonizerState::new(3);
        for _ in 0..3 {
            let o1 = amortized_step(&model, &batch, &adv, &mut s1, &amortized, 1.0).unwrap();
            let o2 = amortized_step(&model, &batch, &adv, &mut s2, &full, 1.0).unwrap();
            assert!(
                o1.direction
                    .d_final
                    .max_abs_diff(&o2.direction.d_final)
                    .unwrap()
                    < 1e-12
            );
            assert!(o1.refresh.is_some() && o2.refresh.is_some());
        }
        assert_eq!(s1.qp_solve_count, 3);
        assert_eq!(s2.qp_solve_count, 3);
    }

    #[test]
    fn twenty_steps_at_interval_ten_solve_twice() {
        let (model, batch, adv) = step_fixture(3);
        let config = HarmonizerConfig {
            mode: HarmonizerMode::Amortized,
            amortization_interval: 10,
            ..Default::default()
        };
        let mut state = HarmonizerState::new(3);
        for _ in 0..20 {
            amortized_step(&model, &batch, &adv, &mut state, &config, 1.0).unwrap();
            assert!(state.steps_since_refresh < 10);
        }
        assert_eq!(state.qp_solve_count, 2);
    }

    #[test]
    fn no_clamps_means_no_pareto_fallback() {
        let (model, batch, adv) = step_fixture(3); // advantages within (-2, 2), a_max 5
        let config = HarmonizerConfig::default();
        let mut state = HarmonizerState::new(3);
        for _ in 0..12 {
            amortized_step(&model, &batch, &adv, &mut state, &config, 1.0).unwrap();
        }
        assert_eq!(state.pareto_fallback_used, 0);
        assert_eq!(state.clamp_activation_count, 0);
    }

    #[test]
    fn clamped_advantages_are_counted() {
        let (model, batch, _) = step_fixture(3);
        let n = batch.len();
        let mut entries = vec![0.1; n * 3];
        entries[0] = 7.5; // beyond a_max = 5
        let adv =
            AdvantageMatrix::from_parts((0..n as u64).collect(), vec![0; n], 3, entries, 1e-8)
                .unwrap();
        let config = HarmonizerConfig::default();
        let mut state = HarmonizerState::new(3);
        amortized_step(&model, &batch, &adv, &mut state, &config, 1.0).unwrap();
        assert!(state.clamp_activation_count > 0);
        assert_eq!(state.pareto_fallback_used, 1);
    }

    #[test]
    fn fixed_alpha_one_hot_reproduces_single_reward_training() {
        let (model, batch, adv) = step_fixture(3);
        let config = HarmonizerConfig {
            mode: HarmonizerMode::FixedAlpha,
            fixed_alpha: Some(SimplexWeights::one_hot(3, 2)),
            ..Default::default()
        };
        let mut state = HarmonizerState::new(3);
        let outcome = amortized_step(&model, &batch, &adv, &mut state, &config, 1.0).unwrap();

        let nft_config = NftLossConfig {
            beta: 1.0,
            a_max: config.a_max,
            kl_weight: 0.0,
        };
        let per_reward = per_reward_gradients(&model, &batch, &adv, &nft_config).unwrap();
        assert!(
            outcome
                .direction
                .d_final
                .max_abs_diff(&per_reward[2])
                .unwrap()
                < 1e-12
        );
        assert_eq!(state.qp_solve_count, 0);
    }

    #[test]
    fn fixed_alpha_mode_requires_weights() {
        let (model, batch, adv) = step_fixture(2);
        let config = HarmonizerConfig {
            mode: HarmonizerMode::FixedAlpha,
            fixed_alpha: None,
            ..Default::default()
        };
        let mut state = HarmonizerState::new(2);
        assert!(matches!(
            amortized_step(&model, &batch, &adv, &mut state, &config, 1.0),
            Err(Error::Parameter(_))
        ));
    }

    #[test]
    fn uniform_stage_stops_refreshing_and_uses_uniform_weights() {
        let (model, batch, adv) = step_fixture(3);
        let config = HarmonizerConfig {
            mode: HarmonizerMode::Amortized,
            amortization_interval: 2,
            uniform_after_step: Some(4),
            ..Default::default()
        };
        let mut state = HarmonizerState::new(3);
        for _ in 0..8 {
            let out = amortized_step(&model, &batch, &adv, &mut state, &config, 1.0).unwrap();
            if state.step > 4 {
                assert_eq!(out.direction.alpha_used, SimplexWeights::uniform(3));
                assert!(out.refresh.is_none());
            }
        }
        // refreshes only at steps 0, 2 before the uniform stage begins
        assert_eq!(state.qp_solve_count, 2);
    }

    #[test]
    fn apply_update_with_zero_learning_rate_is_identity() {
        let (mut model, _, _) = step_fixture(2);
        let before = model.params().to_vec();
        let p = model.param_count();
        let direction = UpdateDirection {
            d_star: GradientVector::from_vec(vec![1.0; p]),
            d_final: GradientVector::from_vec(vec![1.0; p]),
            mean_norm: 1.0,
            alpha_used: SimplexWeights::uniform(2),
        };
        let config = HarmonizerConfig {
            learning_rate: 0.0,
            ..Default::default()
        };
        apply_update(&mut model, &direction, &GradientVector::zeros(p), &config).unwrap();
        assert_eq!(model.params(), before.as_slice());
    }

    #[test]
    fn apply_update_without_regularization_is_a_plain_step() {
        let (mut model, _, _) = step_fixture(2);
        let before = model.params().to_vec();
        let p = model.param_count();
        let d: Vec<f64> = (0..p).map(|i| (i as f64 * 0.01).cos()).collect();
        let direction = UpdateDirection {
            d_star: GradientVector::from_vec(d.clone()),
            d_final: GradientVector::from_vec(d.clone()),
            mean_norm: 1.0,
            alpha_used: SimplexWeights::uniform(2),
        };
        let config = HarmonizerConfig {
            learning_rate: 0.5,
            kl_weight: 0.0,
            ..Default::default()
        };
        apply_update(&mut model, &direction, &GradientVector::zeros(p), &config).unwrap();
        for i in 0..p {
            assert!((model.params()[i] - (before[i] - 0.5 * d[i])).abs() < 1e-15);
        }
    }

    #[test]
    fn two_half_steps_equal_one_full_step_for_a_frozen_direction() {
        let (model, _, _) = step_fixture(2);
        let p = model.param_count();
        let d: Vec<f64> = (0..p).map(|i| (i as f64 * 0.03).sin()).collect();
        let kl: Vec<f64> = (0..p).map(|i| (i as f64 * 0.05).cos() * 0.1).collect();
        let direction = UpdateDirection {
            d_star: GradientVector::from_vec(d.clone()),
            d_final: GradientVector::from_vec(d),
            mean_norm: 1.0,
            alpha_used: SimplexWeights::uniform(2),
        };
        let kl_grad = GradientVector::from_vec(kl);

        let full_config = HarmonizerConfig {
            learning_rate: 0.2,
            kl_weight: 0.3,
            ..Default::default()
        };
        let half_config = HarmonizerConfig {
            learning_rate: 0.1,
            kl_weight: 0.3,
            ..Default::default()
        };
        let mut full = model.clone();
        apply_update(&mut full, &direction, &kl_grad, &full_config).unwrap();
        let mut halves = model.clone();
        apply_update(&mut halves, &direction, &kl_grad, &half_config).unwrap();
        apply_update(&mut halves, &direction, &kl_grad, &half_config).unwrap();
        for (a, b) in full.params().iter().zip(halves.params()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn update_direction_scale_invariant_holds() {
        let d_star = gv(&[0.6, 0.8]);
        let mean_norm = 2.5;
        let direction = UpdateDirection {
            d_final: d_star.scaled(mean_norm),
            d_star,
            mean_norm,
            alpha_used: SimplexWeights::uniform(2),
        };
        assert!(
            (direction.d_final.norm() - direction.d_star.norm() * direction.mean_norm).abs()
                < 1e-10
        );
    }
}
