//! Desk-scale rollout environment: conditional 2-D generation with synthetic
//! rewards engineered to exhibit specialist samples and gradient conflict.
//!
//! Rollouts integrate the learned velocity field from Gaussian noise with a
//! fixed-step Euler scheme. Rewards are deterministic functions of the
//! terminal point: distance pulls toward a target, a sparse indicator fires
//! inside a box region, and a parity score keys on the sign of a coordinate.
//! The default scenario places two distance targets on opposite sides of the
//! origin (anti-correlated gradients are geometrically guaranteed) plus one
//! sparse region reward (specialist samples are guaranteed whenever a rollout
//! lands inside).
//!
//! # Scenario files
//!
//! Scenarios are TOML documents; unknown keys are rejected. Example:
//!
//! ```toml
//! version = 1
//! name = "conflicting_default"
//! num_prompt_classes = 4
//! ode_steps = 20
//!
//! [[rewards]]
//! name = "pull_east"
//! kind = "general_distance"
//! target = [1.0, 0.0]
//!
//! [[rewards]]
//! name = "east_box"
//! kind = "specialist_region"
//! x_min = 0.8
//! x_max = 1000000.0
//! y_min = -0.2
//! y_max = 0.2
//!
//! [[rewards]]
//! name = "east_side"
//! kind = "specialist_parity"
//! axis = 0
//! ```

use std::f64::consts::TAU;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::advantage::{AdvantageMatrix, RewardSample};
use crate::error::{Error, Result};
use crate::nft::{NftBatch, NftBatchElement, VelocityModel};

/// Terminal states beyond this norm abort the rollout.
const DIVERGENCE_LIMIT: f64 = 1e6;

/// One synthetic reward function over terminal samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardSpec {
    pub name: String,
    #[serde(flatten)]
    pub kind: RewardKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum RewardKind {
    /// Negative Euclidean distance to a target point (0 is the maximum).
    GeneralDistance { target: [f64; 2] },
    /// 1 inside the box, 0 outside.
    SpecialistRegion {
        x_min: f64,
        x_max: f64,
        y_min: f64,
        y_max: f64,
    },
    /// 1 when the chosen coordinate is nonnegative, 0 otherwise.
    SpecialistParity { axis: usize },
}

impl RewardSpec {
    pub fn evaluate(&self, x: &[f64; 2]) -> f64 {
        match &self.kind {
            RewardKind::GeneralDistance { target } => {
                -(((x[0] - target[0]).powi(2) + (x[1] - target[1]).powi(2)).sqrt())
            }
            RewardKind::SpecialistRegion {
                x_min,
                x_max,
                y_min,
                y_max,
            } => {
                if x[0] > *x_min && x[0] < *x_max && x[1] > *y_min && x[1] < *y_max {
                    1.0
                } else {
                    0.0
                }
            }
            RewardKind::SpecialistParity { axis } => {
                if x[*axis % 2] >= 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

/// Environment definition: rewards, prompt classes, integration constants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub version: u32,
    pub name: String,
    pub rewards: Vec<RewardSpec>,
    pub num_prompt_classes: u32,
    pub ode_steps: usize,
}

impl Scenario {
    /// The versioned default: two opposing distance targets plus one sparse
    /// region reward east of the origin.
    pub fn default_conflicting() -> Self {
        Self {
            version: 1,
            name: "conflicting_default".into(),
            rewards: vec![
                RewardSpec {
                    name: "pull_east".into(),
                    kind: RewardKind::GeneralDistance { target: [1.0, 0.0] },
                },
                RewardSpec {
                    name: "pull_west".into(),
                    kind: RewardKind::GeneralDistance {
                        target: [-1.0, 0.0],
                    },
                },
                RewardSpec {
                    name: "east_box".into(),
                    kind: RewardKind::SpecialistRegion {
                        x_min: 0.8,
                        x_max: f64::MAX,
                        y_min: -0.2,
                        y_max: 0.2,
                    },
                },
            ],
            num_prompt_classes: 4,
            ode_steps: 20,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.rewards.is_empty() {
            return Err(Error::Config("scenario declares no rewards".into()));
        }
        if self.num_prompt_classes == 0 {
            return Err(Error::Config(
                "scenario needs at least one prompt class".into(),
            ));
        }
        if self.ode_steps == 0 {
            return Err(Error::Config("ode_steps must be >= 1".into()));
        }
        for spec in &self.rewards {
            if let RewardKind::SpecialistParity { axis } = spec.kind {
                if axis >= 2 {
                    return Err(Error::Config(format!(
                        "parity axis {axis} out of range for 2-D states"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn num_rewards(&self) -> usize {
        self.rewards.len()
    }

    pub fn prompt_ids(&self) -> Vec<u32> {
        (0..self.num_prompt_classes).collect()
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let scenario: Scenario =
            toml::from_str(text).map_err(|e| Error::Config(format!("scenario: {e}")))?;
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text =
            toml::to_string_pretty(self).map_err(|e| Error::Config(format!("scenario: {e}")))?;
        std::fs::write(path, text)?;
        Ok(())
    }
}

/// One generated trajectory endpoint with its noise origin.
#[derive(Debug, Clone, PartialEq)]
pub struct RolloutSample {
    pub sample_id: u64,
    /// Condition class, and the grouping key for advantage statistics.
    pub prompt_id: u32,
    pub x0: [f64; 2],
    pub x1: [f64; 2],
}

/// A batch of rollouts, `group_size` per prompt class.
#[derive(Debug, Clone, PartialEq)]
pub struct RolloutBatch {
    pub samples: Vec<RolloutSample>,
    pub group_size: usize,
    pub ode_steps: usize,
    pub seed: u64,
}

fn standard_normal_pair(rng: &mut ChaCha8Rng) -> (f64, f64) {
    // Box-Muller; u1 is kept strictly positive for the log
    let mut u1: f64 = rng.random();
    if u1 <= f64::MIN_POSITIVE {
        u1 = f64::MIN_POSITIVE;
    }
    let u2: f64 = rng.random();
    let radius = (-2.0 * u1.ln()).sqrt();
    (radius * (TAU * u2).cos(), radius * (TAU * u2).sin())
}

/// Per-sample RNG derived from the run seed and the sample's index, never
/// from scheduling order.
fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Integrates the learned flow from Gaussian noise with `ode_steps` Euler
/// steps for `group_size` samples per prompt. Deterministic given `seed`.
pub fn sample_rollouts(
    model: &VelocityModel,
    prompts: &[u32],
    group_size: usize,
    ode_steps: usize,
    seed: u64,
) -> Result<RolloutBatch> {
    if ode_steps < 1 {
        return Err(Error::Parameter("ode_steps must be >= 1".into()));
    }
    if group_size < 2 {
        return Err(Error::Parameter(
            "group_size must be >= 2 for nondegenerate group statistics".into(),
        ));
    }
    if prompts.is_empty() {
        return Err(Error::EmptyInput("no prompt classes to roll out".into()));
    }
    let mut samples = Vec::with_capacity(prompts.len() * group_size);
    let dt = 1.0 / ode_steps as f64;
    let mut index = 0u64;
    for &prompt in prompts {
        for _ in 0..group_size {
            let mut rng = stream_rng(seed, index);
            let (n0, n1) = standard_normal_pair(&mut rng);
            let x0 = [n0, n1];
            let mut x = x0;
            for step in 0..ode_steps {
                let t = step as f64 * dt;
                let v = model.forward_velocity(&x, t, prompt)?;
                x[0] += dt * v[0];
                x[1] += dt * v[1];
                if !(x[0].is_finite() && x[1].is_finite())
                    || x[0].abs() > DIVERGENCE_LIMIT
                    || x[1].abs() > DIVERGENCE_LIMIT
                {
                    return Err(Error::Divergence(format!(
                        "rollout {index} left the sane region at integration step {step}"
                    )));
                }
            }
            samples.push(RolloutSample {
                sample_id: index,
                prompt_id: prompt,
                x0,
                x1: x,
            });
            index += 1;
        }
    }
    Ok(RolloutBatch {
        samples,
        group_size,
        ode_steps,
        seed,
    })
}

/// Scores every terminal sample against every reward spec.
pub fn evaluate_rewards(batch: &RolloutBatch, specs: &[RewardSpec]) -> Result<Vec<RewardSample>> {
    if specs.is_empty() {
        return Err(Error::EmptyInput("no reward specs".into()));
    }
    batch
        .samples
        .iter()
        .map(|s| {
            let rewards: Vec<f64> = specs.iter().map(|spec| spec.evaluate(&s.x1)).collect();
            RewardSample::new(s.sample_id, s.prompt_id, rewards)
        })
        .collect()
}

/// Builds training pairs from rollouts: per pair, a fresh noise endpoint
/// `x0'`, a time `t ~ uniform(0.05, 0.95)`, the straight-path state
/// `x_t = (1 - t) x0' + t x1`, the constant velocity target `v = x1 - x0'`,
/// and the snapshot's prediction at `(x_t, t)` as `v_old`.
pub fn build_training_batch(
    rollouts: &RolloutBatch,
    snapshot: &VelocityModel,
    timesteps_per_sample: usize,
    seed: u64,
) -> Result<NftBatch> {
    if timesteps_per_sample < 1 {
        return Err(Error::Parameter("timesteps_per_sample must be >= 1".into()));
    }
    let mut elements = Vec::with_capacity(rollouts.samples.len() * timesteps_per_sample);
    for (i, sample) in rollouts.samples.iter().enumerate() {
        for rep in 0..timesteps_per_sample {
            let stream = (i * timesteps_per_sample + rep) as u64;
            let mut rng = stream_rng(seed, stream);
            let t = 0.05 + 0.9 * rng.random::<f64>();
            let (n0, n1) = standard_normal_pair(&mut rng);
            let x0 = [n0, n1];
            let x_t = [
                (1.0 - t) * x0[0] + t * sample.x1[0],
                (1.0 - t) * x0[1] + t * sample.x1[1],
            ];
            let target_v = vec![sample.x1[0] - x0[0], sample.x1[1] - x0[1]];
            let v_old = snapshot.forward_velocity(&x_t, t, sample.prompt_id)?;
            elements.push(NftBatchElement {
                x_t: x_t.to_vec(),
                t,
                target_v,
                v_old,
                condition: sample.prompt_id,
                source_index: i,
            });
        }
    }
    NftBatch::new(elements, 2)
}

/// Repeats each rollout's advantage row once per training pair built from it,
/// aligning the matrix with the batch elements.
pub fn expand_advantages(
    advantages: &AdvantageMatrix,
    batch: &NftBatch,
) -> Result<AdvantageMatrix> {
    let k = advantages.num_rewards();
    let mut sample_ids = Vec::with_capacity(batch.len());
    let mut prompt_ids = Vec::with_capacity(batch.len());
    let mut entries = Vec::with_capacity(batch.len() * k);
    for (j, e) in batch.elements().iter().enumerate() {
        if e.source_index >= advantages.rows() {
            return Err(Error::Dimension(format!(
                "batch element {j} references rollout {} outside the advantage matrix",
                e.source_index
            )));
        }
        sample_ids.push(j as u64);
        prompt_ids.push(advantages.prompt_id(e.source_index));
        entries.extend_from_slice(advantages.row(e.source_index));
    }
    AdvantageMatrix::from_parts(sample_ids, prompt_ids, k, entries, advantages.epsilon())
}
