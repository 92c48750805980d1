//! Deterministic in-process simulation of multi-worker gradient
//! synchronization.
//!
//! Each rank owns a contiguous, equally sized slice of the batch, computes
//! its K local per-reward gradients with collective synchronization
//! suppressed, and the per-reward vectors are then averaged across ranks in
//! fixed rank order. Every rank solves the harmonization problem locally on
//! the averaged gradients and must arrive at identical coefficients.
//!
//! Averaging is only exactly equivalent to the full-batch mean under equal
//! shard sizes, so unequal shards are rejected rather than silently
//! reweighted. Summation order is fixed (sequential over ranks), which makes
//! the simulation bit-reproducible whether ranks ran serially or in parallel.

use crate::advantage::AdvantageMatrix;
use crate::error::{Error, Result};
use crate::gradient::GradientVector;
use crate::harmonizer::{solve_full_harmonization, HarmonizerConfig};
use crate::nft::{per_reward_gradients, NftBatch, NftLossConfig, VelocityModel};
use crate::simplex_qp::SimplexWeights;

/// One rank's slice of the batch and its advantage rows.
#[derive(Debug, Clone)]
pub struct WorkerShard {
    pub rank: usize,
    pub batch: NftBatch,
    pub advantages: AdvantageMatrix,
}

/// Partitions the batch into `world_size` contiguous, equal, rank-ordered
/// shards.
pub fn shard_batch(
    batch: &NftBatch,
    advantages: &AdvantageMatrix,
    world_size: usize,
) -> Result<Vec<WorkerShard>> {
    if world_size == 0 {
        return Err(Error::Shard("world_size must be >= 1".into()));
    }
    if advantages.rows() != batch.len() {
        return Err(Error::Dimension(format!(
            "{} advantage rows for {} batch elements",
            advantages.rows(),
            batch.len()
        )));
    }
    if !batch.len().is_multiple_of(world_size) {
        return Err(Error::Shard(format!(
            "batch of {} does not divide into {world_size} equal shards",
            batch.len()
        )));
    }
    let shard_len = batch.len() / world_size;
    (0..world_size)
        .map(|rank| {
            Ok(WorkerShard {
                rank,
                batch: batch.slice(rank * shard_len, shard_len)?,
                advantages: advantages.slice_rows(rank * shard_len, shard_len)?,
            })
        })
        .collect()
}

/// What one synchronized step produces.
#[derive(Debug, Clone)]
pub struct SyncOutcome {
    /// Per-reward gradients after cross-rank averaging.
    pub averaged_gradients: Vec<GradientVector>,
    /// Coefficients solved independently on each rank (verified identical).
    pub rank_alphas: Vec<SimplexWeights>,
    /// The agreed coefficients.
    pub alpha: SimplexWeights,
}

/// Runs the synchronization protocol: per-rank local per-reward gradients,
/// per-reward averaging in rank order, then an independent local solve on
/// every rank.
///
/// Errors with a synchronization violation if any two ranks' coefficients
/// diverge beyond 1e-12 (with deterministic reductions they agree bitwise).
pub fn simulate_sync_step(
    shards: &[WorkerShard],
    model: &VelocityModel,
    nft_config: &NftLossConfig,
    harmonizer_config: &HarmonizerConfig,
) -> Result<SyncOutcome> {
    if shards.is_empty() {
        return Err(Error::EmptyInput("no worker shards".into()));
    }
    let world_size = shards.len();
    let num_rewards = shards[0].advantages.num_rewards();

    // local per-reward gradients, synchronization suppressed
    let mut local: Vec<Vec<GradientVector>> = Vec::with_capacity(world_size);
    for shard in shards {
        if shard.advantages.num_rewards() != num_rewards {
            return Err(Error::Dimension(
                "shards disagree on the reward count".into(),
            ));
        }
        local.push(per_reward_gradients(
            model,
            &shard.batch,
            &shard.advantages,
            nft_config,
        )?);
    }

    // explicit per-reward all-reduce with average, sequential rank order
    let mut averaged = Vec::with_capacity(num_rewards);
    for k in 0..num_rewards {
        let mut sum = GradientVector::zeros(model.param_count());
        for rank_grads in &local {
            sum.add_scaled(&rank_grads[k], 1.0)?;
        }
        sum.scale_in_place(1.0 / world_size as f64);
        averaged.push(sum);
    }

    // every rank solves locally on the averaged gradients
    let mut rank_alphas = Vec::with_capacity(world_size);
    for _rank in 0..world_size {
        let solve = solve_full_harmonization(&averaged, harmonizer_config)?;
        rank_alphas.push(solve.alpha);
    }
    let reference = rank_alphas[0].clone();
    for (rank, alpha) in rank_alphas.iter().enumerate() {
        for (a, b) in alpha.as_slice().iter().zip(reference.as_slice()) {
            if (a - b).abs() > 1e-12 {
                return Err(Error::SyncViolation(format!(
                    "rank {rank} solved different coefficients than rank 0"
                )));
            }
        }
    }

    Ok(SyncOutcome {
        averaged_gradients: averaged,
        rank_alphas,
        alpha: reference,
    })
}

/// The failure mode the protocol exists to avoid: gradients accumulate across
/// the K backward passes without being zeroed in between, so what gets
/// extracted for reward k is the running sum of the first k+1 gradients.
/// Returned for tests to assert the corruption is real.
pub fn simulate_premature_sync(
    shards: &[WorkerShard],
    model: &VelocityModel,
    nft_config: &NftLossConfig,
) -> Result<Vec<GradientVector>> {
    if shards.is_empty() {
        return Err(Error::EmptyInput("no worker shards".into()));
    }
    let world_size = shards.len();
    let num_rewards = shards[0].advantages.num_rewards();
    let mut corrupted: Vec<GradientVector> =
        vec![GradientVector::zeros(model.param_count()); num_rewards];
    for shard in shards {
        let per_reward = per_reward_gradients(model, &shard.batch, &shard.advantages, nft_config)?;
        let mut running = GradientVector::zeros(model.param_count());
        for (k, g) in per_reward.iter().enumerate() {
            running.add_scaled(g, 1.0)?;
            corrupted[k].add_scaled(&running, 1.0)?;
        }
    }
    for g in &mut corrupted {
        g.scale_in_place(1.0 / world_size as f64);
    }
    Ok(corrupted)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nft::{ModelConfig, NftBatchElement};

    fn fixture(n: usize, k: usize) -> (VelocityModel, NftBatch, AdvantageMatrix) {
        let config = ModelConfig {
            state_dim: 2,
            num_conditions: 2,
            hidden_sizes: vec![6],
        };
        let model = VelocityModel::random_init(config, 5).unwrap();
        let elements: Vec<NftBatchElement> = (0..n)
            .map(|i| {
                let x = vec![0.05 * i as f64, -0.1];
                let t = 0.2 + 0.07 * (i % 5) as f64;
                let c = (i % 2) as u32;
                let v_old = model.forward_velocity(&x, t, c).unwrap();
                NftBatchElement {
                    x_t: x,
                    t,
                    target_v: vec![0.3, 0.2 - 0.04 * i as f64],
                    v_old,
                    condition: c,
                    source_index: i,
                }
            })
            .collect();
        let batch = NftBatch::new(elements, 2).unwrap();
        let entries: Vec<f64> = (0..n * k).map(|j| ((j as f64) * 0.917).sin()).collect();
        let adv =
            AdvantageMatrix::from_parts((0..n as u64).collect(), vec![0; n], k, entries, 1e-8)
                .unwrap();
        (model, batch, adv)
    }

    #[test]
    fn single_worker_shard_is_the_full_batch() {
        let (_, batch, adv) = fixture(8, 2);
        let shards = shard_batch(&batch, &adv, 1).unwrap();
        assert_eq!(shards.len(), 1);
        assert_eq!(shards[0].batch.len(), 8);
        assert_eq!(shards[0].advantages.rows(), 8);
    }

    #[test]
    fn two_workers_split_evenly_and_disjointly() {
        let (_, batch, adv) = fixture(8, 2);
        let shards = shard_batch(&batch, &adv, 2).unwrap();
        assert_eq!(shards.len(), 2);
        assert_eq!(shards[0].batch.len(), 4);
        assert_eq!(shards[1].batch.len(), 4);
        assert_eq!(shards[0].batch.elements()[0].source_index, 0);
        assert_eq!(shards[1].batch.elements()[0].source_index, 4);
    }

    #[test]
    fn indivisible_batches_are_rejected() {
        let (_, batch, adv) = fixture(7, 2);
        assert!(matches!(shard_batch(&batch, &adv, 2), Err(Error::Shard(_))));
    }

    #[test]
    fn single_worker_matches_direct_harmonization() {
        let (model, batch, adv) = fixture(8, 3);
        let nft_config = NftLossConfig::default();
        let h_config = HarmonizerConfig::default();
        let shards = shard_batch(&batch, &adv, 1).unwrap();
        let outcome = simulate_sync_step(&shards, &model, &nft_config, &h_config).unwrap();

        let direct = per_reward_gradients(&model, &batch, &adv, &nft_config).unwrap();
        let solve = solve_full_harmonization(&direct, &h_config).unwrap();
        for (a, b) in outcome.averaged_gradients.iter().zip(&direct) {
            assert!(a.max_abs_diff(b).unwrap() < 1e-15);
        }
        assert_eq!(outcome.alpha, solve.alpha);
    }

    #[test]
    fn averaged_shards_match_the_full_batch() {
        let (model, batch, adv) = fixture(8, 3);
        let nft_config = NftLossConfig::default();
        let full = per_reward_gradients(&model, &batch, &adv, &nft_config).unwrap();
        for world_size in [1usize, 2, 4] {
            let shards = shard_batch(&batch, &adv, world_size).unwrap();
            let outcome =
                simulate_sync_step(&shards, &model, &nft_config, &HarmonizerConfig::default())
                    .unwrap();
            for (a, b) in outcome.averaged_gradients.iter().zip(&full) {
                assert!(
                    a.max_abs_diff(b).unwrap() < 1e-12,
                    "world_size {world_size} diverged from the full batch"
                );
            }
        }
    }

    #[test]
    fn all_ranks_agree_bitwise() {
        let (model, batch, adv) = fixture(8, 3);
        let shards = shard_batch(&batch, &adv, 4).unwrap();
        let outcome = simulate_sync_step(
            &shards,
            &model,
            &NftLossConfig::default(),
            &HarmonizerConfig::default(),
        )
        .unwrap();
        for alpha in &outcome.rank_alphas {
            assert_eq!(alpha, &outcome.alpha);
        }
    }

    #[test]
    fn premature_accumulation_corrupts_later_rewards() {
        let (model, batch, adv) = fixture(8, 3);
        let nft_config = NftLossConfig::default();
        let shards = shard_batch(&batch, &adv, 2).unwrap();
        let correct =
            simulate_sync_step(&shards, &model, &nft_config, &HarmonizerConfig::default())
                .unwrap()
                .averaged_gradients;
        let corrupted = simulate_premature_sync(&shards, &model, &nft_config).unwrap();
        // reward 0 happens to survive; every later reward is polluted by the
        // running sum
        for k in 1..3 {
            let diff = corrupted[k].max_abs_diff(&correct[k]).unwrap();
            assert!(diff > 1e-6, "reward {k} should be corrupted, diff {diff}");
        }
    }
}
