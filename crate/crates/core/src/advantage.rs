//! Per-reward, per-prompt-group reward statistics and z-score advantages.
//!
//! Each sample carries K raw reward values. Within a prompt group the k-th
//! reward is standardized to `A_k(x) = (R_k(x) - mean_k) / (std_k + eps)`,
//! which credits a sample only on the reward dimensions where it stands out
//! from its group. The advantage then maps to the loss interpolation
//! coefficient `r = clamp(1/2 + A / (2 A_max), 0, 1)`.
//!
//! Two accumulation modes exist: per-batch statistics (the default; mean and
//! std come from the current rollout group only, so results are deterministic
//! and self-contained) and persistent running statistics across batches.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One scored rollout: identifiers plus the raw reward vector.
#[derive(Debug, Clone, PartialEq)]
pub struct RewardSample {
    pub sample_id: u64,
    /// Group key; samples sharing a prompt are standardized together.
    pub prompt_id: u32,
    /// Raw reward values, one per reward model, in reward-model units.
    pub rewards: Vec<f64>,
}

impl RewardSample {
    pub fn new(sample_id: u64, prompt_id: u32, rewards: Vec<f64>) -> Result<Self> {
        if rewards.iter().any(|r| !r.is_finite()) {
            return Err(Error::Numeric(format!(
                "non-finite reward for sample {sample_id}"
            )));
        }
        Ok(Self {
            sample_id,
            prompt_id,
            rewards,
        })
    }
}

/// Numerically stable single-pass accumulator.
#[derive(Debug, Clone, Default)]
struct Welford {
    count: u64,
    mean: f64,
    m2: f64,
}

impl Welford {
    fn push(&mut self, value: f64) {
        self.count += 1;
        let delta = value - self.mean;
        self.mean += delta / self.count as f64;
        self.m2 += delta * (value - self.mean);
    }

    /// Population standard deviation (divide by n).
    fn std(&self) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            (self.m2 / self.count as f64).max(0.0).sqrt()
        }
    }
}

/// Mean, population std, and count for one (prompt, reward) group.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroupStats {
    pub mean: f64,
    pub std: f64,
    pub count: u64,
}

/// Per-(prompt, reward) statistics store. Single writer; iteration order is
/// the sorted key order, so results never depend on insertion history.
#[derive(Debug, Clone)]
pub struct GroupStatsStore {
    num_rewards: usize,
    groups: BTreeMap<(u32, usize), Welford>,
}

impl GroupStatsStore {
    pub fn new(num_rewards: usize) -> Self {
        Self {
            num_rewards,
            groups: BTreeMap::new(),
        }
    }

    pub fn num_rewards(&self) -> usize {
        self.num_rewards
    }

    pub fn get(&self, prompt_id: u32, reward_index: usize) -> Option<GroupStats> {
        self.groups
            .get(&(prompt_id, reward_index))
            .map(|w| GroupStats {
                mean: w.mean,
                std: w.std(),
                count: w.count,
            })
    }

    pub fn clear(&mut self) {
        self.groups.clear();
    }
}

/// Accumulates the batch into per-(prompt, reward) statistics, in input order.
pub fn update_group_stats(store: &mut GroupStatsStore, batch: &[RewardSample]) -> Result<()> {
    if batch.is_empty() {
        return Err(Error::EmptyInput("empty reward batch".into()));
    }
    for sample in batch {
        if sample.rewards.len() != store.num_rewards {
            return Err(Error::Dimension(format!(
                "sample {} has {} rewards, store expects {}",
                sample.sample_id,
                sample.rewards.len(),
                store.num_rewards
            )));
        }
        if sample.rewards.iter().any(|r| !r.is_finite()) {
            return Err(Error::Numeric(format!(
                "non-finite reward rejected for sample {}",
                sample.sample_id
            )));
        }
    }
    for sample in batch {
        for (k, &r) in sample.rewards.iter().enumerate() {
            store
                .groups
                .entry((sample.prompt_id, k))
                .or_default()
                .push(r);
        }
    }
    Ok(())
}

/// Samples x rewards table of z-score advantages.
#[derive(Debug, Clone, PartialEq)]
pub struct AdvantageMatrix {
    sample_ids: Vec<u64>,
    prompt_ids: Vec<u32>,
    num_rewards: usize,
    /// row-major, rows() * num_rewards
    entries: Vec<f64>,
    epsilon: f64,
}

impl AdvantageMatrix {
    pub fn from_parts(
        sample_ids: Vec<u64>,
        prompt_ids: Vec<u32>,
        num_rewards: usize,
        entries: Vec<f64>,
        epsilon: f64,
    ) -> Result<Self> {
        if sample_ids.len() != prompt_ids.len() {
            return Err(Error::Dimension("sample/prompt id lengths differ".into()));
        }
        if entries.len() != sample_ids.len() * num_rewards {
            return Err(Error::Dimension(format!(
                "{} entries for {} rows x {} rewards",
                entries.len(),
                sample_ids.len(),
                num_rewards
            )));
        }
        if entries.iter().any(|x| !x.is_finite()) {
            return Err(Error::Numeric("non-finite advantage entry".into()));
        }
        Ok(Self {
            sample_ids,
            prompt_ids,
            num_rewards,
            entries,
            epsilon,
        })
    }

    pub fn rows(&self) -> usize {
        self.sample_ids.len()
    }

    pub fn num_rewards(&self) -> usize {
        self.num_rewards
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.entries[i * self.num_rewards..(i + 1) * self.num_rewards]
    }

    pub fn entry(&self, i: usize, k: usize) -> f64 {
        self.entries[i * self.num_rewards + k]
    }

    pub fn sample_id(&self, i: usize) -> u64 {
        self.sample_ids[i]
    }

    pub fn prompt_id(&self, i: usize) -> u32 {
        self.prompt_ids[i]
    }

    pub fn column(&self, k: usize) -> Vec<f64> {
        (0..self.rows()).map(|i| self.entry(i, k)).collect()
    }

    /// Contiguous row slice as its own matrix (used for worker shards).
    pub fn slice_rows(&self, start: usize, len: usize) -> Result<Self> {
        if start + len > self.rows() {
            return Err(Error::Dimension(format!(
                "row slice {start}..{} out of {} rows",
                start + len,
                self.rows()
            )));
        }
        Ok(Self {
            sample_ids: self.sample_ids[start..start + len].to_vec(),
            prompt_ids: self.prompt_ids[start..start + len].to_vec(),
            num_rewards: self.num_rewards,
            entries: self.entries[start * self.num_rewards..(start + len) * self.num_rewards]
                .to_vec(),
            epsilon: self.epsilon,
        })
    }
}

/// Applies the z-score map entrywise using the statistics in `store`.
///
/// Zero-spread groups produce advantage exactly 0 for every member: the
/// numerator `R - mean` vanishes identically, independent of `epsilon`.
pub fn compute_advantages(
    store: &GroupStatsStore,
    batch: &[RewardSample],
    epsilon: f64,
) -> Result<AdvantageMatrix> {
    if !(epsilon > 0.0) {
        return Err(Error::Parameter(format!(
            "epsilon must be > 0, got {epsilon}"
        )));
    }
    if batch.is_empty() {
        return Err(Error::EmptyInput("empty reward batch".into()));
    }
    let k = store.num_rewards();
    let mut entries = Vec::with_capacity(batch.len() * k);
    let mut sample_ids = Vec::with_capacity(batch.len());
    let mut prompt_ids = Vec::with_capacity(batch.len());
    for sample in batch {
        if sample.rewards.len() != k {
            return Err(Error::Dimension(format!(
                "sample {} has {} rewards, store expects {k}",
                sample.sample_id,
                sample.rewards.len()
            )));
        }
        for (idx, &r) in sample.rewards.iter().enumerate() {
            let stats = store.get(sample.prompt_id, idx).ok_or_else(|| {
                Error::MissingGroup(format!(
                    "no statistics for prompt {} reward {idx}",
                    sample.prompt_id
                ))
            })?;
            entries.push((r - stats.mean) / (stats.std + epsilon));
        }
        sample_ids.push(sample.sample_id);
        prompt_ids.push(sample.prompt_id);
    }
    AdvantageMatrix::from_parts(sample_ids, prompt_ids, k, entries, epsilon)
}

/// The advantage-to-interpolation-coefficient map with its clamp state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InterpolationCoefficient {
    /// `clamp(1/2 + A / (2 A_max), 0, 1)`.
    pub r: f64,
    pub a_max: f64,
    /// True iff `|A| >= A_max` (the affine map left [0, 1]).
    pub clamp_active: bool,
}

/// Maps an advantage to the loss interpolation coefficient.
pub fn advantage_to_r(advantage: f64, a_max: f64) -> Result<InterpolationCoefficient> {
    if !(a_max > 0.0) {
        return Err(Error::Parameter(format!("a_max must be > 0, got {a_max}")));
    }
    if !advantage.is_finite() {
        return Err(Error::Numeric("non-finite advantage".into()));
    }
    let raw = 0.5 + advantage / (2.0 * a_max);
    Ok(InterpolationCoefficient {
        r: raw.clamp(0.0, 1.0),
        a_max,
        clamp_active: advantage.abs() >= a_max,
    })
}

/// Statistics accumulation window.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StatsMode {
    /// Mean/std from the current rollout group only (default).
    #[default]
    PerBatch,
    /// Persistent accumulation across all batches seen so far.
    Running,
}

/// Owns a statistics store and applies the configured accumulation window.
#[derive(Debug, Clone)]
pub struct AdvantageEngine {
    mode: StatsMode,
    epsilon: f64,
    store: GroupStatsStore,
}

impl AdvantageEngine {
    pub fn new(num_rewards: usize, mode: StatsMode, epsilon: f64) -> Result<Self> {
        if !(epsilon > 0.0) {
            return Err(Error::Parameter(format!(
                "epsilon must be > 0, got {epsilon}"
            )));
        }
        Ok(Self {
            mode,
            epsilon,
            store: GroupStatsStore::new(num_rewards),
        })
    }

    pub fn mode(&self) -> StatsMode {
        self.mode
    }

    pub fn store(&self) -> &GroupStatsStore {
        &self.store
    }

    /// Observes a batch and returns its advantage matrix.
    pub fn process(&mut self, batch: &[RewardSample]) -> Result<AdvantageMatrix> {
        if self.mode == StatsMode::PerBatch {
            self.store.clear();
        }
        update_group_stats(&mut self.store, batch)?;
        compute_advantages(&self.store, batch, self.epsilon)
    }
}

/// Collapses each sample's reward vector to the single scalar
/// `sum_k w_k R_k`, the aggregation the scalarized baseline trains on. The
/// scalar is z-scored afterwards like any other reward, which is exactly what
/// dilutes specialist samples: their one strong dimension drowns in the sum
/// before standardization ever sees it.
pub fn scalarize_rewards(batch: &[RewardSample], weights: &[f64]) -> Result<Vec<RewardSample>> {
    let mut out = Vec::with_capacity(batch.len());
    for sample in batch {
        if sample.rewards.len() != weights.len() {
            return Err(Error::Dimension(format!(
                "sample {} has {} rewards, {} weights given",
                sample.sample_id,
                sample.rewards.len(),
                weights.len()
            )));
        }
        let combined: f64 = sample.rewards.iter().zip(weights).map(|(r, w)| r * w).sum();
        out.push(RewardSample::new(
            sample.sample_id,
            sample.prompt_id,
            vec![combined],
        )?);
    }
    Ok(out)
}

/// Renders a float with 6 significant digits, stable across runs.
pub(crate) fn format_sig6(x: f64) -> String {
    format!("{x:.5e}")
}

/// Writes the samples x rewards advantage matrix as CSV for plotting.
///
/// Header is `sample_id,prompt_id,R1,...,RK`; one row per sample, ordered by
/// `sample_id`; floats carry 6 significant digits. Re-exporting the same
/// matrix yields a byte-identical file.
pub fn export_specialist_heatmap(matrix: &AdvantageMatrix, path: &Path) -> Result<()> {
    if matrix.rows() == 0 {
        return Err(Error::EmptyInput("empty advantage matrix".into()));
    }
    let mut order: Vec<usize> = (0..matrix.rows()).collect();
    order.sort_by_key(|&i| matrix.sample_id(i));

    let mut out = String::new();
    out.push_str("sample_id,prompt_id");
    for k in 0..matrix.num_rewards() {
        out.push_str(&format!(",R{}", k + 1));
    }
    out.push('\n');
    for &i in &order {
        out.push_str(&format!("{},{}", matrix.sample_id(i), matrix.prompt_id(i)));
        for k in 0..matrix.num_rewards() {
            out.push(',');
            out.push_str(&format_sig6(matrix.entry(i, k)));
        }
        out.push('\n');
    }
    let mut file = std::fs::File::create(path)?;
    file.write_all(out.as_bytes())?;
    Ok(())
}
