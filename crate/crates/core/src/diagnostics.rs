//! Update-direction harmony statistics and metrics files.
//!
//! For an update direction `d` and per-reward gradients `g_k`, the harmony
//! report carries the K cosines `cos(d, g_k)` with their min, mean, and
//! population variance over rewards; a step is in conflict when the worst
//! cosine is negative, because the shared update then pushes against that
//! reward's own gradient on the same batch. Cosines are measured against the
//! raw per-reward gradients, not the unit-normalized ones.
//!
//! # File formats
//!
//! Metrics are append-only JSONL, one [`StepRecord`] per line with the fixed
//! field set `step, mode, alpha_star, alpha_ema, mean_norm, grad_norms,
//! qp_solve_count, pareto_fallback_used, clamp_activation_count,
//! degenerate_qp_count`. `grad_norms` is empty on steps without a coefficient
//! refresh (per-reward gradients are only materialized on refresh steps).
//!
//! Companion CSVs: reward curves as `step,R1,...,RK` (per-step batch-mean raw
//! rewards) and coefficient curves as `step,alpha1,...,alphaK,pareto_fallback_used`
//! (EMA-smoothed coefficients). Floats carry 6 significant digits.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::advantage::{format_sig6, AdvantageMatrix};
use crate::error::{Error, Result};
use crate::gradient::GradientVector;

/// Per-step alignment statistics for one update rule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HarmonyReport {
    /// `cos(d, g_k)` per reward.
    pub cosines: Vec<f64>,
    pub min_cos: f64,
    pub mean_cos: f64,
    /// Population variance over the K cosines.
    pub var_cos: f64,
    /// The direction is anti-aligned with at least one reward gradient.
    pub conflict: bool,
    /// Number of zero vectors among the inputs (their cosine is reported 0).
    pub zero_inputs: usize,
}

/// Computes cosine alignment of a direction against each per-reward gradient.
pub fn harmony_stats(
    direction: &GradientVector,
    gradients: &[GradientVector],
) -> Result<HarmonyReport> {
    if gradients.is_empty() {
        return Err(Error::EmptyInput("no gradients to compare against".into()));
    }
    let mut zero_inputs = if direction.norm() == 0.0 { 1 } else { 0 };
    let mut cosines = Vec::with_capacity(gradients.len());
    for g in gradients {
        if g.len() != direction.len() {
            return Err(Error::Dimension(format!(
                "gradient length {} vs direction length {}",
                g.len(),
                direction.len()
            )));
        }
        if g.norm() == 0.0 {
            zero_inputs += 1;
        }
        cosines.push(direction.cosine(g)?);
    }
    let k = cosines.len() as f64;
    let min_cos = cosines.iter().cloned().fold(f64::INFINITY, f64::min);
    let mean_cos = cosines.iter().sum::<f64>() / k;
    let var_cos = cosines
        .iter()
        .map(|c| (c - mean_cos) * (c - mean_cos))
        .sum::<f64>()
        / k;
    Ok(HarmonyReport {
        conflict: min_cos < 0.0,
        cosines,
        min_cos,
        mean_cos,
        var_cos,
        zero_inputs,
    })
}

/// Fraction of samples whose advantage is concentrated on a single reward
/// column: the largest entry is positive and beats the runner-up by at least
/// `margin` standard deviations. Quantifies the specialist-sample structure
/// for the toy setting.
pub fn specialist_fraction(matrix: &AdvantageMatrix, margin: f64) -> Result<f64> {
    if matrix.rows() == 0 {
        return Err(Error::EmptyInput("empty advantage matrix".into()));
    }
    if matrix.num_rewards() < 2 {
        return Err(Error::Dimension(
            "specialist structure needs at least two rewards".into(),
        ));
    }
    let mut concentrated = 0usize;
    for i in 0..matrix.rows() {
        let mut best = f64::NEG_INFINITY;
        let mut second = f64::NEG_INFINITY;
        for k in 0..matrix.num_rewards() {
            let a = matrix.entry(i, k);
            if a > best {
                second = best;
                best = a;
            } else if a > second {
                second = a;
            }
        }
        if best > 0.0 && best - second >= margin {
            concentrated += 1;
        }
    }
    Ok(concentrated as f64 / matrix.rows() as f64)
}

/// Fraction of reports where the update direction conflicted with at least
/// one reward gradient.
pub fn aggregate_conflict_rate(reports: &[HarmonyReport]) -> Result<f64> {
    if reports.is_empty() {
        return Err(Error::EmptyInput("no harmony reports".into()));
    }
    let conflicts = reports.iter().filter(|r| r.conflict).count();
    Ok(conflicts as f64 / reports.len() as f64)
}

/// One line of the metrics JSONL. Field names are part of the file format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: u64,
    pub mode: String,
    /// Most recently solved coefficients.
    pub alpha_star: Vec<f64>,
    /// EMA-smoothed coefficients in force this step.
    pub alpha_ema: Vec<f64>,
    /// Mean raw per-reward gradient norm at the last refresh.
    pub mean_norm: f64,
    /// Raw per-reward gradient norms; empty on non-refresh steps.
    pub grad_norms: Vec<f64>,
    pub qp_solve_count: u64,
    pub pareto_fallback_used: u64,
    pub clamp_activation_count: u64,
    pub degenerate_qp_count: u64,
}

/// Writes records as JSONL, one per line. Zero records create an empty file.
pub fn write_metrics(records: &[StepRecord], path: &Path) -> Result<()> {
    let mut out = String::new();
    for record in records {
        let line = serde_json::to_string(record)
            .map_err(|e| Error::Config(format!("metrics serialization: {e}")))?;
        out.push_str(&line);
        out.push('\n');
    }
    let mut file = std::fs::File::create(path)?;
    file.write_all(out.as_bytes())?;
    Ok(())
}

/// Parses a metrics JSONL file back into records.
pub fn read_metrics(path: &Path) -> Result<Vec<StepRecord>> {
    let text = std::fs::read_to_string(path)?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(|e| Error::Config(format!("metrics parse: {e}"))))
        .collect()
}

/// One reward-curve row: per-step batch-mean raw rewards.
#[derive(Debug, Clone, PartialEq)]
pub struct RewardCurvePoint {
    pub step: u64,
    pub mean_rewards: Vec<f64>,
}

/// Writes per-step mean raw rewards as `step,R1,...,RK`.
pub fn write_reward_curves(points: &[RewardCurvePoint], path: &Path) -> Result<()> {
    let k = points.first().map_or(0, |p| p.mean_rewards.len());
    let mut out = String::from("step");
    for i in 0..k {
        out.push_str(&format!(",R{}", i + 1));
    }
    out.push('\n');
    for p in points {
        if p.mean_rewards.len() != k {
            return Err(Error::Dimension("ragged reward curve rows".into()));
        }
        out.push_str(&p.step.to_string());
        for r in &p.mean_rewards {
            out.push(',');
            out.push_str(&format_sig6(*r));
        }
        out.push('\n');
    }
    let mut file = std::fs::File::create(path)?;
    file.write_all(out.as_bytes())?;
    Ok(())
}

/// One coefficient-curve row: smoothed coefficients plus the fallback counter.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientCurvePoint {
    pub step: u64,
    pub alpha: Vec<f64>,
    pub pareto_fallback_used: u64,
}

/// Writes per-step smoothed coefficients as
/// `step,alpha1,...,alphaK,pareto_fallback_used`.
pub fn write_coefficient_curves(points: &[CoefficientCurvePoint], path: &Path) -> Result<()> {
    let k = points.first().map_or(0, |p| p.alpha.len());
    let mut out = String::from("step");
    for i in 0..k {
        out.push_str(&format!(",alpha{}", i + 1));
    }
    out.push_str(",pareto_fallback_used\n");
    for p in points {
        if p.alpha.len() != k {
            return Err(Error::Dimension("ragged coefficient curve rows".into()));
        }
        out.push_str(&p.step.to_string());
        for a in &p.alpha {
            out.push(',');
            out.push_str(&format_sig6(*a));
        }
        out.push_str(&format!(",{}\n", p.pareto_fallback_used));
    }
    let mut file = std::fs::File::create(path)?;
    file.write_all(out.as_bytes())?;
    Ok(())
}
