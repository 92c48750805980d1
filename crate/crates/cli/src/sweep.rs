//! Hyperparameter sweeps over the amortization interval or the EMA decay.
//!
//! Each cell runs the base experiment at one axis value across all seeds and
//! contributes one summary row: final mean rewards (averaged over seeds) plus
//! harmony statistics of the harmonized direction. Cells may run on worker
//! threads (`HARMONY_THREADS`); each cell owns its output directory, so the
//! results are identical regardless of scheduling.

use std::io::Write;
use std::path::Path;

use anyhow::{bail, Context, Result};

use crate::config::{run_config, thread_count, ExperimentSettings};
use harmony_core::pipeline::run_training;

/// Which knob the sweep varies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum SweepAxis {
    /// Amortization interval N.
    Interval,
    /// EMA decay rho.
    EmaDecay,
}

impl SweepAxis {
    pub fn label(self) -> &'static str {
        match self {
            SweepAxis::Interval => "amortization_interval",
            SweepAxis::EmaDecay => "ema_decay",
        }
    }

    /// The default grid for each axis.
    pub fn default_values(self) -> Vec<f64> {
        match self {
            SweepAxis::Interval => vec![5.0, 10.0, 20.0],
            SweepAxis::EmaDecay => vec![0.1, 0.3, 0.5, 0.7, 0.9],
        }
    }
}

/// One summary row of the sweep.
#[derive(Debug, Clone)]
pub struct SweepCell {
    pub value: f64,
    /// Final per-reward means, averaged over seeds.
    pub final_rewards: Vec<f64>,
    /// Mean worst-reward cosine of the harmonized direction over refreshes.
    pub mean_min_cos: f64,
    pub conflict_rate: f64,
}

fn run_cell(settings: &ExperimentSettings, axis: SweepAxis, value: f64) -> Result<SweepCell> {
    let mut cell_settings = settings.clone();
    match axis {
        SweepAxis::Interval => {
            if value < 1.0 || value.fract() != 0.0 {
                bail!("interval values must be positive integers, got {value}");
            }
            cell_settings.harmonizer.amortization_interval = value as usize;
        }
        SweepAxis::EmaDecay => {
            if !(0.0..1.0).contains(&value) {
                bail!("ema decay values must lie in [0, 1), got {value}");
            }
            cell_settings.harmonizer.ema_decay = value;
        }
    }
    let k = cell_settings.scenario.num_rewards();
    let mut final_rewards = vec![0.0; k];
    let mut min_cos_sum = 0.0;
    let mut min_cos_count = 0usize;
    let mut conflicts = 0usize;
    let mut reports = 0usize;
    for &seed in &cell_settings.seeds {
        let artifacts = run_training(&run_config(&cell_settings, seed))?;
        for i in 0..k {
            final_rewards[i] += artifacts.final_eval[i] / cell_settings.seeds.len() as f64;
        }
        for report in &artifacts.harmony_harmonized {
            min_cos_sum += report.min_cos;
            min_cos_count += 1;
            if report.conflict {
                conflicts += 1;
            }
            reports += 1;
        }
    }
    Ok(SweepCell {
        value,
        final_rewards,
        mean_min_cos: if min_cos_count > 0 {
            min_cos_sum / min_cos_count as f64
        } else {
            0.0
        },
        conflict_rate: if reports > 0 {
            conflicts as f64 / reports as f64
        } else {
            0.0
        },
    })
}

/// Runs the grid and writes `summary.csv` into the output directory.
pub fn run_sweep(
    settings: &ExperimentSettings,
    axis: SweepAxis,
    values: &[f64],
    out_dir: &Path,
) -> Result<Vec<SweepCell>> {
    if values.is_empty() {
        bail!("sweep requires at least one axis value");
    }
    std::fs::create_dir_all(out_dir).with_context(|| format!("creating {}", out_dir.display()))?;

    let workers = thread_count().min(values.len());
    let mut cells: Vec<SweepCell> = if workers <= 1 {
        values
            .iter()
            .map(|&v| run_cell(settings, axis, v))
            .collect::<Result<_>>()?
    } else {
        std::thread::scope(|scope| {
            let handles: Vec<_> = values
                .iter()
                .map(|&v| scope.spawn(move || run_cell(settings, axis, v)))
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("sweep worker panicked"))
                .collect::<Result<Vec<_>>>()
        })?
    };
    cells.sort_by(|a, b| a.value.partial_cmp(&b.value).unwrap());

    let k = settings.scenario.num_rewards();
    let mut out = String::from(axis.label());
    for i in 0..k {
        out.push_str(&format!(",R{}_final", i + 1));
    }
    out.push_str(",mean_min_cos,conflict_rate\n");
    for cell in &cells {
        out.push_str(&format!("{}", cell.value));
        for r in &cell.final_rewards {
            out.push_str(&format!(",{r:.6e}"));
        }
        out.push_str(&format!(
            ",{:.6e},{:.6e}\n",
            cell.mean_min_cos, cell.conflict_rate
        ));
    }
    let mut file = std::fs::File::create(out_dir.join("summary.csv"))?;
    file.write_all(out.as_bytes())?;
    Ok(cells)
}
