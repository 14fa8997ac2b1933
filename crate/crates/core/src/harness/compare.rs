//! Constraint mechanisms side by side on one estimation task.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::fig2::shifted_pair;
use super::{write_json, write_metrics_csv, ExperimentConfig};
use crate::distzoo::Distribution;
use crate::error::{Error, Result};
use crate::fisher::{constraint_gap, estimate_ipm, ConstraintMode, TrainConfig, TrainingData};
use crate::oracle;

/// Critic magnitude treated as divergence.
pub const DIVERGENCE_THRESHOLD: f64 = 1e6;

/// Iterations dropped from the wallclock median.
pub const WARMUP_ITERATIONS: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareRow {
    pub mode: ConstraintMode,
    pub seed: u64,
    pub estimate: Option<f64>,
    pub oracle_chi2: f64,
    pub abs_error: Option<f64>,
    pub median_iter_ms: Option<f64>,
    pub diverged: bool,
    /// Mean `|Ω̂ - 1|` over the final tenth of training.
    pub constraint_gap: Option<f64>,
    pub failure: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareReport {
    /// Shift of the `N(0, I)` vs `N(shift e_1, I)` task.
    pub shift: f64,
    pub rows: Vec<CompareRow>,
}

impl CompareReport {
    pub fn rows_for(&self, mode: ConstraintMode) -> impl Iterator<Item = &CompareRow> {
        self.rows.iter().filter(move |r| r.mode == mode)
    }

    /// Median over seeds of the per-run median iteration time.
    pub fn median_ms(&self, mode: ConstraintMode) -> Option<f64> {
        median(
            self.rows_for(mode)
                .filter_map(|r| r.median_iter_ms)
                .collect(),
        )
    }
}

pub(crate) fn median(mut v: Vec<f64>) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    })
}

/// Runs every mode in `cfg.modes` for every sweep seed on the shifted pair
/// at `shift`. Numeric failures are recorded in the report, not returned.
pub fn run_baseline_compare(
    cfg: &ExperimentConfig,
    shift: f64,
    out_dir: Option<&Path>,
) -> Result<CompareReport> {
    cfg.sweep.validate()?;
    if cfg.modes.is_empty() {
        return Err(Error::InvalidConfig(
            "no constraint modes to compare".into(),
        ));
    }
    let train = cfg.train.fitted_to(cfg.sweep.dim);
    let (p, q) = shifted_pair(cfg.sweep.dim, shift);
    let oracle_chi2 = oracle::chi2_distance(
        &Distribution::new(p.clone())?,
        &Distribution::new(q.clone())?,
        &cfg.quadrature,
    )?
    .value;
    let data = match cfg.n_train {
        Some(n) => TrainingData::Fixed(n),
        None => TrainingData::Fresh,
    };
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir)?;
    }
    let mut rows = Vec::new();
    for &mode in &cfg.modes {
        for &seed in &cfg.sweep.seeds {
            let run_cfg = TrainConfig {
                mode,
                seed,
                ..train.clone()
            };
            run_cfg.validate()?;
            let row = match estimate_ipm(&p, &q, &run_cfg, data, cfg.sweep.n_eval) {
                Ok(est) => {
                    if let Some(dir) = out_dir {
                        write_metrics_csv(
                            &dir.join(format!("{}_seed{seed}.csv", mode.name())),
                            &est.metrics,
                        )?;
                    }
                    let times = est
                        .metrics
                        .iter()
                        .skip(WARMUP_ITERATIONS)
                        .map(|m| m.wall_ms)
                        .collect();
                    let diverged = !est.eval.ratio.is_finite()
                        || est.eval.max_abs_critic > DIVERGENCE_THRESHOLD;
                    CompareRow {
                        mode,
                        seed,
                        estimate: Some(est.eval.ratio),
                        oracle_chi2,
                        abs_error: Some((est.eval.ratio - oracle_chi2).abs()),
                        median_iter_ms: median(times),
                        diverged,
                        constraint_gap: constraint_gap(&est.metrics),
                        failure: None,
                    }
                }
                Err(
                    e
                    @ (Error::Diverged(_) | Error::NonFiniteLoss(_) | Error::NonFiniteGradient(_)),
                ) => CompareRow {
                    mode,
                    seed,
                    estimate: None,
                    oracle_chi2,
                    abs_error: None,
                    median_iter_ms: None,
                    diverged: true,
                    constraint_gap: None,
                    failure: Some(e.to_string()),
                },
                Err(e) => return Err(e),
            };
            rows.push(row);
        }
    }
    let report = CompareReport { shift, rows };
    if let Some(dir) = out_dir {
        write_json(&dir.join("compare.json"), &report)?;
    }
    Ok(report)
}
