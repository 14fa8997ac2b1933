//! Estimated vs. exact χ² for shifted unit-variance Gaussians.

use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::plot::{LinePlot, Series};
use super::{write_json, ExperimentConfig};
use crate::distzoo::{Distribution, DistributionSpec};
use crate::error::{Error, Result};
use crate::fisher::{constraint_gap, estimate_ipm, TrainConfig, TrainingData};
use crate::oracle;

/// `N(0, I_d)` and `N(shift e_1, I_d)`.
pub fn shifted_pair(dim: usize, shift: f64) -> (DistributionSpec, DistributionSpec) {
    let mut mean = vec![0.0; dim];
    let p = DistributionSpec::gaussian(mean.clone(), 1.0);
    mean[0] = shift;
    (p, DistributionSpec::gaussian(mean, 1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fig2Row {
    pub shift: f64,
    pub n_train: usize,
    pub seed: u64,
    pub oracle_chi2: f64,
    pub estimate: f64,
    pub standard_error: f64,
    pub abs_error: f64,
    /// `abs_error / oracle_chi2`; blank for a zero oracle.
    pub rel_error: Option<f64>,
    pub final_omega: f64,
    pub final_lambda: f64,
    /// Mean `|Ω̂ - 1|` over the final tenth of training.
    pub constraint_gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fig2Report {
    pub rows: Vec<Fig2Row>,
    /// Mean absolute error per training-set size over shifts whose oracle
    /// χ² is at least [`SLOPE_MIN_CHI2`], all seeds.
    pub mean_error_by_n: Vec<(usize, f64)>,
    /// Least-squares slope of `log(mean error)` against `log(n)`.
    pub slope: Option<f64>,
}

/// Shifts below this oracle distance are left out of the slope fit.
pub const SLOPE_MIN_CHI2: f64 = 0.5;

/// Least-squares slope of `log y` on `log x`.
pub fn loglog_slope(points: &[(f64, f64)]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = points
        .iter()
        .filter(|(x, y)| *x > 0.0 && *y > 0.0)
        .map(|(x, y)| (x.ln(), y.ln()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

/// Runs every `(shift, n_train, seed)` point of the sweep. Points run in
/// parallel; rows come back in grid order.
pub fn run_fig2(cfg: &ExperimentConfig, out_dir: Option<&Path>) -> Result<Fig2Report> {
    let sweep = &cfg.sweep;
    sweep.validate()?;
    let train = cfg.train.fitted_to(sweep.dim);
    train.validate()?;
    let oracles: Vec<f64> = sweep
        .shifts
        .iter()
        .map(|&s| {
            let (p, q) = shifted_pair(sweep.dim, s);
            let (p, q) = (Distribution::new(p)?, Distribution::new(q)?);
            Ok(oracle::chi2_distance(&p, &q, &cfg.quadrature)?.value)
        })
        .collect::<Result<_>>()?;
    let mut points = Vec::new();
    for (i, &shift) in sweep.shifts.iter().enumerate() {
        for &n in &sweep.n_train {
            for &seed in &sweep.seeds {
                points.push((i, shift, n, seed));
            }
        }
    }
    let rows: Vec<Fig2Row> = points
        .par_iter()
        .map(|&(i, shift, n, seed)| {
            let (p, q) = shifted_pair(sweep.dim, shift);
            let run_cfg = TrainConfig {
                seed,
                ..train.clone()
            };
            let est = estimate_ipm(&p, &q, &run_cfg, TrainingData::Fixed(n), sweep.n_eval)?;
            let oracle_chi2 = oracles[i];
            let abs_error = (est.eval.ratio - oracle_chi2).abs();
            let last = est.metrics.last();
            Ok(Fig2Row {
                shift,
                n_train: n,
                seed,
                oracle_chi2,
                estimate: est.eval.ratio,
                standard_error: est.eval.standard_error,
                abs_error,
                rel_error: (oracle_chi2 > 0.0).then(|| abs_error / oracle_chi2),
                final_omega: last.map_or(f64::NAN, |m| m.omega_hat),
                final_lambda: last.map_or(f64::NAN, |m| m.lambda),
                constraint_gap: constraint_gap(&est.metrics).unwrap_or(f64::NAN),
            })
        })
        .collect::<Result<_>>()?;

    let mut by_n: BTreeMap<usize, (f64, usize)> = BTreeMap::new();
    for r in rows.iter().filter(|r| r.oracle_chi2 >= SLOPE_MIN_CHI2) {
        let e = by_n.entry(r.n_train).or_default();
        e.0 += r.abs_error;
        e.1 += 1;
    }
    let mean_error_by_n: Vec<(usize, f64)> = by_n
        .into_iter()
        .map(|(n, (s, c))| (n, s / c as f64))
        .collect();
    let slope = loglog_slope(
        &mean_error_by_n
            .iter()
            .map(|&(n, e)| (n as f64, e))
            .collect::<Vec<_>>(),
    );
    let report = Fig2Report {
        rows,
        mean_error_by_n,
        slope,
    };
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir)?;
        let csv_path = dir.join("fig2.csv");
        write_rows(&csv_path, &report.rows)?;
        write_json(&dir.join("fig2_summary.json"), &report)?;
        for (name, plot) in panels(&report.rows) {
            std::fs::write(dir.join(format!("fig2_{name}.svg")), plot.to_svg())?;
        }
    }
    Ok(report)
}

fn write_rows(path: &Path, rows: &[Fig2Row]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::MalformedCsv(e.to_string()))?;
    for r in rows {
        w.serialize(r)
            .map_err(|e| Error::MalformedCsv(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

pub(crate) fn read_rows(path: &Path) -> Result<Vec<Fig2Row>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::MalformedCsv(e.to_string()))?;
    let rows: Vec<Fig2Row> = r
        .deserialize()
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| Error::MalformedCsv(e.to_string()))?;
    if rows.is_empty() {
        return Err(Error::MalformedCsv(format!(
            "{} has no data rows",
            path.display()
        )));
    }
    Ok(rows)
}

/// Estimate and oracle against shift, and error against `n_train` on log-log
/// axes, averaged over seeds.
pub(crate) fn panels(rows: &[Fig2Row]) -> Vec<(String, LinePlot)> {
    let key = |v: f64| (v * 1e9).round() as i64;
    let mut oracle: BTreeMap<i64, (f64, f64)> = BTreeMap::new();
    let mut est: BTreeMap<usize, BTreeMap<i64, (f64, f64, usize)>> = BTreeMap::new();
    let mut err: BTreeMap<i64, BTreeMap<usize, (f64, usize)>> = BTreeMap::new();
    for r in rows {
        oracle.insert(key(r.shift), (r.shift, r.oracle_chi2));
        let e = est
            .entry(r.n_train)
            .or_default()
            .entry(key(r.shift))
            .or_insert((r.shift, 0.0, 0));
        e.1 += r.estimate;
        e.2 += 1;
        if r.shift != 0.0 {
            let e = err
                .entry(key(r.shift))
                .or_default()
                .entry(r.n_train)
                .or_default();
            e.0 += r.abs_error;
            e.1 += 1;
        }
    }
    let mut series = vec![Series {
        dashed: true,
        markers: true,
        ..Series::line("oracle χ²", oracle.values().copied().collect())
    }];
    for (n, pts) in &est {
        series.push(Series {
            markers: true,
            ..Series::line(
                format!("n = {n}"),
                pts.values()
                    .map(|&(s, sum, c)| (s, sum / c as f64))
                    .collect(),
            )
        });
    }
    let mut out = vec![(
        "estimate_vs_shift".to_string(),
        LinePlot {
            title: "Fisher IPM estimate vs. exact χ²".into(),
            x_label: "shift".into(),
            y_label: "distance".into(),
            log_x: false,
            log_y: false,
            series,
        },
    )];
    if !err.is_empty() {
        let series = err
            .iter()
            .map(|(k, by_n)| Series {
                markers: true,
                ..Series::line(
                    format!("shift = {}", *k as f64 / 1e9),
                    by_n.iter()
                        .map(|(&n, &(s, c))| (n as f64, s / c as f64))
                        .collect(),
                )
            })
            .collect();
        out.push((
            "error_vs_n".to_string(),
            LinePlot {
                title: "absolute error vs. training samples".into(),
                x_label: "n_train".into(),
                y_label: "|estimate - χ²|".into(),
                log_x: true,
                log_y: true,
                series,
            },
        ));
    }
    out
}
