//! Experiment configuration, sweeps, metrics persistence and plots.

mod compare;
mod fig2;
mod metrics;
mod plot;

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::diffnet::PARAMS_FORMAT_VERSION;
use crate::distzoo::DistributionSpec;
use crate::error::{Error, Result};
use crate::fisher::{ConstraintMode, TrainConfig};
use crate::oracle::QuadratureConfig;
use crate::ssl::SslConfig;

pub use compare::{run_baseline_compare, CompareReport, CompareRow};
pub use fig2::{loglog_slope, run_fig2, shifted_pair, Fig2Report, Fig2Row};
pub use metrics::{read_metrics_csv, write_metrics_csv, METRICS_FORMAT_VERSION};
pub use plot::{emit_plots, LinePlot, Series};

/// Environment variable naming the default output root.
pub const OUTPUT_ROOT_ENV: &str = "FISHERIPM_OUT";

pub const MANIFEST_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Experiment {
    Fig2Sweep,
    OracleCheck,
    Estimate,
    ToyGan,
    SslToy,
    BaselineCompare,
}

impl Experiment {
    pub fn dir_name(&self) -> &'static str {
        match self {
            Self::Fig2Sweep => "fig2",
            Self::OracleCheck => "oracle",
            Self::Estimate => "estimate",
            Self::ToyGan => "train-gan",
            Self::SslToy => "train-ssl",
            Self::BaselineCompare => "compare",
        }
    }
}

/// Sweep axes for the shifted-Gaussian experiments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    /// Dimension of the shifted pair `N(0, I)` vs `N(shift e_1, I)`.
    pub dim: usize,
    pub shifts: Vec<f64>,
    pub n_train: Vec<usize>,
    pub seeds: Vec<u64>,
    pub n_eval: usize,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            dim: 1,
            shifts: vec![0.0, 0.5, 1.0, 2.0, 4.0],
            n_train: vec![1_000, 10_000, 100_000],
            seeds: vec![0],
            n_eval: 100_000,
        }
    }
}

impl SweepConfig {
    pub fn validate(&self) -> Result<()> {
        if self.shifts.is_empty() || self.n_train.is_empty() || self.seeds.is_empty() {
            return Err(Error::InvalidConfig("sweep grids must be non-empty".into()));
        }
        if !(1..=2).contains(&self.dim) {
            return Err(Error::InvalidConfig("sweeps support d in {1, 2}".into()));
        }
        if self.shifts.iter().any(|s| !s.is_finite()) {
            return Err(Error::InvalidConfig("shifts must be finite".into()));
        }
        Ok(())
    }
}

/// Everything one CLI invocation needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: Option<Experiment>,
    pub p: DistributionSpec,
    pub q: DistributionSpec,
    /// Data distribution for GAN and SSL training.
    pub data: DistributionSpec,
    pub train: TrainConfig,
    pub ssl: SslConfig,
    pub quadrature: QuadratureConfig,
    pub sweep: SweepConfig,
    /// Constraint modes for the baseline comparison.
    pub modes: Vec<ConstraintMode>,
    /// Shift of the baseline comparison task.
    pub shift: f64,
    /// Fixed training-set size for single estimates; absent means fresh samples.
    pub n_train: Option<usize>,
    pub n_eval: usize,
    pub output_dir: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            experiment: None,
            p: DistributionSpec::gaussian(vec![0.0], 1.0),
            q: DistributionSpec::gaussian(vec![2.0], 1.0),
            data: DistributionSpec::ring(8, 2.0, 0.02),
            train: TrainConfig::default(),
            ssl: SslConfig::default(),
            quadrature: QuadratureConfig::default(),
            sweep: SweepConfig::default(),
            modes: vec![
                ConstraintMode::FisherAlm,
                ConstraintMode::WeightClip { c: 0.01 },
                ConstraintMode::gradient_penalty(),
                ConstraintMode::FGanChi2,
            ],
            shift: 2.0,
            n_train: None,
            n_eval: 100_000,
            output_dir: None,
        }
    }
}

impl ExperimentConfig {
    /// Parses a JSON config and applies `key=value` overrides in order.
    pub fn from_json(text: Option<&str>, overrides: &[String]) -> Result<Self> {
        let mut value = match text {
            Some(t) => serde_json::from_str(t).map_err(|e| Error::InvalidConfig(e.to_string()))?,
            None => Value::Object(Default::default()),
        };
        for o in overrides {
            apply_override(&mut value, o)?;
        }
        serde_json::from_value(value).map_err(|e| Error::InvalidConfig(e.to_string()))
    }

    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let text = path.map(std::fs::read_to_string).transpose()?;
        Self::from_json(text.as_deref(), overrides)
    }

    /// `output_dir`, else `$FISHERIPM_OUT/<experiment>`, else `runs/<experiment>`.
    pub fn resolve_output_dir(&self, experiment: Experiment) -> PathBuf {
        if let Some(d) = &self.output_dir {
            return d.clone();
        }
        let root = std::env::var_os(OUTPUT_ROOT_ENV)
            .map(PathBuf::from)
            .unwrap_or_else(|| PathBuf::from("runs"));
        root.join(experiment.dir_name())
    }
}

/// Sets the dotted `key` of a JSON object to `value`, parsed as JSON when it
/// parses and kept as a string otherwise. Missing objects along the path are
/// created.
pub fn apply_override(root: &mut Value, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::InvalidConfig(format!("override '{assignment}' is not key=value")))?;
    let key = key.trim();
    if key.is_empty() || key.split('.').any(str::is_empty) {
        return Err(Error::InvalidConfig(format!("bad override key '{key}'")));
    }
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut node = root;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let obj = match node {
            Value::Object(map) => map,
            _ => {
                return Err(Error::InvalidConfig(format!(
                    "override '{key}': '{}' is not an object",
                    parts[..i].join(".")
                )))
            }
        };
        if i + 1 == parts.len() {
            obj.insert(part.to_string(), value);
            return Ok(());
        }
        node = obj
            .entry(part.to_string())
            .or_insert_with(|| Value::Object(Default::default()));
    }
    unreachable!("key has at least one part")
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FormatVersions {
    pub params: u32,
    pub metrics_csv: u32,
    pub manifest: u32,
}

/// Provenance written next to every run's outputs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub tool_version: String,
    pub experiment: Experiment,
    pub seeds: Vec<u64>,
    pub git_revision: Option<String>,
    pub formats: FormatVersions,
    pub config: ExperimentConfig,
}

impl Manifest {
    pub fn new(experiment: Experiment, config: &ExperimentConfig) -> Self {
        let seeds = match experiment {
            Experiment::Fig2Sweep | Experiment::BaselineCompare => config.sweep.seeds.clone(),
            _ => vec![config.train.seed],
        };
        Self {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            experiment,
            seeds,
            git_revision: git_revision(),
            formats: FormatVersions {
                params: PARAMS_FORMAT_VERSION,
                metrics_csv: METRICS_FORMAT_VERSION,
                manifest: MANIFEST_FORMAT_VERSION,
            },
            config: config.clone(),
        }
    }

    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        let path = dir.join("manifest.json");
        write_json(&path, self)?;
        Ok(path)
    }
}

fn git_revision() -> Option<String> {
    let out = std::process::Command::new("git")
        .args(["rev-parse", "HEAD"])
        .output()
        .ok()?;
    out.status
        .success()
        .then(|| String::from_utf8_lossy(&out.stdout).trim().to_string())
        .filter(|s| !s.is_empty())
}

/// Pretty JSON with a trailing newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overrides_parse_json_and_fall_back_to_strings() {
        let cfg = ExperimentConfig::from_json(
            Some(r#"{"train": {"batch": 64}}"#),
            &[
                "train.batch=128".into(),
                "train.mode={\"kind\":\"weight-clip\",\"c\":0.05}".into(),
                "sweep.seeds=[1,2,3]".into(),
                "output_dir=out/x".into(),
            ],
        )
        .unwrap();
        assert_eq!(cfg.train.batch, 128);
        assert_eq!(cfg.train.mode, ConstraintMode::WeightClip { c: 0.05 });
        assert_eq!(cfg.sweep.seeds, vec![1, 2, 3]);
        assert_eq!(cfg.output_dir, Some(PathBuf::from("out/x")));
    }

    #[test]
    fn bad_overrides_are_config_errors() {
        for o in ["novalue", "=3", "a..b=1", "train.batch.x=1"] {
            assert!(
                matches!(
                    ExperimentConfig::from_json(None, &[o.into()]),
                    Err(Error::InvalidConfig(_))
                ),
                "{o}"
            );
        }
        assert!(matches!(
            ExperimentConfig::from_json(None, &["trian.batch=3".into()]),
            Err(Error::InvalidConfig(_))
        ));
        assert!(matches!(
            ExperimentConfig::from_json(Some("{not json"), &[]),
            Err(Error::InvalidConfig(_))
        ));
    }

    #[test]
    fn config_round_trips() {
        let cfg = ExperimentConfig::default();
        let text = serde_json::to_string(&cfg).unwrap();
        assert_eq!(ExperimentConfig::from_json(Some(&text), &[]).unwrap(), cfg);
    }
}
