//! `fisheripm` command-line driver.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context as _;
use clap::{Args, Parser, Subcommand};
use fisheripm::fisher::{estimate_ipm, mode_coverage, train_gan, TrainingData};
use fisheripm::harness::{
    emit_plots, run_baseline_compare, run_fig2, write_json, write_metrics_csv, Experiment,
    ExperimentConfig, Manifest,
};
use fisheripm::{oracle, ssl, Distribution, Error, MetricsRecord, Params};
use serde_json::json;

#[derive(Parser)]
#[command(
    name = "fisheripm",
    version,
    about = "Fisher IPM estimation, oracles and toy training"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Exact χ² distance and related divergences between `p` and `q`.
    Oracle(RunArgs),
    /// Train a critic between `p` and `q` and report its held-out ratio.
    Estimate(RunArgs),
    /// Shifted-Gaussian sweep: estimate vs. oracle over shift and sample size.
    Fig2(RunArgs),
    /// Adversarial training of a generator against `data`.
    TrainGan(RunArgs),
    /// Semi-supervised training on a labeled mixture.
    TrainSsl(RunArgs),
    /// Constraint mechanisms side by side on one shifted-Gaussian task.
    Compare(RunArgs),
    /// Render SVG panels from a metrics or sweep CSV.
    Plot {
        csv: PathBuf,
        /// Output directory (defaults to the CSV's directory).
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct RunArgs {
    /// JSON config file.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Override a config key, e.g. `--set train.iterations=500`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Output directory; overrides `output_dir` and $FISHERIPM_OUT.
    #[arg(long)]
    out: Option<PathBuf>,
}

enum Failure {
    Config(anyhow::Error),
    Run(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        let config = e.chain().any(|c| {
            matches!(
                c.downcast_ref::<Error>(),
                Some(Error::InvalidConfig(_) | Error::InvalidDistribution(_))
            )
        });
        if config {
            Failure::Config(e)
        } else {
            Failure::Run(e)
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        anyhow::Error::from(e).into()
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(e)) => {
            eprintln!("config error: {e:#}");
            ExitCode::from(2)
        }
        Err(Failure::Run(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn run(command: Command) -> Result<(), Failure> {
    let (experiment, args) = match command {
        Command::Plot { csv, out } => {
            let dir =
                out.unwrap_or_else(|| csv.parent().map(Path::to_path_buf).unwrap_or_default());
            std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
            for f in emit_plots(&csv, &dir)? {
                println!("{}", f.display());
            }
            return Ok(());
        }
        Command::Oracle(a) => (Experiment::OracleCheck, a),
        Command::Estimate(a) => (Experiment::Estimate, a),
        Command::Fig2(a) => (Experiment::Fig2Sweep, a),
        Command::TrainGan(a) => (Experiment::ToyGan, a),
        Command::TrainSsl(a) => (Experiment::SslToy, a),
        Command::Compare(a) => (Experiment::BaselineCompare, a),
    };
    let mut cfg = ExperimentConfig::load(args.config.as_deref(), &args.overrides).map_err(|e| {
        Failure::Config(anyhow::Error::from(e).context(match &args.config {
            Some(p) => format!("loading {}", p.display()),
            None => "building config".to_string(),
        }))
    })?;
    if let Some(e) = cfg.experiment {
        if e != experiment {
            return Err(Failure::Config(anyhow::anyhow!(
                "config is for experiment '{}', not '{}'",
                e.dir_name(),
                experiment.dir_name()
            )));
        }
    }
    cfg.experiment = Some(experiment);
    if let Some(out) = args.out {
        cfg.output_dir = Some(out);
    }
    let dir = cfg.resolve_output_dir(experiment);
    std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    Manifest::new(experiment, &cfg).write(&dir)?;
    match experiment {
        Experiment::OracleCheck => oracle_cmd(&cfg, &dir),
        Experiment::Estimate => estimate_cmd(&cfg, &dir),
        Experiment::Fig2Sweep => fig2_cmd(&cfg, &dir),
        Experiment::ToyGan => gan_cmd(&cfg, &dir),
        Experiment::SslToy => ssl_cmd(&cfg, &dir),
        Experiment::BaselineCompare => compare_cmd(&cfg, &dir),
    }
}

fn oracle_cmd(cfg: &ExperimentConfig, dir: &Path) -> Result<(), Failure> {
    let p = Distribution::new(cfg.p.clone())?;
    let q = Distribution::new(cfg.q.clone())?;
    let chi2 = oracle::chi2_distance(&p, &q, &cfg.quadrature)?;
    let pearson = oracle::pearson_divergence(&p, &q, &cfg.quadrature)?;
    let neyman = oracle::neyman_divergence(&p, &q, &cfg.quadrature)?;
    let report = json!({ "chi2": chi2, "pearson": pearson, "neyman": neyman });
    write_json(&dir.join("oracle.json"), &report)?;
    println!(
        "chi2 {:.12} (error estimate {:.2e})",
        chi2.value, chi2.error_estimate
    );
    Ok(())
}

/// Saves what a diverged run left behind before reporting the failure.
fn checkpoint(dir: &Path, err: Error) -> Failure {
    if let Error::Diverged(d) = &err {
        let saved = (|| -> fisheripm::Result<()> {
            d.critic.save(dir.join("critic_checkpoint.params"))?;
            if let Some(g) = &d.generator {
                g.save(dir.join("generator_checkpoint.params"))?;
            }
            write_metrics_csv(&dir.join("metrics.csv"), &d.metrics)
        })();
        if let Err(e) = saved {
            eprintln!("warning: could not write checkpoint: {e}");
        } else {
            eprintln!("checkpoint written to {}", dir.display());
        }
    }
    err.into()
}

fn write_run(
    dir: &Path,
    metrics: &[MetricsRecord],
    params: &[(&str, &Params)],
) -> Result<(), Failure> {
    let csv = dir.join("metrics.csv");
    write_metrics_csv(&csv, metrics)?;
    for (name, p) in params {
        p.save(dir.join(format!("{name}.params")))?;
    }
    if !metrics.is_empty() {
        emit_plots(&csv, dir)?;
    }
    Ok(())
}

fn estimate_cmd(cfg: &ExperimentConfig, dir: &Path) -> Result<(), Failure> {
    let train = cfg.train.fitted_to(Distribution::new(cfg.p.clone())?.dim());
    let data = match cfg.n_train {
        Some(n) => TrainingData::Fixed(n),
        None => TrainingData::Fresh,
    };
    let est =
        estimate_ipm(&cfg.p, &cfg.q, &train, data, cfg.n_eval).map_err(|e| checkpoint(dir, e))?;
    write_run(dir, &est.metrics, &[("critic", &est.critic)])?;
    let report = json!({
        "estimate": est.eval,
        "lambda": est.alm.lambda,
        "max_adam_step": est.max_adam_step,
    });
    write_json(&dir.join("estimate.json"), &report)?;
    println!(
        "estimate {:.6} ± {:.6} (Ê {:.6}, Ω̂ {:.6})",
        est.eval.ratio, est.eval.standard_error, est.eval.e_hat, est.eval.omega_hat
    );
    Ok(())
}

fn fig2_cmd(cfg: &ExperimentConfig, dir: &Path) -> Result<(), Failure> {
    let report = run_fig2(cfg, Some(dir))?;
    for r in &report.rows {
        println!(
            "shift {:<5} n {:<7} seed {:<3} oracle {:.4} estimate {:.4} ± {:.4}",
            r.shift, r.n_train, r.seed, r.oracle_chi2, r.estimate, r.standard_error
        );
    }
    match report.slope {
        Some(s) => println!("error-vs-n slope {s:.3}"),
        None => println!("error-vs-n slope undefined"),
    }
    Ok(())
}

fn gan_cmd(cfg: &ExperimentConfig, dir: &Path) -> Result<(), Failure> {
    let data = Distribution::new(cfg.data.clone())?;
    let train = cfg.train.fitted_to(data.dim());
    let run = train_gan(&cfg.data, &train).map_err(|e| checkpoint(dir, e))?;
    write_run(
        dir,
        &run.metrics,
        &[("critic", &run.critic), ("generator", &run.generator)],
    )?;
    let samples = run.sample(&train, 8000)?;
    let coverage = mode_coverage(samples.view(), &data.component_means());
    let proxy = run.metrics.iter().rev().find_map(|m| m.chi2_kde_proxy);
    write_json(
        &dir.join("summary.json"),
        &json!({
            "mode_coverage": coverage,
            "final_chi2_kde_proxy": proxy,
            "lambda": run.alm.lambda,
            "max_adam_step": run.max_adam_step,
        }),
    )?;
    println!("mode coverage {coverage:.3?}");
    if let Some(p) = proxy {
        println!("final chi2_kde_proxy {p:.4}");
    }
    Ok(())
}

fn ssl_cmd(cfg: &ExperimentConfig, dir: &Path) -> Result<(), Failure> {
    let train = cfg.ssl.fit_generator(
        &cfg.train
            .fitted_to(Distribution::new(cfg.data.clone())?.dim()),
    );
    let out = ssl::train_ssl(&cfg.data, &cfg.ssl, &train).map_err(|e| checkpoint(dir, e))?;
    write_run(
        dir,
        &out.run.metrics,
        &[
            ("critic", &out.run.critic),
            ("generator", &out.run.generator),
        ],
    )?;
    write_json(&dir.join("accuracy.json"), &out.summary)?;
    println!("held-out accuracy {:.4}", out.summary.test_accuracy);
    Ok(())
}

fn compare_cmd(cfg: &ExperimentConfig, dir: &Path) -> Result<(), Failure> {
    let report = run_baseline_compare(cfg, cfg.shift, Some(dir))?;
    for mode in &cfg.modes {
        let rows: Vec<_> = report.rows_for(*mode).collect();
        let diverged = rows.iter().filter(|r| r.diverged).count();
        let errors: Vec<String> = rows
            .iter()
            .map(|r| r.abs_error.map_or("-".into(), |e| format!("{e:.4}")))
            .collect();
        println!(
            "{:<18} |error| [{}] median ms/iter {} diverged {}/{}",
            mode.name(),
            errors.join(", "),
            report
                .median_ms(*mode)
                .map_or("-".into(), |m| format!("{m:.3}")),
            diverged,
            rows.len()
        );
    }
    if report.rows.iter().any(|r| r.diverged) {
        eprintln!("note: some runs diverged; see compare.json");
    }
    Ok(())
}
