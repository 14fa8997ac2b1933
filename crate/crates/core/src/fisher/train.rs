use std::time::Instant;

use ndarray::{concatenate, Array2, ArrayView2, Axis};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::{
    critic_objective, critic_update, generator_objective, interpolate, kde_chi2_proxy, noise,
    v_norm2, ConstraintMode, CriticState, CriticStep, MetricsRecord, TrainConfig,
};
use crate::diffnet::{CriticForm, Layout, Params};
use crate::distzoo::{Distribution, DistributionSpec};
use crate::error::{Divergence, Error, Result};
use crate::optim::{AdamState, AlmState};
use crate::rng::{self, streams, Rng};

/// Smallest held-out sample accepted by [`estimate_ipm`].
pub const MIN_EVAL_SAMPLES: usize = 100_000;

/// Where estimation minibatches come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TrainingData {
    /// A fixed training set of this many samples per distribution, with
    /// minibatches drawn from it with replacement.
    Fixed(usize),
    /// Fresh samples for every minibatch.
    Fresh,
}

/// Out-of-sample Fisher ratio with its delta-method standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RatioEstimate {
    pub ratio: f64,
    pub standard_error: f64,
    pub e_hat: f64,
    pub omega_hat: f64,
    pub max_abs_critic: f64,
}

/// `Ê / √Ω̂` of a critic on two samples.
///
/// The standard error treats the two samples as independent and linearises
/// the ratio in the four sample moments: each sample contributes
/// `Var(±f/√s - R f²/(4s)) / n` with `s = Ω̂`.
pub fn evaluate_ratio(
    params: &Params,
    form: CriticForm,
    x_p: ArrayView2<'_, f64>,
    x_q: ArrayView2<'_, f64>,
    gamma: f64,
) -> Result<RatioEstimate> {
    let f_p = params.critic(form, x_p)?;
    let f_q = params.critic(form, x_q)?;
    let max_abs_critic = f_p
        .iter()
        .chain(f_q.iter())
        .fold(0.0f64, |a, v| a.max(v.abs()));
    if !max_abs_critic.is_finite() {
        return Err(Error::NonFiniteLoss(
            "critic output on evaluation sample".into(),
        ));
    }
    let e_hat = super::empirical_mean_diff(f_p.view(), f_q.view());
    let ridge = if gamma > 0.0 {
        gamma * v_norm2(params)
    } else {
        0.0
    };
    let s = super::empirical_omega(f_p.view(), f_q.view()) + ridge;
    let ratio = super::fisher_ratio(e_hat, s);
    let standard_error = if s > 0.0 {
        let var = |f: &ndarray::Array1<f64>, sign: f64| {
            let h = f.mapv(|v| sign * v / s.sqrt() - ratio * v * v / (4.0 * s));
            let n = h.len() as f64;
            let m = h.sum() / n;
            h.mapv(|v| (v - m) * (v - m)).sum() / (n - 1.0) / n
        };
        (var(&f_p, 1.0) + var(&f_q, -1.0)).sqrt()
    } else {
        0.0
    };
    Ok(RatioEstimate {
        ratio,
        standard_error,
        e_hat,
        omega_hat: s,
        max_abs_critic,
    })
}

#[derive(Debug, Clone)]
pub struct IpmEstimate {
    pub eval: RatioEstimate,
    pub critic: Params,
    pub alm: AlmState,
    pub metrics: Vec<MetricsRecord>,
    /// Largest per-coordinate Adam step taken during training.
    pub max_adam_step: f64,
}

fn is_numeric_failure(e: &Error) -> bool {
    matches!(e, Error::NonFiniteLoss(_) | Error::NonFiniteGradient(_))
}

fn diverged(
    iteration: usize,
    err: Error,
    critic: Params,
    generator: Option<Params>,
    metrics: &[MetricsRecord],
) -> Error {
    if !is_numeric_failure(&err) {
        return err;
    }
    Error::Diverged(Box::new(Divergence {
        iteration,
        reason: err.to_string(),
        critic,
        generator,
        metrics: metrics.to_vec(),
    }))
}

fn check_dims(spec_in: usize, dim: usize, what: &str) -> Result<()> {
    if spec_in != dim {
        return Err(Error::InvalidConfig(format!(
            "{what} input width {spec_in} does not match dimension {dim}"
        )));
    }
    Ok(())
}

fn pick_rows(x: &Array2<f64>, rng: &mut Rng, n: usize) -> Array2<f64> {
    let idx: Vec<usize> = (0..n).map(|_| rng.random_range(0..x.nrows())).collect();
    x.select(Axis(0), &idx)
}

/// Trains a critic between `P` and `Q` with the configured constraint and
/// returns its ratio on `n_eval` held-out samples from each side.
pub fn estimate_ipm(
    p: &DistributionSpec,
    q: &DistributionSpec,
    cfg: &TrainConfig,
    data: TrainingData,
    n_eval: usize,
) -> Result<IpmEstimate> {
    cfg.validate()?;
    let (p, q) = (Distribution::new(p.clone())?, Distribution::new(q.clone())?);
    if p.dim() != q.dim() {
        return Err(Error::InvalidConfig("P and Q differ in dimension".into()));
    }
    check_dims(cfg.critic.input_dim(), p.dim(), "critic")?;
    if n_eval < MIN_EVAL_SAMPLES {
        return Err(Error::InvalidConfig(format!(
            "n_eval {n_eval} below the minimum of {MIN_EVAL_SAMPLES}"
        )));
    }
    let seed = cfg.seed;
    let layout = Layout::new(cfg.critic.clone(), None)?;
    let mut state = CriticState::new(
        Params::init(layout, seed, streams::CRITIC_INIT, cfg.init_stdev)?,
        cfg,
    );
    let mut rng_p = rng::stream(seed, streams::DATA_P);
    let mut rng_q = rng::stream(seed, streams::DATA_Q);
    let mut rng_batch = rng::stream(seed, streams::MINIBATCH);
    let mut rng_interp = rng::stream(seed, streams::INTERPOLATE);
    let fixed = match data {
        TrainingData::Fixed(n) if n < 2 => {
            return Err(Error::InvalidConfig(
                "training set needs at least 2 samples".into(),
            ));
        }
        TrainingData::Fixed(n) => {
            Some((p.sample_with(&mut rng_p, n), q.sample_with(&mut rng_q, n)))
        }
        TrainingData::Fresh => None,
    };

    let mut metrics = Vec::with_capacity(cfg.iterations);
    let mut max_adam_step = 0.0f64;
    for it in 1..=cfg.iterations {
        let start = Instant::now();
        let (x_p, x_q) = match &fixed {
            Some((tp, tq)) => (
                pick_rows(tp, &mut rng_batch, cfg.batch),
                pick_rows(tq, &mut rng_batch, cfg.batch),
            ),
            None => (
                p.sample_with(&mut rng_p, cfg.batch),
                q.sample_with(&mut rng_q, cfg.batch),
            ),
        };
        let checkpoint = state.params.clone();
        let step = critic_update(&mut state, x_p.view(), x_q.view(), cfg, &mut rng_interp)
            .map_err(|e| diverged(it, e, checkpoint, None, &metrics))?;
        max_adam_step = max_adam_step.max(state.adam.last_max_step);
        metrics.push(record(it, &step, state.alm, start, None));
    }

    let x_p = p.sample_with(&mut rng::stream(seed, streams::EVAL_P), n_eval);
    let x_q = q.sample_with(&mut rng::stream(seed, streams::EVAL_Q), n_eval);
    let eval = evaluate_ratio(
        &state.params,
        CriticForm::Split,
        x_p.view(),
        x_q.view(),
        cfg.gamma,
    )?;
    Ok(IpmEstimate {
        eval,
        critic: state.params,
        alm: state.alm,
        metrics,
        max_adam_step,
    })
}

fn record(
    it: usize,
    step: &CriticStep,
    alm: AlmState,
    start: Instant,
    proxy: Option<f64>,
) -> MetricsRecord {
    MetricsRecord {
        iter: it,
        e_hat: step.e_hat,
        omega_hat: step.omega_hat,
        lambda: alm.lambda,
        loss: step.objective,
        chi2_oracle: None,
        chi2_kde_proxy: proxy,
        wall_ms: start.elapsed().as_secs_f64() * 1e3,
    }
}

/// Result of an adversarial training run.
#[derive(Debug, Clone)]
pub struct GanRun {
    pub generator: Params,
    pub critic: Params,
    pub alm: AlmState,
    pub metrics: Vec<MetricsRecord>,
    pub max_adam_step: f64,
}

impl GanRun {
    /// `n` generator samples from the dedicated proxy noise stream.
    pub fn sample(&self, cfg: &TrainConfig, n: usize) -> Result<Array2<f64>> {
        let mut rng = rng::stream(cfg.seed, streams::PROXY_NOISE);
        self.generator.forward(noise(&mut rng, n, cfg.z_dim).view())
    }
}

/// Full alternating loop: `n_c` critic steps on fresh data and generator
/// batches, then one generator step, per iteration.
pub fn train_gan(data: &DistributionSpec, cfg: &TrainConfig) -> Result<GanRun> {
    adversarial(&Distribution::new(data.clone())?, cfg, None)
}

/// Semi-supervised extras threaded through the adversarial loop.
#[derive(Debug, Clone)]
pub(crate) struct SslHooks {
    pub form: CriticForm,
    pub classes: usize,
    pub lambda_d: f64,
    pub lambda_g: f64,
    pub conditional: bool,
    pub labeled_x: Array2<f64>,
    pub labeled_y: Vec<usize>,
    pub prior: Vec<f64>,
}

impl SslHooks {
    fn draw_labels(&self, rng: &mut Rng, n: usize) -> Vec<usize> {
        (0..n)
            .map(|_| {
                let u: f64 = rng.random();
                let mut acc = 0.0;
                for (k, w) in self.prior.iter().enumerate() {
                    acc += w;
                    if u < acc {
                        return k;
                    }
                }
                self.prior.len() - 1
            })
            .collect()
    }

    fn labeled_batch(&self, rng: &mut Rng, n: usize) -> (Array2<f64>, Vec<usize>) {
        let total = self.labeled_y.len();
        if n >= total {
            return (self.labeled_x.clone(), self.labeled_y.clone());
        }
        let idx = rand::seq::index::sample(rng, total, n).into_vec();
        (
            self.labeled_x.select(Axis(0), &idx),
            idx.iter().map(|&i| self.labeled_y[i]).collect(),
        )
    }
}

/// Noise with a one-hot label block appended.
pub(crate) fn conditional_input(
    z: ArrayView2<'_, f64>,
    labels: &[usize],
    classes: usize,
) -> Array2<f64> {
    let mut onehot = Array2::zeros((z.nrows(), classes));
    for (i, &y) in labels.iter().enumerate() {
        onehot[[i, y]] = 1.0;
    }
    concatenate![Axis(1), z, onehot]
}

pub(crate) fn adversarial(
    data: &Distribution,
    cfg: &TrainConfig,
    hooks: Option<&SslHooks>,
) -> Result<GanRun> {
    cfg.validate()?;
    let d = data.dim();
    check_dims(cfg.critic.input_dim(), d, "critic")?;
    let conditional = hooks.is_some_and(|h| h.conditional);
    let classes = hooks.map(|h| h.classes);
    let gen_in = cfg.z_dim + if conditional { classes.unwrap_or(0) } else { 0 };
    check_dims(cfg.generator.input_dim(), gen_in, "generator")?;
    if cfg.generator.output_dim() != d {
        return Err(Error::InvalidConfig(format!(
            "generator output width {} does not match dimension {d}",
            cfg.generator.output_dim()
        )));
    }
    let form = hooks.map_or(CriticForm::Split, |h| h.form);
    let seed = cfg.seed;
    let critic = Params::init(
        Layout::new(cfg.critic.clone(), classes)?,
        seed,
        streams::CRITIC_INIT,
        cfg.init_stdev,
    )?;
    let mut state = CriticState::new(critic, cfg);
    let mut generator = Params::init(
        Layout::new(cfg.generator.clone(), None)?,
        seed,
        streams::GENERATOR_INIT,
        cfg.init_stdev,
    )?;
    let mut gen_adam = AdamState::new(cfg.generator_adam, generator.len());
    let mut rng_p = rng::stream(seed, streams::DATA_P);
    let mut rng_z = rng::stream(seed, streams::NOISE);
    let mut rng_interp = rng::stream(seed, streams::INTERPOLATE);
    let mut rng_y = rng::stream(seed, streams::CLASS_PRIOR);
    let mut rng_lab = rng::stream(seed, streams::LABELED_BATCH);

    let gen_batch = |rng_z: &mut Rng, rng_y: &mut Rng| -> (Array2<f64>, Option<Vec<usize>>) {
        let z = noise(rng_z, cfg.batch, cfg.z_dim);
        match hooks {
            Some(h) if h.conditional => {
                let y = h.draw_labels(rng_y, cfg.batch);
                (conditional_input(z.view(), &y, h.classes), Some(y))
            }
            _ => (z, None),
        }
    };

    let mut metrics: Vec<MetricsRecord> = Vec::with_capacity(cfg.iterations);
    let mut max_adam_step = 0.0f64;
    for it in 1..=cfg.iterations {
        let start = Instant::now();
        let checkpoint = (state.params.clone(), generator.clone());
        let fail = |e: Error, metrics: &[MetricsRecord]| {
            diverged(
                it,
                e,
                checkpoint.0.clone(),
                Some(checkpoint.1.clone()),
                metrics,
            )
        };
        let mut last = None;
        for _ in 0..cfg.n_critic {
            let x_p = data.sample_with(&mut rng_p, cfg.batch);
            let (z, _) = gen_batch(&mut rng_z, &mut rng_y);
            let x_q = generator.forward(z.view())?;
            let step = match hooks {
                None => critic_update(&mut state, x_p.view(), x_q.view(), cfg, &mut rng_interp),
                Some(h) => ssl_critic_update(
                    &mut state,
                    h,
                    x_p.view(),
                    x_q.view(),
                    cfg,
                    &mut rng_interp,
                    &mut rng_lab,
                ),
            }
            .map_err(|e| fail(e, &metrics))?;
            max_adam_step = max_adam_step.max(state.adam.last_max_step);
            last = Some(step);
        }
        let (z, y) = gen_batch(&mut rng_z, &mut rng_y);
        let labels = match (hooks, &y) {
            (Some(h), Some(y)) => Some((y.as_slice(), h.lambda_g)),
            _ => None,
        };
        generator_objective(&generator, &state.params, form, z.view(), labels)
            .and_then(|(_, grad)| gen_adam.step(&mut generator.values, &grad.values, false))
            .map_err(|e| fail(e, &metrics))?;
        max_adam_step = max_adam_step.max(gen_adam.last_max_step);
        if !state.alm.lambda.is_finite() {
            return Err(fail(
                Error::NonFiniteLoss("lagrange multiplier".into()),
                &metrics,
            ));
        }

        let step = last.expect("n_critic >= 1");
        let mut row = record(it, &step, state.alm, start, None);
        let wants_proxy =
            it == 100 || it == cfg.iterations || (cfg.proxy_every > 0 && it % cfg.proxy_every == 0);
        if wants_proxy && d <= 2 {
            let samples = proxy_samples(&generator, cfg, hooks)?;
            row.chi2_kde_proxy = Some(kde_chi2_proxy(data, samples.view(), seed)?);
        }
        metrics.push(row);
    }
    Ok(GanRun {
        generator,
        critic: state.params,
        alm: state.alm,
        metrics,
        max_adam_step,
    })
}

fn proxy_samples(
    generator: &Params,
    cfg: &TrainConfig,
    hooks: Option<&SslHooks>,
) -> Result<Array2<f64>> {
    let mut rng = rng::stream(cfg.seed, streams::PROXY_NOISE);
    let z = noise(&mut rng, super::PROXY_SAMPLES, cfg.z_dim);
    let z = match hooks {
        Some(h) if h.conditional => {
            let y = h.draw_labels(&mut rng, super::PROXY_SAMPLES);
            conditional_input(z.view(), &y, h.classes)
        }
        _ => z,
    };
    generator.forward(z.view())
}

/// Critic step with the cross-entropy term on a labeled minibatch:
/// ascent on `L_F - λ_D CE`.
fn ssl_critic_update(
    state: &mut CriticState,
    hooks: &SslHooks,
    x_p: ArrayView2<'_, f64>,
    x_q: ArrayView2<'_, f64>,
    cfg: &TrainConfig,
    rng_interp: &mut Rng,
    rng_lab: &mut Rng,
) -> Result<CriticStep> {
    let interp = matches!(cfg.mode, ConstraintMode::GradientPenalty { .. })
        .then(|| interpolate(x_p, x_q, rng_interp));
    let (mut step, mut grad) = critic_objective(
        &state.params,
        hooks.form,
        x_p,
        x_q,
        cfg.mode,
        state.alm,
        cfg.gamma,
        interp.as_ref().map(|x| x.view()),
    )?;
    if hooks.lambda_d != 0.0 {
        let (x, y) = hooks.labeled_batch(rng_lab, cfg.batch);
        let (ce, g) = crate::ssl::ce_gradient(&state.params, x.view(), &y)?;
        grad.add_scaled(&g, -hooks.lambda_d);
        step.objective -= hooks.lambda_d * ce;
    }
    state.apply(grad, &step, cfg.mode)?;
    Ok(step)
}
