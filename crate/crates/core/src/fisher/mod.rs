//! Fisher IPM objectives, the alternating critic/generator updates, and the
//! two training loops built on them: IPM estimation between two known
//! distributions and GAN training against a data distribution.

mod proxy;
mod train;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::diffnet::{gradient_penalty, CriticForm, Gradient, MlpSpec, Params, Partition};
use crate::error::{Error, Result};
use crate::optim::{AdamConfig, AdamState, AlmState};
use crate::rng::Rng;

pub use proxy::{kde_chi2_proxy, mode_coverage, scott_bandwidth, PROXY_MC_POINTS, PROXY_SAMPLES};
pub(crate) use train::{adversarial, conditional_input, SslHooks};
pub use train::{
    estimate_ipm, evaluate_ratio, train_gan, GanRun, IpmEstimate, RatioEstimate, TrainingData,
};

/// How the critic's second moment is controlled.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind")]
pub enum ConstraintMode {
    /// Augmented Lagrangian on `Ω̂ = 1`.
    #[default]
    #[serde(rename = "fisher-alm")]
    FisherAlm,
    /// Ascent on `Ê`, then clamp every critic parameter to `[-c, c]`.
    #[serde(rename = "weight-clip")]
    WeightClip { c: f64 },
    /// Ascent on `Ê - μ mean (||∇f(x̂)|| - 1)²` over random interpolates.
    #[serde(rename = "gradient-penalty")]
    GradientPenalty {
        #[serde(default = "default_mu")]
        mu: f64,
    },
    /// f-GAN chi-squared objective `Ê/2 - Ω̂/4`: fixed `λ = 1/2`, `ρ = 0`.
    #[serde(rename = "fgan-chi2")]
    FGanChi2,
    /// Augmented Lagrangian with `Ω̂` taken over the real samples only.
    #[serde(rename = "neyman-alm")]
    NeymanAlm,
}

fn default_mu() -> f64 {
    10.0
}

impl ConstraintMode {
    pub fn gradient_penalty() -> Self {
        Self::GradientPenalty { mu: default_mu() }
    }

    /// Whether `λ` is updated after each critic step.
    pub fn updates_lambda(&self) -> bool {
        matches!(self, Self::FisherAlm | Self::NeymanAlm)
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::FisherAlm => "fisher-alm",
            Self::WeightClip { .. } => "weight-clip",
            Self::GradientPenalty { .. } => "gradient-penalty",
            Self::FGanChi2 => "fgan-chi2",
            Self::NeymanAlm => "neyman-alm",
        }
    }

    fn validate(&self) -> Result<()> {
        match *self {
            Self::WeightClip { c } if !(c > 0.0) => Err(Error::InvalidConfig(format!(
                "clip value {c} must be positive"
            ))),
            Self::GradientPenalty { mu } if !(mu >= 0.0) => Err(Error::InvalidConfig(format!(
                "penalty weight {mu} must be non-negative"
            ))),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub critic: MlpSpec,
    pub generator: MlpSpec,
    /// Critic iterations per generator iteration.
    pub n_critic: usize,
    pub batch: usize,
    pub z_dim: usize,
    pub mode: ConstraintMode,
    pub critic_adam: AdamConfig,
    pub generator_adam: AdamConfig,
    pub rho: f64,
    /// Generator iterations for GAN training; critic iterations for estimation.
    pub iterations: usize,
    pub seed: u64,
    /// Ridge `γ` on the last layer, added to the constraint as `γ ||v||²`.
    pub gamma: f64,
    pub weight_decay_omega: f64,
    pub weight_decay_v: f64,
    pub weight_decay_s: f64,
    pub init_stdev: f64,
    /// Critic partitions that receive updates.
    pub trainable: Vec<Partition>,
    /// Proxy cadence in generator iterations; 0 logs it only at iteration
    /// 100 and at the end.
    pub proxy_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            critic: MlpSpec::uniform(2, 16, 5, 1),
            generator: MlpSpec::uniform(2, 64, 3, 2),
            n_critic: 2,
            batch: 512,
            z_dim: 2,
            mode: ConstraintMode::FisherAlm,
            critic_adam: AdamConfig::default(),
            generator_adam: AdamConfig::default(),
            rho: 1e-2,
            iterations: 2000,
            seed: 0,
            gamma: 0.0,
            weight_decay_omega: 1e-6,
            weight_decay_v: 1e-3,
            weight_decay_s: 0.0,
            init_stdev: crate::diffnet::DEFAULT_INIT_STDEV,
            trainable: vec![Partition::Omega, Partition::V, Partition::S],
            proxy_every: 0,
        }
    }
}

impl TrainConfig {
    /// Critic input and generator output widths set to `dim`.
    pub fn fitted_to(&self, dim: usize) -> Self {
        let mut t = self.clone();
        t.critic.layer_sizes[0] = dim;
        if let Some(last) = t.generator.layer_sizes.last_mut() {
            *last = dim;
        }
        t
    }

    pub fn validate(&self) -> Result<()> {
        self.critic.validate()?;
        self.generator.validate()?;
        self.mode.validate()?;
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.n_critic < 1 {
            return bad("n_critic must be at least 1".into());
        }
        if self.batch < 2 {
            return bad("batch must be at least 2".into());
        }
        if self.z_dim < 1 {
            return bad("z_dim must be at least 1".into());
        }
        if self.critic.output_dim() != 1 {
            return bad("critic must have a scalar output".into());
        }
        if !(self.rho > 0.0) {
            return bad(format!("rho {} must be positive", self.rho));
        }
        if !(self.gamma >= 0.0) {
            return bad(format!("gamma {} must be non-negative", self.gamma));
        }
        for (name, v) in [
            ("weight_decay_omega", self.weight_decay_omega),
            ("weight_decay_v", self.weight_decay_v),
            ("weight_decay_s", self.weight_decay_s),
        ] {
            if !(v >= 0.0) {
                return bad(format!("{name} {v} must be non-negative"));
            }
        }
        if !(self.init_stdev > 0.0) {
            return bad("init_stdev must be positive".into());
        }
        if matches!(self.mode, ConstraintMode::GradientPenalty { .. })
            && self.critic.output != crate::diffnet::OutputActivation::Linear
        {
            return bad("gradient penalty needs a linear critic output".into());
        }
        Ok(())
    }
}

/// One row of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub iter: usize,
    pub e_hat: f64,
    pub omega_hat: f64,
    pub lambda: f64,
    /// Critic objective at the last critic step of the iteration.
    pub loss: f64,
    pub chi2_oracle: Option<f64>,
    pub chi2_kde_proxy: Option<f64>,
    pub wall_ms: f64,
}

/// `mean(fP) - mean(fQ)`.
pub fn empirical_mean_diff(f_p: ArrayView1<'_, f64>, f_q: ArrayView1<'_, f64>) -> f64 {
    mean(f_p) - mean(f_q)
}

/// `½ mean(fP²) + ½ mean(fQ²)`.
pub fn empirical_omega(f_p: ArrayView1<'_, f64>, f_q: ArrayView1<'_, f64>) -> f64 {
    0.5 * mean_square(f_p) + 0.5 * mean_square(f_q)
}

/// `Ê + λ(1 - Ω̂) - ρ/2 (Ω̂ - 1)²`.
pub fn alm_objective(e_hat: f64, omega_hat: f64, alm: AlmState) -> f64 {
    e_hat + alm.lambda * (1.0 - omega_hat) - 0.5 * alm.rho * (omega_hat - 1.0).powi(2)
}

/// Mean `|Ω̂ - 1|` over the final tenth of a run (at least one record).
pub fn constraint_gap(metrics: &[MetricsRecord]) -> Option<f64> {
    if metrics.is_empty() {
        return None;
    }
    let k = (metrics.len() / 10).max(1);
    let tail = &metrics[metrics.len() - k..];
    Some(tail.iter().map(|m| (m.omega_hat - 1.0).abs()).sum::<f64>() / k as f64)
}

/// `Ê / √Ω̂`, defined as 0 when `Ω̂ = 0`.
pub fn fisher_ratio(e_hat: f64, omega_hat: f64) -> f64 {
    if omega_hat > 0.0 {
        e_hat / omega_hat.sqrt()
    } else {
        0.0
    }
}

fn mean(v: ArrayView1<'_, f64>) -> f64 {
    v.sum() / v.len() as f64
}

fn mean_square(v: ArrayView1<'_, f64>) -> f64 {
    v.dot(&v) / v.len() as f64
}

/// Batch statistics of one critic evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CriticStep {
    pub e_hat: f64,
    /// Constraint value, including `γ ||v||²`.
    pub omega_hat: f64,
    /// Objective the critic ascends, before weight decay.
    pub objective: f64,
    pub penalty: Option<f64>,
}

fn v_norm2(params: &Params) -> f64 {
    params
        .layout()
        .ranges(Partition::V)
        .into_iter()
        .flat_map(|r| params.values[r].iter())
        .map(|v| v * v)
        .sum()
}

/// Critic objective of `mode` on one pair of batches and its gradient.
///
/// `interpolates` must be given for the gradient penalty mode.
#[allow(clippy::too_many_arguments)]
pub fn critic_objective(
    params: &Params,
    form: CriticForm,
    x_p: ArrayView2<'_, f64>,
    x_q: ArrayView2<'_, f64>,
    mode: ConstraintMode,
    alm: AlmState,
    gamma: f64,
    interpolates: Option<ArrayView2<'_, f64>>,
) -> Result<(CriticStep, Gradient)> {
    if x_p.nrows() == 0 || x_q.nrows() == 0 {
        return Err(Error::ShapeMismatch("empty batch".into()));
    }
    let tp = params.critic_trace(form, x_p)?;
    let tq = params.critic_trace(form, x_q)?;
    let (f_p, f_q) = (tp.values.view(), tq.values.view());
    if !f_p.iter().chain(f_q.iter()).all(|v| v.is_finite()) {
        return Err(Error::NonFiniteLoss("critic output".into()));
    }
    let (n, m) = (f_p.len() as f64, f_q.len() as f64);
    let neyman = mode == ConstraintMode::NeymanAlm;
    let e_hat = empirical_mean_diff(f_p, f_q);
    let ridge = if gamma > 0.0 {
        gamma * v_norm2(params)
    } else {
        0.0
    };
    let omega_hat = ridge
        + if neyman {
            mean_square(f_p)
        } else {
            empirical_omega(f_p, f_q)
        };

    // objective = a Ê + (terms in Ω̂) with dObjective/dΩ̂ = b
    let (a, b, mut objective) = match mode {
        ConstraintMode::FisherAlm | ConstraintMode::NeymanAlm => (
            1.0,
            -alm.lambda - alm.rho * (omega_hat - 1.0),
            alm_objective(e_hat, omega_hat, alm),
        ),
        ConstraintMode::FGanChi2 => (0.5, -0.25, 0.5 * e_hat - 0.25 * omega_hat),
        ConstraintMode::WeightClip { .. } | ConstraintMode::GradientPenalty { .. } => {
            (1.0, 0.0, e_hat)
        }
    };
    let omega_p = if neyman { 2.0 } else { 1.0 };
    let d_p: Array1<f64> = f_p.mapv(|f| (a + b * omega_p * f) / n);
    let d_q: Array1<f64> = if neyman {
        Array1::from_elem(f_q.len(), -a / m)
    } else {
        f_q.mapv(|f| (-a + b * f) / m)
    };
    let (mut grad, _) = params.critic_backward(form, &tp, d_p.view(), None);
    let (gq, _) = params.critic_backward(form, &tq, d_q.view(), None);
    grad.add_scaled(&gq, 1.0);
    if ridge > 0.0 && b != 0.0 {
        for r in params.layout().ranges(Partition::V) {
            for i in r {
                grad.values[i] += b * 2.0 * gamma * params.values[i];
            }
        }
    }
    let mut penalty = None;
    if let ConstraintMode::GradientPenalty { mu } = mode {
        if form != CriticForm::Split {
            return Err(Error::InvalidConfig(
                "gradient penalty is only implemented for the split critic".into(),
            ));
        }
        let x = interpolates
            .ok_or_else(|| Error::InvalidConfig("gradient penalty needs interpolates".into()))?;
        let pg = gradient_penalty(params, x)?;
        grad.add_scaled(&pg.grad, -mu);
        objective -= mu * pg.penalty;
        penalty = Some(pg.penalty);
    }
    if !objective.is_finite() {
        return Err(Error::NonFiniteLoss(format!(
            "critic objective {objective}"
        )));
    }
    Ok((
        CriticStep {
            e_hat,
            omega_hat,
            objective,
            penalty,
        },
        grad,
    ))
}

/// `u x_P + (1 - u) x_Q` with one `u ~ U[0, 1]` per row pair.
pub fn interpolate(
    x_p: ArrayView2<'_, f64>,
    x_q: ArrayView2<'_, f64>,
    rng: &mut Rng,
) -> Array2<f64> {
    let n = x_p.nrows().min(x_q.nrows());
    let mut out = Array2::zeros((n, x_p.ncols()));
    for i in 0..n {
        let u: f64 = rng.random();
        for j in 0..x_p.ncols() {
            out[[i, j]] = u * x_p[[i, j]] + (1.0 - u) * x_q[[i, j]];
        }
    }
    out
}

/// `n x d` standard normal noise.
pub fn noise(rng: &mut Rng, n: usize, d: usize) -> Array2<f64> {
    Array2::from_shape_simple_fn((n, d), || rng.sample(StandardNormal))
}

/// Mutable critic state owned by one run.
#[derive(Debug, Clone)]
pub struct CriticState {
    pub params: Params,
    pub adam: AdamState,
    pub alm: AlmState,
    /// Per-parameter weight decay; `None` marks a frozen parameter.
    decay: Vec<Option<f64>>,
}

impl CriticState {
    pub fn new(params: Params, cfg: &TrainConfig) -> Self {
        let decay = params
            .layout()
            .partitions()
            .into_iter()
            .map(|p| {
                cfg.trainable.contains(&p).then_some(match p {
                    Partition::Omega => cfg.weight_decay_omega,
                    Partition::V => cfg.weight_decay_v,
                    Partition::S => cfg.weight_decay_s,
                })
            })
            .collect();
        Self {
            adam: AdamState::new(cfg.critic_adam, params.len()),
            alm: AlmState::new(cfg.rho),
            params,
            decay,
        }
    }

    /// Adam ascent on `grad` minus weight decay, skipping frozen entries.
    pub(crate) fn ascend(&mut self, mut grad: Gradient) -> Result<()> {
        for ((g, p), d) in grad
            .values
            .iter_mut()
            .zip(&self.params.values)
            .zip(&self.decay)
        {
            *g = match d {
                Some(wd) => *g - wd * p,
                None => 0.0,
            };
        }
        self.adam.step(&mut self.params.values, &grad.values, true)
    }

    /// [`CriticState::ascend`], then clipping and the multiplier step as
    /// `mode` requires.
    pub(crate) fn apply(
        &mut self,
        grad: Gradient,
        step: &CriticStep,
        mode: ConstraintMode,
    ) -> Result<()> {
        self.ascend(grad)?;
        if let ConstraintMode::WeightClip { c } = mode {
            self.params.clip(c);
        }
        if mode.updates_lambda() {
            self.alm = self.alm.step(step.omega_hat);
        }
        Ok(())
    }
}

/// One critic iteration on fresh batches: Adam ascent, then the mode's
/// post-step (clipping or the `λ` update).
pub fn critic_update(
    state: &mut CriticState,
    x_p: ArrayView2<'_, f64>,
    x_q: ArrayView2<'_, f64>,
    cfg: &TrainConfig,
    rng: &mut Rng,
) -> Result<CriticStep> {
    let interp = matches!(cfg.mode, ConstraintMode::GradientPenalty { .. })
        .then(|| interpolate(x_p, x_q, rng));
    let (step, grad) = critic_objective(
        &state.params,
        CriticForm::Split,
        x_p,
        x_q,
        cfg.mode,
        state.alm,
        cfg.gamma,
        interp.as_ref().map(|x| x.view()),
    )?;
    state.apply(grad, &step, cfg.mode)?;
    Ok(step)
}

/// Generator loss `-mean f(g(z))` (plus `λ_G CE(g(z, y), y)` when labels are
/// given) and its gradient in the generator parameters.
pub fn generator_objective(
    generator: &Params,
    critic: &Params,
    form: CriticForm,
    z: ArrayView2<'_, f64>,
    labels: Option<(&[usize], f64)>,
) -> Result<(f64, Gradient)> {
    let gt = generator.trace(z)?;
    let ct = critic.critic_trace(form, gt.output().view())?;
    let m = z.nrows() as f64;
    let mut loss = -ct.values.sum() / m;
    let d_values = Array1::from_elem(z.nrows(), -1.0 / m);
    let d_logits = match labels {
        Some((y, lambda_g)) if lambda_g != 0.0 => {
            let (ce, d) = crate::ssl::ce_from_logits(
                ct.logits
                    .as_ref()
                    .ok_or_else(|| Error::ShapeMismatch("critic has no class head".into()))?
                    .view(),
                y,
            )?;
            loss += lambda_g * ce;
            Some(d * lambda_g)
        }
        _ => None,
    };
    if !loss.is_finite() {
        return Err(Error::NonFiniteLoss(format!("generator loss {loss}")));
    }
    let (_, dx) = critic.critic_backward(
        form,
        &ct,
        d_values.view(),
        d_logits.as_ref().map(|d| d.view()),
    );
    let (grad, _) = generator.backward(&gt, dx.view(), None);
    Ok((loss, grad))
}

/// One Adam descent step on the generator with the critic frozen.
pub fn generator_update(
    generator: &mut Params,
    adam: &mut AdamState,
    critic: &Params,
    z: ArrayView2<'_, f64>,
) -> Result<f64> {
    let (loss, grad) = generator_objective(generator, critic, CriticForm::Split, z, None)?;
    adam.step(&mut generator.values, &grad.values, false)?;
    Ok(loss)
}
