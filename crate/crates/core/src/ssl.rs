//! Semi-supervised critics: a class head `S` on the critic features trained
//! with a cross-entropy term, the K+1 critic, and label-conditioned
//! generators, on toy labeled mixtures.

use ndarray::{Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::diffnet::{log_softmax_rows, softmax_rows, CriticForm, Gradient, Layout, Params};
use crate::distzoo::{Distribution, DistributionSpec, GaussianParams, MixtureParams};
use crate::error::{Error, Result};
use crate::fisher::{self, CriticState, GanRun, SslHooks, TrainConfig};
use crate::rng::{self, streams};

/// Held-out sample size for the accuracy readout.
pub const HELD_OUT_SAMPLES: usize = 10_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SslConfig {
    pub classes: usize,
    /// Cross-entropy weight in the critic loss; defaults by critic form.
    pub lambda_d: Option<f64>,
    /// Cross-entropy weight in the generator loss; defaults by critic form.
    pub lambda_g: Option<f64>,
    pub labeled_per_class: usize,
    pub critic_form: CriticForm,
    pub conditional: bool,
}

impl Default for SslConfig {
    fn default() -> Self {
        Self {
            classes: 3,
            lambda_d: None,
            lambda_g: None,
            labeled_per_class: 10,
            critic_form: CriticForm::KPlusOne,
            conditional: true,
        }
    }
}

impl SslConfig {
    /// `cfg` with the generator input widened to `z_dim + K` for a
    /// conditional generator, or set to `z_dim` otherwise.
    pub fn fit_generator(&self, cfg: &TrainConfig) -> TrainConfig {
        let mut t = cfg.clone();
        t.generator.layer_sizes[0] = cfg.z_dim + if self.conditional { self.classes } else { 0 };
        t
    }

    /// `(λ_D, λ_G)`: 0.1/0.1 for the split critic, 1.5/0.1 for K+1 unless set.
    pub fn lambdas(&self) -> (f64, f64) {
        let (d, g) = match self.critic_form {
            CriticForm::Split => (0.1, 0.1),
            CriticForm::KPlusOne => (1.5, 0.1),
        };
        (self.lambda_d.unwrap_or(d), self.lambda_g.unwrap_or(g))
    }

    pub fn validate(&self) -> Result<()> {
        let (ld, lg) = self.lambdas();
        if self.classes < 2 {
            return Err(Error::InvalidConfig("SSL needs at least 2 classes".into()));
        }
        if !(ld >= 0.0 && lg >= 0.0) {
            return Err(Error::InvalidConfig(
                "cross-entropy weights must be non-negative".into(),
            ));
        }
        if self.labeled_per_class < 1 {
            return Err(Error::InvalidConfig(
                "labeled_per_class must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

fn check_labels(labels: &[usize], rows: usize, classes: usize) -> Result<()> {
    if labels.len() != rows {
        return Err(Error::ShapeMismatch(format!(
            "{} labels for {rows} rows",
            labels.len()
        )));
    }
    if rows == 0 {
        return Err(Error::ShapeMismatch("empty labeled batch".into()));
    }
    if let Some(y) = labels.iter().find(|&&y| y >= classes) {
        return Err(Error::ShapeMismatch(format!(
            "label {y} outside [0, {classes})"
        )));
    }
    Ok(())
}

/// Mean `-log softmax(logits)_y` and its adjoint `(softmax - onehot) / n`.
pub fn ce_from_logits(logits: ArrayView2<'_, f64>, labels: &[usize]) -> Result<(f64, Array2<f64>)> {
    check_labels(labels, logits.nrows(), logits.ncols())?;
    let n = labels.len() as f64;
    let logp = log_softmax_rows(logits);
    let ce = -labels
        .iter()
        .enumerate()
        .map(|(i, &y)| logp[[i, y]])
        .sum::<f64>()
        / n;
    let mut d = softmax_rows(logits);
    for (i, &y) in labels.iter().enumerate() {
        d[[i, y]] -= 1.0;
    }
    d /= n;
    Ok((ce, d))
}

/// Cross-entropy of the classifier `softmax(S Φ)` on labeled features.
pub fn ce_loss(
    s: ArrayView2<'_, f64>,
    features: ArrayView2<'_, f64>,
    labels: &[usize],
) -> Result<f64> {
    if s.ncols() != features.ncols() {
        return Err(Error::ShapeMismatch(format!(
            "head has {} columns, features {}",
            s.ncols(),
            features.ncols()
        )));
    }
    Ok(ce_from_logits(features.dot(&s.t()).view(), labels)?.0)
}

/// Cross-entropy of the critic's class head and its gradient in all critic
/// parameters.
pub fn ce_gradient(
    params: &Params,
    x: ArrayView2<'_, f64>,
    labels: &[usize],
) -> Result<(f64, Gradient)> {
    let trace = params.critic_trace(CriticForm::Split, x)?;
    let logits = trace
        .logits
        .as_ref()
        .ok_or_else(|| Error::ShapeMismatch("critic has no class head".into()))?;
    let (ce, d_logits) = ce_from_logits(logits.view(), labels)?;
    let zeros = ndarray::Array1::zeros(x.nrows());
    let (grad, _) = params.critic_backward(
        CriticForm::Split,
        &trace,
        zeros.view(),
        Some(d_logits.view()),
    );
    Ok((ce, grad))
}

/// `L_D = L_F - λ_D CE`; the critic maximises it.
pub fn critic_loss_ssl(l_f: f64, ce: f64, lambda_d: f64) -> f64 {
    l_f - lambda_d * ce
}

/// `L_G = Ê + λ_G CE`; the generator minimises it.
pub fn generator_loss_ssl(e_hat: f64, ce_gen: f64, lambda_g: f64) -> f64 {
    e_hat + lambda_g * ce_gen
}

/// `g_θ(z, y)`: the generator applied to `[z, onehot(y)]`.
pub fn conditional_forward(
    generator: &Params,
    z: ArrayView2<'_, f64>,
    labels: &[usize],
    classes: usize,
) -> Result<Array2<f64>> {
    check_labels(labels, z.nrows(), classes)?;
    if generator.spec().input_dim() != z.ncols() + classes {
        return Err(Error::ShapeMismatch(format!(
            "generator input {} is not noise {} + classes {classes}",
            generator.spec().input_dim(),
            z.ncols()
        )));
    }
    generator.forward(fisher::conditional_input(z, labels, classes).view())
}

/// `classes` isotropic 2D Gaussian classes with means evenly spaced on a
/// circle of `radius`, equal prior.
pub fn toy_classes(classes: usize, radius: f64, variance: f64) -> DistributionSpec {
    let classes_spec = (0..classes)
        .map(|k| {
            let t = 2.0 * std::f64::consts::PI * k as f64 / classes as f64;
            MixtureParams {
                weights: vec![1.0],
                components: vec![GaussianParams::isotropic(
                    vec![radius * t.cos(), radius * t.sin()],
                    variance,
                )],
            }
        })
        .collect();
    DistributionSpec::LabeledMixture {
        classes: classes_spec,
        prior: vec![1.0 / classes as f64; classes],
    }
}

/// `per_class` labeled rows per class, drawn once from the run's labeled stream.
pub fn labeled_subset(
    data: &Distribution,
    per_class: usize,
    seed: u64,
) -> Result<(Array2<f64>, Vec<usize>)> {
    let mut rng = rng::stream(seed, streams::LABELED_SET);
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for k in 0..data.num_classes() {
        xs.push(data.sample_class(&mut rng, k, per_class)?);
        ys.extend(std::iter::repeat_n(k, per_class));
    }
    let views: Vec<_> = xs.iter().map(|x| x.view()).collect();
    let x =
        ndarray::concatenate(Axis(0), &views).map_err(|e| Error::ShapeMismatch(e.to_string()))?;
    Ok((x, ys))
}

/// Fraction of rows whose head argmax equals the label.
pub fn accuracy(critic: &Params, x: ArrayView2<'_, f64>, labels: &[usize]) -> Result<f64> {
    let s = critic
        .head()
        .ok_or_else(|| Error::ShapeMismatch("critic has no class head".into()))?;
    check_labels(labels, x.nrows(), s.nrows())?;
    let logits = critic.features(x)?.dot(&s.t());
    let correct = logits
        .rows()
        .into_iter()
        .zip(labels)
        .filter(|(row, &y)| {
            let best = row
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.total_cmp(b.1))
                .map(|(k, _)| k);
            best == Some(y)
        })
        .count();
    Ok(correct as f64 / labels.len() as f64)
}

/// JSON summary of one SSL run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracySummary {
    pub seed: u64,
    pub labeled_per_class: usize,
    pub critic_form: CriticForm,
    pub conditional: bool,
    pub test_accuracy: f64,
}

#[derive(Debug, Clone)]
pub struct SslRun {
    pub summary: AccuracySummary,
    pub run: GanRun,
}

fn setup(
    data: &DistributionSpec,
    ssl: &SslConfig,
    cfg: &TrainConfig,
) -> Result<(Distribution, SslHooks)> {
    ssl.validate()?;
    let prior = match data {
        DistributionSpec::LabeledMixture { prior, .. } => prior.clone(),
        _ => {
            return Err(Error::InvalidConfig(
                "SSL training needs a labeled mixture".into(),
            ))
        }
    };
    let dist = Distribution::new(data.clone())?;
    if dist.num_classes() != ssl.classes {
        return Err(Error::InvalidConfig(format!(
            "data has {} classes, config says {}",
            dist.num_classes(),
            ssl.classes
        )));
    }
    let (labeled_x, labeled_y) = labeled_subset(&dist, ssl.labeled_per_class, cfg.seed)?;
    let (lambda_d, lambda_g) = ssl.lambdas();
    Ok((
        dist,
        SslHooks {
            form: ssl.critic_form,
            classes: ssl.classes,
            lambda_d,
            lambda_g,
            conditional: ssl.conditional,
            labeled_x,
            labeled_y,
            prior,
        },
    ))
}

fn held_out(dist: &Distribution, seed: u64) -> (Array2<f64>, Vec<usize>) {
    dist.sample_labeled(&mut rng::stream(seed, streams::HELD_OUT), HELD_OUT_SAMPLES)
}

/// Adversarial training with the three-minibatch critic update (unlabeled,
/// generated, labeled) and the head's accuracy on held-out data.
pub fn train_ssl(data: &DistributionSpec, ssl: &SslConfig, cfg: &TrainConfig) -> Result<SslRun> {
    let (dist, hooks) = setup(data, ssl, cfg)?;
    let run = fisher::adversarial(&dist, cfg, Some(&hooks))?;
    let (x, y) = held_out(&dist, cfg.seed);
    let test_accuracy = accuracy(&run.critic, x.view(), &y)?;
    Ok(SslRun {
        summary: AccuracySummary {
            seed: cfg.seed,
            labeled_per_class: ssl.labeled_per_class,
            critic_form: ssl.critic_form,
            conditional: ssl.conditional,
            test_accuracy,
        },
        run,
    })
}

/// Same critic network and head trained on the labeled set alone by
/// minimising the cross-entropy for `iterations * n_critic` steps.
pub fn supervised_baseline(
    data: &DistributionSpec,
    ssl: &SslConfig,
    cfg: &TrainConfig,
) -> Result<f64> {
    cfg.validate()?;
    let (dist, hooks) = setup(data, ssl, cfg)?;
    let layout = Layout::new(cfg.critic.clone(), Some(ssl.classes))?;
    let params = Params::init(layout, cfg.seed, streams::CRITIC_INIT, cfg.init_stdev)?;
    let mut state = CriticState::new(params, cfg);
    for _ in 0..cfg.iterations * cfg.n_critic {
        let (_, mut grad) = ce_gradient(&state.params, hooks.labeled_x.view(), &hooks.labeled_y)?;
        grad.scale(-1.0);
        state.ascend(grad)?;
    }
    let (x, y) = held_out(&dist, cfg.seed);
    accuracy(&state.params, x.view(), &y)
}
