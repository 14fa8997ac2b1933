//! Central finite differences against the reverse-mode gradients.
//!
//! Every architecture gets random configurations; a coordinate is skipped
//! when the `±h` perturbation flips the sign of any LeakyReLU pre-activation,
//! since the difference quotient straddles a kink there.

use fisheripm::diffnet::{grad_input, grad_params, Trace};
use fisheripm::fisher::{critic_objective, generator_objective};
use fisheripm::ssl::ce_gradient;
use fisheripm::{AlmState, ConstraintMode, CriticForm, Layout, MlpSpec, OutputActivation, Params};
use ndarray::{Array2, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub const H: f64 = 1e-5;
pub const REL_TOL: f64 = 1e-5;
/// Gradients smaller than this are compared on an absolute scale of
/// `REL_TOL * MAG_FLOOR`.
pub const MAG_FLOOR: f64 = 1e-4;
pub const MAX_SKIP_FRACTION: f64 = 0.01;

#[derive(Debug, Default, Clone)]
pub struct Report {
    pub name: &'static str,
    pub configs: usize,
    pub checked: usize,
    pub skipped: usize,
    pub worst_rel: f64,
    pub failures: Vec<String>,
}

impl Report {
    fn new(name: &'static str) -> Self {
        Self {
            name,
            ..Self::default()
        }
    }

    pub fn skip_fraction(&self) -> f64 {
        self.skipped as f64 / (self.checked + self.skipped).max(1) as f64
    }

    pub fn passed(&self) -> bool {
        self.failures.is_empty() && self.skip_fraction() < MAX_SKIP_FRACTION && self.checked > 0
    }
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(MAG_FLOOR)
}

fn signs(trace: &Trace, out: &mut Vec<bool>) {
    let hidden = trace.pre.len() - 1;
    for z in &trace.pre[..hidden] {
        out.extend(z.iter().map(|v| *v > 0.0));
    }
}

/// Compares `analytic` with central differences of `value` over `x`.
/// `pattern` returns the kink signature of a point.
fn compare<V, P>(
    report: &mut Report,
    label: &str,
    x: &[f64],
    analytic: &[f64],
    value: V,
    pattern: P,
) where
    V: Fn(&[f64]) -> f64,
    P: Fn(&[f64]) -> Vec<bool>,
{
    assert_eq!(x.len(), analytic.len());
    let mut buf = x.to_vec();
    for i in 0..x.len() {
        buf[i] = x[i] + H;
        let (fp, sp) = (value(&buf), pattern(&buf));
        buf[i] = x[i] - H;
        let (fm, sm) = (value(&buf), pattern(&buf));
        buf[i] = x[i];
        if sp != sm {
            report.skipped += 1;
            continue;
        }
        let fd = (fp - fm) / (2.0 * H);
        let r = rel_err(analytic[i], fd);
        report.checked += 1;
        report.worst_rel = report.worst_rel.max(r);
        if r > REL_TOL {
            report.failures.push(format!(
                "{label} coord {i}: analytic {:.12e} fd {fd:.12e} rel {r:.2e}",
                analytic[i]
            ));
        }
    }
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ 0x6a09_e667)
}

fn matrix(r: &mut ChaCha8Rng, n: usize, d: usize, scale: f64) -> Array2<f64> {
    Array2::from_shape_simple_fn((n, d), || scale * r.sample::<f64, _>(StandardNormal))
}

fn random_spec(r: &mut ChaCha8Rng, input: usize, output: usize) -> MlpSpec {
    let depth = r.random_range(0..=3);
    let mut sizes = vec![input];
    for _ in 0..depth {
        sizes.push(r.random_range(2..=7));
    }
    sizes.push(output);
    MlpSpec {
        slope: r.random_range(0.05..0.5),
        ..MlpSpec::new(sizes)
    }
}

fn random_params(r: &mut ChaCha8Rng, spec: MlpSpec, classes: Option<usize>) -> Params {
    let layout = Layout::new(spec, classes).unwrap();
    let seed = r.random();
    Params::init(layout, seed, 1, r.random_range(0.4..1.0)).unwrap()
}

fn with_values(p: &Params, v: &[f64]) -> Params {
    Params::from_values(p.layout().clone(), v.to_vec()).unwrap()
}

fn critic_signs(p: &Params, xs: &[ArrayView2<'_, f64>]) -> Vec<bool> {
    let mut s = Vec::new();
    for x in xs {
        signs(&p.trace(*x).unwrap(), &mut s);
    }
    s
}

/// Multi-output MLP, random output activation, loss `Σ c ⊙ out`.
pub fn mlp_params(configs: usize) -> Report {
    let mut rep = Report::new("mlp parameters");
    for c in 0..configs {
        let r = &mut rng(100 + c as u64);
        let (d, out) = (r.random_range(1..=3), r.random_range(1..=3));
        let mut spec = random_spec(r, d, out);
        if r.random_bool(0.5) {
            spec.output = OutputActivation::Tanh;
        }
        let p = random_params(r, spec, None);
        let x = {
            let n = r.random_range(3..12);
            matrix(r, n, d, 1.0)
        };
        let w = matrix(r, x.nrows(), out, 1.0);
        let loss = |o: ArrayView2<'_, f64>| ((&o * &w).sum(), w.clone());
        let (_, g) = grad_params(&p, x.view(), loss).unwrap();
        compare(
            &mut rep,
            &format!("config {c}"),
            &p.values,
            &g.values,
            |v| (with_values(&p, v).forward(x.view()).unwrap() * &w).sum(),
            |v| critic_signs(&with_values(&p, v), &[x.view()]),
        );
        rep.configs += 1;
    }
    rep
}

/// `∇_x f` of scalar networks, row by row.
pub fn input_gradients(configs: usize) -> Report {
    let mut rep = Report::new("input gradients");
    for c in 0..configs {
        let r = &mut rng(200 + c as u64);
        let d = r.random_range(1..=3);
        let p = {
            let spec = random_spec(r, d, 1);
            random_params(r, spec, None)
        };
        let x = {
            let n = r.random_range(3..10);
            matrix(r, n, d, 1.0)
        };
        let g = grad_input(&p, x.view()).unwrap();
        let n = x.nrows();
        let flat: Vec<f64> = x.iter().copied().collect();
        let as_x = |v: &[f64]| Array2::from_shape_vec((n, d), v.to_vec()).unwrap();
        compare(
            &mut rep,
            &format!("config {c}"),
            &flat,
            &g.iter().copied().collect::<Vec<_>>(),
            |v| p.forward(as_x(v).view()).unwrap().sum(),
            |v| critic_signs(&p, &[as_x(v).view()]),
        );
        rep.configs += 1;
    }
    rep
}

/// K+1 critic input gradients through the class head.
pub fn kplus1_input_gradients(configs: usize) -> Report {
    let mut rep = Report::new("K+1 critic input gradients");
    for c in 0..configs {
        let r = &mut rng(250 + c as u64);
        let (d, k) = (r.random_range(1..=3), r.random_range(2..=4));
        let p = {
            let spec = random_spec(r, d, 1);
            random_params(r, spec, Some(k))
        };
        let x = {
            let n = r.random_range(3..10);
            matrix(r, n, d, 1.0)
        };
        let n = x.nrows();
        let t = p.critic_trace(CriticForm::KPlusOne, x.view()).unwrap();
        let ones = ndarray::Array1::ones(n);
        let (_, dx) = p.critic_backward(CriticForm::KPlusOne, &t, ones.view(), None);
        let as_x = |v: &[f64]| Array2::from_shape_vec((n, d), v.to_vec()).unwrap();
        compare(
            &mut rep,
            &format!("config {c}"),
            &x.iter().copied().collect::<Vec<_>>(),
            &dx.iter().copied().collect::<Vec<_>>(),
            |v| {
                p.critic(CriticForm::KPlusOne, as_x(v).view())
                    .unwrap()
                    .sum()
            },
            |v| critic_signs(&p, &[as_x(v).view()]),
        );
        rep.configs += 1;
    }
    rep
}

fn random_alm(r: &mut ChaCha8Rng) -> AlmState {
    AlmState {
        lambda: r.random_range(-1.0..1.0),
        rho: r.random_range(0.0..2.0),
    }
}

fn objective_report(
    name: &'static str,
    seed0: u64,
    configs: usize,
    form: CriticForm,
    pick_mode: impl Fn(&mut ChaCha8Rng) -> ConstraintMode,
) -> Report {
    let mut rep = Report::new(name);
    for c in 0..configs {
        let r = &mut rng(seed0 + c as u64);
        let d = r.random_range(1..=3);
        let classes = (form == CriticForm::KPlusOne).then(|| r.random_range(2..=4));
        let p = {
            let spec = random_spec(r, d, 1);
            random_params(r, spec, classes)
        };
        let xp = {
            let n = r.random_range(3..10);
            matrix(r, n, d, 1.0)
        };
        let xq = &{
            let n = r.random_range(3..10);
            matrix(r, n, d, 1.0)
        } + 0.7;
        let mode = pick_mode(r);
        let alm = random_alm(r);
        let gamma = if r.random_bool(0.5) {
            r.random_range(0.0..0.5)
        } else {
            0.0
        };
        let interp = matrix(r, xp.nrows().min(xq.nrows()), d, 1.0);
        let ip = matches!(mode, ConstraintMode::GradientPenalty { .. }).then(|| interp.view());
        let (_, g) =
            critic_objective(&p, form, xp.view(), xq.view(), mode, alm, gamma, ip).unwrap();
        compare(
            &mut rep,
            &format!("config {c} {}", mode.name()),
            &p.values,
            &g.values,
            |v| {
                critic_objective(
                    &with_values(&p, v),
                    form,
                    xp.view(),
                    xq.view(),
                    mode,
                    alm,
                    gamma,
                    ip,
                )
                .unwrap()
                .0
                .objective
            },
            |v| critic_signs(&with_values(&p, v), &[xp.view(), xq.view(), interp.view()]),
        );
        rep.configs += 1;
    }
    rep
}

/// Split critic under every constraint mode except the gradient penalty.
pub fn split_critic_objectives(configs: usize) -> Report {
    objective_report(
        "split critic objectives",
        300,
        configs,
        CriticForm::Split,
        |r| match r.random_range(0..4) {
            0 => ConstraintMode::FisherAlm,
            1 => ConstraintMode::NeymanAlm,
            2 => ConstraintMode::FGanChi2,
            _ => ConstraintMode::WeightClip { c: 0.1 },
        },
    )
}

/// K+1 critic under the Fisher and Neyman constraints.
pub fn kplus1_critic_objectives(configs: usize) -> Report {
    objective_report(
        "K+1 critic objectives",
        400,
        configs,
        CriticForm::KPlusOne,
        |r| {
            if r.random_bool(0.5) {
                ConstraintMode::FisherAlm
            } else {
                ConstraintMode::NeymanAlm
            }
        },
    )
}

/// Wasserstein objective with the two-sided gradient penalty.
pub fn gradient_penalty_objective(configs: usize) -> Report {
    objective_report(
        "gradient penalty objective",
        500,
        configs,
        CriticForm::Split,
        |r| ConstraintMode::GradientPenalty {
            mu: r.random_range(0.5..10.0),
        },
    )
}

/// Class-head cross-entropy in all critic parameters.
pub fn cross_entropy(configs: usize) -> Report {
    let mut rep = Report::new("cross-entropy");
    for c in 0..configs {
        let r = &mut rng(600 + c as u64);
        let (d, k) = (r.random_range(1..=3), r.random_range(2..=4));
        let p = {
            let spec = random_spec(r, d, 1);
            random_params(r, spec, Some(k))
        };
        let x = {
            let n = r.random_range(3..12);
            matrix(r, n, d, 1.0)
        };
        let y: Vec<usize> = (0..x.nrows()).map(|_| r.random_range(0..k)).collect();
        let (_, g) = ce_gradient(&p, x.view(), &y).unwrap();
        compare(
            &mut rep,
            &format!("config {c}"),
            &p.values,
            &g.values,
            |v| ce_gradient(&with_values(&p, v), x.view(), &y).unwrap().0,
            |v| critic_signs(&with_values(&p, v), &[x.view()]),
        );
        rep.configs += 1;
    }
    rep
}

fn onehot_input(z: &Array2<f64>, y: &[usize], k: usize) -> Array2<f64> {
    let mut out = Array2::zeros((z.nrows(), z.ncols() + k));
    out.slice_mut(ndarray::s![.., ..z.ncols()]).assign(z);
    for (i, &c) in y.iter().enumerate() {
        out[[i, z.ncols() + c]] = 1.0;
    }
    out
}

fn generator_report(name: &'static str, seed0: u64, configs: usize, conditional: bool) -> Report {
    let mut rep = Report::new(name);
    for c in 0..configs {
        let r = &mut rng(seed0 + c as u64);
        let (d, zd) = (r.random_range(1..=3), r.random_range(1..=3));
        let k = r.random_range(2..=4);
        let n = r.random_range(3..10);
        let z = matrix(r, n, zd, 1.0);
        let (form, classes, input, labels) = if conditional {
            let y: Vec<usize> = (0..n).map(|_| r.random_range(0..k)).collect();
            (
                CriticForm::KPlusOne,
                Some(k),
                onehot_input(&z, &y, k),
                Some(y),
            )
        } else {
            (CriticForm::Split, None, z.clone(), None)
        };
        let lambda_g = r.random_range(0.1..2.0);
        let gen = {
            let spec = random_spec(r, input.ncols(), d);
            random_params(r, spec, None)
        };
        let critic = {
            let spec = random_spec(r, d, 1);
            random_params(r, spec, classes)
        };
        let lab = labels.as_deref().map(|y| (y, lambda_g));
        let (_, g) = generator_objective(&gen, &critic, form, input.view(), lab).unwrap();
        compare(
            &mut rep,
            &format!("config {c}"),
            &gen.values,
            &g.values,
            |v| {
                generator_objective(&with_values(&gen, v), &critic, form, input.view(), lab)
                    .unwrap()
                    .0
            },
            |v| {
                let gp = with_values(&gen, v);
                let t = gp.trace(input.view()).unwrap();
                let mut s = Vec::new();
                signs(&t, &mut s);
                signs(&critic.trace(t.output().view()).unwrap(), &mut s);
                s
            },
        );
        rep.configs += 1;
    }
    rep
}

/// `-mean f(g(z))` through a split critic.
pub fn generator(configs: usize) -> Report {
    generator_report("generator", 700, configs, false)
}

/// Conditional generator `g(z, y)` through a K+1 critic plus `λ_G CE`.
pub fn conditional_generator(configs: usize) -> Report {
    generator_report("conditional generator", 800, configs, true)
}

pub fn all(configs: usize) -> Vec<Report> {
    vec![
        mlp_params(configs),
        input_gradients(configs),
        kplus1_input_gradients(configs),
        split_critic_objectives(configs),
        kplus1_critic_objectives(configs),
        gradient_penalty_objective(configs),
        cross_entropy(configs),
        generator(configs),
        conditional_generator(configs),
    ]
}
