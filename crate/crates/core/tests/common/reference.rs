//! Test-side densities and samplers for d <= 2, written without the library
//! so the Monte Carlo oracle shares no code with the quadrature it checks.

use std::f64::consts::PI;

use fisheripm::{DistributionSpec, GaussianParams, MixtureParams};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

#[derive(Debug, Clone)]
pub struct Gauss {
    pub mean: Vec<f64>,
    pub cov: Vec<Vec<f64>>,
}

impl Gauss {
    pub fn iso(mean: Vec<f64>, var: f64) -> Self {
        let d = mean.len();
        let cov = (0..d)
            .map(|i| (0..d).map(|j| if i == j { var } else { 0.0 }).collect())
            .collect();
        Self { mean, cov }
    }

    fn density(&self, x: &[f64]) -> f64 {
        match self.mean.len() {
            1 => {
                let v = self.cov[0][0];
                let z = x[0] - self.mean[0];
                (-0.5 * z * z / v).exp() / (2.0 * PI * v).sqrt()
            }
            2 => {
                let (a, b, c) = (self.cov[0][0], self.cov[0][1], self.cov[1][1]);
                let det = a * c - b * b;
                let (u, w) = (x[0] - self.mean[0], x[1] - self.mean[1]);
                let q = (c * u * u - 2.0 * b * u * w + a * w * w) / det;
                (-0.5 * q).exp() / (2.0 * PI * det.sqrt())
            }
            _ => unreachable!("reference densities cover d <= 2"),
        }
    }

    fn sample(&self, r: &mut ChaCha8Rng) -> [f64; 2] {
        let e0: f64 = r.sample(StandardNormal);
        match self.mean.len() {
            1 => [self.mean[0] + self.cov[0][0].sqrt() * e0, 0.0],
            _ => {
                let e1: f64 = r.sample(StandardNormal);
                let l00 = self.cov[0][0].sqrt();
                let l10 = self.cov[1][0] / l00;
                let l11 = (self.cov[1][1] - l10 * l10).sqrt();
                [self.mean[0] + l00 * e0, self.mean[1] + l10 * e0 + l11 * e1]
            }
        }
    }

    fn spec(&self) -> GaussianParams {
        GaussianParams {
            mean: self.mean.clone(),
            cov: self.cov.clone(),
        }
    }
}

#[derive(Debug, Clone)]
pub enum Ref {
    Gauss(Gauss),
    Mix(Vec<(f64, Gauss)>),
    Box { lo: Vec<f64>, hi: Vec<f64> },
}

impl Ref {
    pub fn ring(k: usize, radius: f64, var: f64) -> Self {
        Ref::Mix(
            (0..k)
                .map(|j| {
                    let t = 2.0 * PI * j as f64 / k as f64;
                    (
                        1.0 / k as f64,
                        Gauss::iso(vec![radius * t.cos(), radius * t.sin()], var),
                    )
                })
                .collect(),
        )
    }

    pub fn dim(&self) -> usize {
        match self {
            Ref::Gauss(g) => g.mean.len(),
            Ref::Mix(c) => c[0].1.mean.len(),
            Ref::Box { lo, .. } => lo.len(),
        }
    }

    pub fn density(&self, x: &[f64]) -> f64 {
        match self {
            Ref::Gauss(g) => g.density(x),
            Ref::Mix(c) => c.iter().map(|(w, g)| w * g.density(x)).sum(),
            Ref::Box { lo, hi } => {
                let inside = (0..lo.len()).all(|i| x[i] >= lo[i] && x[i] <= hi[i]);
                if inside {
                    1.0 / (0..lo.len()).map(|i| hi[i] - lo[i]).product::<f64>()
                } else {
                    0.0
                }
            }
        }
    }

    pub fn sample(&self, r: &mut ChaCha8Rng) -> [f64; 2] {
        match self {
            Ref::Gauss(g) => g.sample(r),
            Ref::Mix(c) => {
                let mut u: f64 = r.random();
                for (w, g) in c {
                    if u < *w {
                        return g.sample(r);
                    }
                    u -= w;
                }
                c.last().unwrap().1.sample(r)
            }
            Ref::Box { lo, hi } => {
                let mut out = [0.0; 2];
                for i in 0..lo.len() {
                    out[i] = r.random_range(lo[i]..hi[i]);
                }
                out
            }
        }
    }

    pub fn spec(&self) -> DistributionSpec {
        match self {
            Ref::Gauss(g) => DistributionSpec::Gaussian(g.spec()),
            Ref::Mix(c) => DistributionSpec::GaussianMixture(MixtureParams {
                weights: c.iter().map(|(w, _)| *w).collect(),
                components: c.iter().map(|(_, g)| g.spec()).collect(),
            }),
            Ref::Box { lo, hi } => DistributionSpec::uniform(lo.clone(), hi.clone()),
        }
    }
}

pub struct McChi2 {
    pub value: f64,
    pub standard_error: f64,
}

/// `χ = sqrt(E_M[((P - Q)/M)²])` with `M = (P + Q)/2`, half the draws from
/// each side, standard error by the delta method.
pub fn mc_chi2(p: &Ref, q: &Ref, samples: usize, seed: u64) -> McChi2 {
    const CHUNKS: u64 = 64;
    let per_side = samples / 2;
    let per_chunk = per_side / CHUNKS as usize;
    let d = p.dim();
    let side = |src: &Ref, stream: u64| -> (f64, f64, usize) {
        (0..CHUNKS)
            .into_par_iter()
            .map(|c| {
                let mut r = ChaCha8Rng::seed_from_u64(seed);
                r.set_stream(stream * CHUNKS + c);
                let (mut s, mut s2) = (0.0, 0.0);
                for _ in 0..per_chunk {
                    let x = src.sample(&mut r);
                    let (a, b) = (p.density(&x[..d]), q.density(&x[..d]));
                    let m = 0.5 * (a + b);
                    let g = if m > 0.0 { ((a - b) / m).powi(2) } else { 0.0 };
                    s += g;
                    s2 += g * g;
                }
                (s, s2, per_chunk)
            })
            .reduce(|| (0.0, 0.0, 0), |x, y| (x.0 + y.0, x.1 + y.1, x.2 + y.2))
    };
    let stats = |(s, s2, n): (f64, f64, usize)| {
        let n = n as f64;
        let mean = s / n;
        (mean, (s2 / n - mean * mean).max(0.0) / n)
    };
    let (mp, vp) = stats(side(p, 0));
    let (mq, vq) = stats(side(q, 1));
    let sq = 0.5 * (mp + mq);
    let sq_var = 0.25 * (vp + vq);
    let value = sq.sqrt();
    McChi2 {
        value,
        standard_error: if value > 0.0 {
            sq_var.sqrt() / (2.0 * value)
        } else {
            sq_var.sqrt().sqrt()
        },
    }
}

/// Ten pairs over d in {1, 2}: shifts, scale changes, mixtures, rings and
/// correlated covariances.
pub fn pairs() -> Vec<(&'static str, Ref, Ref)> {
    let g1 = |m: f64, v: f64| Gauss::iso(vec![m], v);
    let g2 = |m: [f64; 2], cov: [[f64; 2]; 2]| Gauss {
        mean: m.to_vec(),
        cov: cov.iter().map(|r| r.to_vec()).collect(),
    };
    let id = [[1.0, 0.0], [0.0, 1.0]];
    vec![
        (
            "N(0,1) vs N(1,1)",
            Ref::Gauss(g1(0.0, 1.0)),
            Ref::Gauss(g1(1.0, 1.0)),
        ),
        (
            "N(0,1) vs N(0,4)",
            Ref::Gauss(g1(0.0, 1.0)),
            Ref::Gauss(g1(0.0, 4.0)),
        ),
        (
            "N(0,1) vs bimodal",
            Ref::Gauss(g1(0.0, 1.0)),
            Ref::Mix(vec![(0.5, g1(-2.0, 0.5)), (0.5, g1(2.0, 0.5))]),
        ),
        (
            "mixture vs mixture 1d",
            Ref::Mix(vec![(0.3, g1(-1.0, 1.0)), (0.7, g1(1.5, 0.3))]),
            Ref::Mix(vec![(0.5, g1(0.0, 2.0)), (0.5, g1(3.0, 1.0))]),
        ),
        (
            "N(0,1) vs N(3,0.25)",
            Ref::Gauss(g1(0.0, 1.0)),
            Ref::Gauss(g1(3.0, 0.25)),
        ),
        (
            "N(0,I) vs N(e1,I)",
            Ref::Gauss(g2([0.0, 0.0], id)),
            Ref::Gauss(g2([1.0, 0.0], id)),
        ),
        (
            "N(0,I) vs correlated",
            Ref::Gauss(g2([0.0, 0.0], id)),
            Ref::Gauss(g2([0.0, 0.0], [[2.0, 0.5], [0.5, 1.0]])),
        ),
        (
            "ring(8) vs N(0,2I)",
            Ref::ring(8, 2.0, 0.04),
            Ref::Gauss(g2([0.0, 0.0], [[2.0, 0.0], [0.0, 2.0]])),
        ),
        (
            "ring(4) vs ring(8)",
            Ref::ring(4, 1.0, 0.09),
            Ref::ring(8, 1.0, 0.09),
        ),
        (
            "2d mixture vs gaussian",
            Ref::Mix(vec![
                (0.6, g2([-1.0, 0.0], [[1.0, 0.3], [0.3, 0.5]])),
                (0.4, g2([1.0, 1.0], [[0.5, 0.0], [0.0, 0.5]])),
            ]),
            Ref::Gauss(g2([0.0, 0.5], [[1.5, 0.0], [0.0, 1.0]])),
        ),
    ]
}
