//! Trend diagnostics for GAN runs, where the model has no density.

use ndarray::{Array2, ArrayView2, Axis};
use rand::Rng as _;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::distzoo::Distribution;
use crate::error::{Error, Result};
use crate::oracle::quadrature::pairwise_sum;
use crate::rng::{self, streams};

/// Generator samples behind the kernel density estimate.
pub const PROXY_SAMPLES: usize = 10_000;

/// Monte Carlo points for the proxy integral.
pub const PROXY_MC_POINTS: usize = 2_000;

/// Scott's rule `σ_j n^{-1/(d+4)}` per coordinate.
pub fn scott_bandwidth(samples: ArrayView2<'_, f64>) -> Vec<f64> {
    let (n, d) = samples.dim();
    let factor = (n as f64).powf(-1.0 / (d as f64 + 4.0));
    samples
        .axis_iter(Axis(1))
        .map(|col| (col.std(1.0) * factor).max(1e-8))
        .collect()
}

struct Kde<'a> {
    samples: ArrayView2<'a, f64>,
    h: Vec<f64>,
    norm: f64,
}

impl<'a> Kde<'a> {
    fn new(samples: ArrayView2<'a, f64>) -> Self {
        let h = scott_bandwidth(samples);
        let d = h.len() as f64;
        let norm = 1.0
            / (samples.nrows() as f64
                * h.iter().product::<f64>()
                * (2.0 * std::f64::consts::PI).powf(d / 2.0));
        Self { samples, h, norm }
    }

    fn density(&self, x: &[f64]) -> f64 {
        let mut acc = 0.0;
        for s in self.samples.rows() {
            let mut q = 0.0;
            for ((xi, si), hi) in x.iter().zip(s.iter()).zip(&self.h) {
                let t = (xi - si) / hi;
                q += t * t;
            }
            acc += (-0.5 * q).exp();
        }
        acc * self.norm
    }
}

/// χ² distance between `data` and a Gaussian KDE of `samples`.
///
/// The integral `∫ (P-K)² / M` with `M = (P+K)/2` is estimated as the mean of
/// `((P-K)/M)²` over draws from `M`, half from each side. The integrand lies
/// in `[0, 4]`. Draws come from a fixed stream, so calls along a run share
/// their random numbers.
pub fn kde_chi2_proxy(data: &Distribution, samples: ArrayView2<'_, f64>, seed: u64) -> Result<f64> {
    if samples.nrows() < 2 || samples.ncols() != data.dim() {
        return Err(Error::ShapeMismatch(
            "proxy needs at least two samples of the data dimension".into(),
        ));
    }
    if !samples.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFiniteLoss("generator samples".into()));
    }
    let kde = Kde::new(samples);
    let mut rng = rng::stream(seed, streams::PROXY);
    let half = PROXY_MC_POINTS / 2;
    let from_p = data.sample_with(&mut rng, half);
    let mut from_k = Array2::zeros((half, data.dim()));
    for mut row in from_k.rows_mut() {
        let s = samples.row(rng.random_range(0..samples.nrows()));
        for ((v, c), h) in row.iter_mut().zip(s.iter()).zip(&kde.h) {
            let e: f64 = rng.sample(StandardNormal);
            *v = c + h * e;
        }
    }
    let points = ndarray::concatenate![Axis(0), from_p, from_k];
    let terms: Vec<f64> = (0..points.nrows())
        .into_par_iter()
        .map(|i| {
            let x = points.row(i).to_vec();
            let (p, k) = (data.density(&x), kde.density(&x));
            let m = 0.5 * (p + k);
            if m > 0.0 {
                ((p - k) / m).powi(2)
            } else {
                0.0
            }
        })
        .collect();
    Ok((pairwise_sum(&terms) / terms.len() as f64).sqrt())
}

/// Fraction of samples whose nearest centre is each centre.
pub fn mode_coverage(samples: ArrayView2<'_, f64>, centers: &[Vec<f64>]) -> Vec<f64> {
    let mut counts = vec![0usize; centers.len()];
    for row in samples.rows() {
        let nearest = centers
            .iter()
            .enumerate()
            .map(|(k, c)| {
                (
                    k,
                    row.iter()
                        .zip(c)
                        .map(|(a, b)| (a - b) * (a - b))
                        .sum::<f64>(),
                )
            })
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .map(|(k, _)| k);
        if let Some(k) = nearest {
            counts[k] += 1;
        }
    }
    let n = samples.nrows().max(1) as f64;
    counts.into_iter().map(|c| c as f64 / n).collect()
}
