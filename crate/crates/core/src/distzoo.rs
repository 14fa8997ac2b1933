//! Analytic synthetic distributions.
//!
//! A [`DistributionSpec`] is the serialisable description; [`Distribution`] is
//! the validated form with Cholesky factors precomputed. Gaussians, mixtures,
//! rings and labeled mixtures all compile to one weighted list of Gaussian
//! components, so density and sampling share a single code path.

use nalgebra::DMatrix;
use ndarray::Array2;
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, Rng};

/// Per-axis half-width of the truncation box, in component standard deviations.
pub const TRUNCATION_SDS: f64 = 8.0;

const WEIGHT_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianParams {
    pub mean: Vec<f64>,
    /// Row-major covariance, `d` rows of length `d`.
    pub cov: Vec<Vec<f64>>,
}

impl GaussianParams {
    pub fn isotropic(mean: Vec<f64>, variance: f64) -> Self {
        let d = mean.len();
        let cov = (0..d)
            .map(|i| {
                (0..d)
                    .map(|j| if i == j { variance } else { 0.0 })
                    .collect()
            })
            .collect();
        Self { mean, cov }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureParams {
    pub weights: Vec<f64>,
    pub components: Vec<GaussianParams>,
}

/// Serialisable description of a synthetic distribution.
///
/// JSON form carries a `"variant"` tag, e.g.
/// `{"variant":"Ring","k":8,"radius":2.0,"sigma":0.02}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant")]
pub enum DistributionSpec {
    Gaussian(GaussianParams),
    GaussianMixture(MixtureParams),
    /// `k` isotropic modes at angles `2πj/k` on a circle, equal weights.
    Ring {
        k: usize,
        radius: f64,
        sigma: f64,
    },
    UniformBox {
        lo: Vec<f64>,
        hi: Vec<f64>,
    },
    /// Class `y` is distributed as `classes[y]`; labels are drawn from `prior`.
    LabeledMixture {
        classes: Vec<MixtureParams>,
        prior: Vec<f64>,
    },
}

impl DistributionSpec {
    pub fn gaussian(mean: Vec<f64>, variance: f64) -> Self {
        Self::Gaussian(GaussianParams::isotropic(mean, variance))
    }

    pub fn ring(k: usize, radius: f64, sigma: f64) -> Self {
        Self::Ring { k, radius, sigma }
    }

    pub fn uniform(lo: Vec<f64>, hi: Vec<f64>) -> Self {
        Self::UniformBox { lo, hi }
    }
}

#[derive(Debug, Clone)]
struct Component {
    weight: f64,
    label: usize,
    mean: Vec<f64>,
    /// Lower Cholesky factor, row-major `d x d`.
    chol: Vec<f64>,
    log_norm: f64,
    sd: Vec<f64>,
}

impl Component {
    fn new(g: &GaussianParams, weight: f64, label: usize) -> Result<Self> {
        let d = g.mean.len();
        if g.cov.len() != d || g.cov.iter().any(|row| row.len() != d) {
            return Err(Error::InvalidDistribution(format!(
                "covariance must be {d}x{d}"
            )));
        }
        let m = DMatrix::from_fn(d, d, |i, j| g.cov[i][j]);
        let scale = m.amax().max(1.0);
        for i in 0..d {
            for j in 0..i {
                if (m[(i, j)] - m[(j, i)]).abs() > 1e-12 * scale {
                    return Err(Error::InvalidDistribution(
                        "covariance is not symmetric".into(),
                    ));
                }
            }
        }
        if g.mean.iter().chain(m.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidDistribution("non-finite parameter".into()));
        }
        let l = m
            .cholesky()
            .ok_or_else(|| {
                Error::InvalidDistribution("covariance is not positive definite".into())
            })?
            .l();
        let mut chol = vec![0.0; d * d];
        let mut log_det_half = 0.0;
        for i in 0..d {
            for j in 0..=i {
                chol[i * d + j] = l[(i, j)];
            }
            log_det_half += l[(i, i)].ln();
        }
        let log_norm = -0.5 * d as f64 * (2.0 * std::f64::consts::PI).ln() - log_det_half;
        let sd = (0..d).map(|i| g.cov[i][i].sqrt()).collect();
        Ok(Self {
            weight,
            label,
            mean: g.mean.clone(),
            chol,
            log_norm,
            sd,
        })
    }

    fn log_density(&self, x: &[f64]) -> f64 {
        let d = self.mean.len();
        // forward substitution L y = x - mean
        let mut y = [0.0f64; 8];
        let mut heap;
        let y: &mut [f64] = if d <= 8 {
            &mut y[..d]
        } else {
            heap = vec![0.0; d];
            &mut heap
        };
        let mut quad = 0.0;
        for i in 0..d {
            let row = &self.chol[i * d..i * d + i];
            let s = row.iter().zip(y.iter()).map(|(a, b)| a * b).sum::<f64>();
            y[i] = (x[i] - self.mean[i] - s) / self.chol[i * d + i];
            quad += y[i] * y[i];
        }
        self.log_norm - 0.5 * quad
    }

    fn draw(&self, rng: &mut Rng, out: &mut [f64]) {
        let d = self.mean.len();
        let mut z = [0.0f64; 8];
        let mut heap;
        let z: &mut [f64] = if d <= 8 {
            &mut z[..d]
        } else {
            heap = vec![0.0; d];
            &mut heap
        };
        for zi in z.iter_mut() {
            *zi = rng.sample(StandardNormal);
        }
        for (i, o) in out.iter_mut().enumerate().take(d) {
            let row = &self.chol[i * d..i * d + i + 1];
            *o = self.mean[i] + row.iter().zip(z.iter()).map(|(a, b)| a * b).sum::<f64>();
        }
    }
}

#[derive(Debug, Clone)]
enum Body {
    Mixture {
        components: Vec<Component>,
        /// Cumulative global weights, for component selection.
        cumulative: Vec<f64>,
        /// Per class: cumulative within-class weights and component indices.
        classes: Vec<(Vec<f64>, Vec<usize>)>,
        prior: Vec<f64>,
    },
    Uniform {
        lo: Vec<f64>,
        hi: Vec<f64>,
        density: f64,
    },
}

/// A validated distribution with exact density and seeded sampler.
#[derive(Debug, Clone)]
pub struct Distribution {
    spec: DistributionSpec,
    dim: usize,
    body: Body,
}

fn check_simplex(weights: &[f64], what: &str) -> Result<()> {
    if weights.is_empty() {
        return Err(Error::InvalidDistribution(format!("{what} is empty")));
    }
    if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
        return Err(Error::InvalidDistribution(format!(
            "{what} has a negative or non-finite entry"
        )));
    }
    let total: f64 = weights.iter().sum();
    if (total - 1.0).abs() > WEIGHT_TOL {
        return Err(Error::InvalidDistribution(format!(
            "{what} sums to {total}, expected 1"
        )));
    }
    Ok(())
}

fn cumulative(weights: impl Iterator<Item = f64>) -> Vec<f64> {
    let mut acc = 0.0;
    weights
        .map(|w| {
            acc += w;
            acc
        })
        .collect()
}

fn pick(cum: &[f64], u: f64) -> usize {
    let total = *cum.last().expect("non-empty weights");
    let target = u * total;
    cum.partition_point(|&c| c <= target).min(cum.len() - 1)
}

impl Distribution {
    pub fn new(spec: DistributionSpec) -> Result<Self> {
        let mut components = Vec::new();
        let mut prior = vec![1.0];
        match &spec {
            DistributionSpec::Gaussian(g) => components.push(Component::new(g, 1.0, 0)?),
            DistributionSpec::GaussianMixture(m) => {
                push_mixture(&mut components, m, 1.0, 0)?;
            }
            DistributionSpec::Ring { k, radius, sigma } => {
                if *k == 0 || !(*radius > 0.0) || !(*sigma > 0.0) {
                    return Err(Error::InvalidDistribution(
                        "ring needs k >= 1, radius > 0 and sigma > 0".into(),
                    ));
                }
                for j in 0..*k {
                    let angle = 2.0 * std::f64::consts::PI * j as f64 / *k as f64;
                    let g = GaussianParams::isotropic(
                        vec![radius * angle.cos(), radius * angle.sin()],
                        sigma * sigma,
                    );
                    components.push(Component::new(&g, 1.0 / *k as f64, 0)?);
                }
            }
            DistributionSpec::UniformBox { lo, hi } => {
                if lo.is_empty() || lo.len() != hi.len() {
                    return Err(Error::InvalidDistribution(
                        "uniform box bounds must be non-empty and of equal length".into(),
                    ));
                }
                if lo
                    .iter()
                    .zip(hi)
                    .any(|(a, b)| !(a < b) || !a.is_finite() || !b.is_finite())
                {
                    return Err(Error::InvalidDistribution(
                        "uniform box needs lo < hi on every axis".into(),
                    ));
                }
                let volume: f64 = lo.iter().zip(hi).map(|(a, b)| b - a).product();
                let dim = lo.len();
                return Ok(Self {
                    body: Body::Uniform {
                        lo: lo.clone(),
                        hi: hi.clone(),
                        density: 1.0 / volume,
                    },
                    spec,
                    dim,
                });
            }
            DistributionSpec::LabeledMixture { classes, prior: p } => {
                check_simplex(p, "class prior")?;
                if classes.len() != p.len() {
                    return Err(Error::InvalidDistribution(format!(
                        "{} classes but prior has {} entries",
                        classes.len(),
                        p.len()
                    )));
                }
                for (label, m) in classes.iter().enumerate() {
                    push_mixture(&mut components, m, p[label], label)?;
                }
                prior = p.clone();
            }
        }
        let dim = components[0].mean.len();
        if dim == 0 || components.iter().any(|c| c.mean.len() != dim) {
            return Err(Error::InvalidDistribution(
                "components must share a positive dimension".into(),
            ));
        }
        let cum = cumulative(components.iter().map(|c| c.weight));
        let classes = (0..prior.len())
            .map(|label| {
                let idx: Vec<usize> = components
                    .iter()
                    .enumerate()
                    .filter(|(_, c)| c.label == label)
                    .map(|(i, _)| i)
                    .collect();
                (cumulative(idx.iter().map(|&i| components[i].weight)), idx)
            })
            .collect();
        Ok(Self {
            spec,
            dim,
            body: Body::Mixture {
                components,
                cumulative: cum,
                classes,
                prior,
            },
        })
    }

    pub fn spec(&self) -> &DistributionSpec {
        &self.spec
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of labels; 1 for unlabeled distributions.
    pub fn num_classes(&self) -> usize {
        match &self.body {
            Body::Mixture { prior, .. } => prior.len(),
            Body::Uniform { .. } => 1,
        }
    }

    /// Exact density at `x`.
    pub fn density(&self, x: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), self.dim);
        match &self.body {
            Body::Mixture { components, .. } => components
                .iter()
                .map(|c| c.weight * c.log_density(x).exp())
                .sum(),
            Body::Uniform { lo, hi, density } => {
                let inside = x
                    .iter()
                    .zip(lo.iter().zip(hi))
                    .all(|(v, (a, b))| *a <= *v && *v <= *b);
                if inside {
                    *density
                } else {
                    0.0
                }
            }
        }
    }

    /// `n` i.i.d. rows drawn from the distribution under `seed`.
    pub fn sample(&self, n: usize, seed: u64) -> Array2<f64> {
        let mut rng = rng::stream(seed, rng::streams::SAMPLE);
        self.sample_with(&mut rng, n)
    }

    /// `n` rows drawn from a caller-owned stream.
    ///
    /// Consumes exactly the same draws as [`Distribution::sample_labeled`].
    pub fn sample_with(&self, rng: &mut Rng, n: usize) -> Array2<f64> {
        self.sample_labeled(rng, n).0
    }

    /// Rows with the label of the component that produced each one.
    pub fn sample_labeled(&self, rng: &mut Rng, n: usize) -> (Array2<f64>, Vec<usize>) {
        let mut out = Array2::zeros((n, self.dim));
        let mut labels = vec![0; n];
        match &self.body {
            Body::Mixture {
                components,
                cumulative,
                ..
            } => {
                for (mut row, label) in out.rows_mut().into_iter().zip(labels.iter_mut()) {
                    let u: f64 = rng.random();
                    let c = &components[pick(cumulative, u)];
                    c.draw(rng, row.as_slice_mut().expect("standard layout"));
                    *label = c.label;
                }
            }
            Body::Uniform { lo, hi, .. } => {
                for mut row in out.rows_mut() {
                    for (v, (a, b)) in row.iter_mut().zip(lo.iter().zip(hi)) {
                        let u: f64 = rng.random();
                        *v = a + (b - a) * u;
                    }
                }
            }
        }
        (out, labels)
    }

    /// Rows drawn from one class of a labeled mixture.
    pub fn sample_class(&self, rng: &mut Rng, class: usize, n: usize) -> Result<Array2<f64>> {
        let Body::Mixture {
            components,
            classes,
            ..
        } = &self.body
        else {
            return Err(Error::InvalidDistribution(
                "uniform box has no classes".into(),
            ));
        };
        let (cum, idx) = classes
            .get(class)
            .ok_or_else(|| Error::InvalidDistribution(format!("class {class} out of range")))?;
        let mut out = Array2::zeros((n, self.dim));
        for mut row in out.rows_mut() {
            let u: f64 = rng.random();
            let c = &components[idx[pick(cum, u)]];
            c.draw(rng, row.as_slice_mut().expect("standard layout"));
        }
        Ok(out)
    }

    /// Component means (mode centres); the box centre for a uniform.
    pub fn component_means(&self) -> Vec<Vec<f64>> {
        match &self.body {
            Body::Mixture { components, .. } => components.iter().map(|c| c.mean.clone()).collect(),
            Body::Uniform { lo, hi, .. } => {
                vec![lo.iter().zip(hi).map(|(a, b)| 0.5 * (a + b)).collect()]
            }
        }
    }

    pub fn mean(&self) -> Vec<f64> {
        match &self.body {
            Body::Mixture { components, .. } => {
                let mut m = vec![0.0; self.dim];
                for c in components {
                    for (mi, ci) in m.iter_mut().zip(&c.mean) {
                        *mi += c.weight * ci;
                    }
                }
                m
            }
            Body::Uniform { lo, hi, .. } => lo.iter().zip(hi).map(|(a, b)| 0.5 * (a + b)).collect(),
        }
    }

    /// Analytic covariance, row-major `d x d`.
    pub fn covariance(&self) -> Vec<f64> {
        let d = self.dim;
        let mut cov = vec![0.0; d * d];
        match &self.body {
            Body::Mixture { components, .. } => {
                let mu = self.mean();
                for c in components {
                    // L L^T + (m - mu)(m - mu)^T
                    for i in 0..d {
                        for j in 0..d {
                            let llt: f64 = (0..=i.min(j))
                                .map(|k| c.chol[i * d + k] * c.chol[j * d + k])
                                .sum();
                            cov[i * d + j] +=
                                c.weight * (llt + (c.mean[i] - mu[i]) * (c.mean[j] - mu[j]));
                        }
                    }
                }
            }
            Body::Uniform { lo, hi, .. } => {
                for i in 0..d {
                    cov[i * d + i] = (hi[i] - lo[i]).powi(2) / 12.0;
                }
            }
        }
        cov
    }

    /// Per-axis integration bounds: the union over components of
    /// `mean ± 8 sd`, or the box itself for a uniform.
    pub fn truncation_box(&self) -> Vec<(f64, f64)> {
        match &self.body {
            Body::Mixture { components, .. } => (0..self.dim)
                .map(|i| {
                    components
                        .iter()
                        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), c| {
                            let w = TRUNCATION_SDS * c.sd[i];
                            (a.min(c.mean[i] - w), b.max(c.mean[i] + w))
                        })
                })
                .collect(),
            Body::Uniform { lo, hi, .. } => lo.iter().copied().zip(hi.iter().copied()).collect(),
        }
    }

    /// Per-axis points where the density is discontinuous.
    pub fn breakpoints(&self) -> Vec<Vec<f64>> {
        match &self.body {
            Body::Mixture { .. } => vec![Vec::new(); self.dim],
            Body::Uniform { lo, hi, .. } => lo.iter().zip(hi).map(|(a, b)| vec![*a, *b]).collect(),
        }
    }
}

fn push_mixture(
    out: &mut Vec<Component>,
    m: &MixtureParams,
    scale: f64,
    label: usize,
) -> Result<()> {
    check_simplex(&m.weights, "mixture weights")?;
    if m.weights.len() != m.components.len() {
        return Err(Error::InvalidDistribution(format!(
            "{} weights for {} components",
            m.weights.len(),
            m.components.len()
        )));
    }
    for (w, g) in m.weights.iter().zip(&m.components) {
        out.push(Component::new(g, scale * w, label)?);
    }
    Ok(())
}

impl TryFrom<DistributionSpec> for Distribution {
    type Error = Error;

    fn try_from(spec: DistributionSpec) -> Result<Self> {
        Self::new(spec)
    }
}
