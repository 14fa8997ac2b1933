//! Tensor-product quadrature over axis-aligned boxes.
//!
//! Each axis is cut at the supplied breakpoints (density discontinuities) and
//! the pieces are covered by composite rules, so piecewise-smooth integrands
//! never see a jump inside a panel. Point values are reduced in fixed-size
//! blocks followed by a pairwise tree, which keeps the result independent of
//! how many threads evaluate the blocks.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Gauss-Legendre nodes per composite panel.
pub const PANEL_ORDER: usize = 8;

const BLOCK: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    Trapezoid,
    #[default]
    GaussLegendre,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QuadratureConfig {
    /// Per-axis `[lo, hi]`; derived from the distributions when absent.
    pub bounds: Option<Vec<(f64, f64)>>,
    /// Points per axis on the coarse grid; dimension-dependent default when absent.
    pub points_per_axis: Option<usize>,
    pub scheme: Scheme,
    pub refinement_factor: usize,
    /// Largest accepted difference between the coarse and refined results.
    pub tolerance: f64,
}

impl Default for QuadratureConfig {
    fn default() -> Self {
        Self {
            bounds: None,
            points_per_axis: None,
            scheme: Scheme::GaussLegendre,
            refinement_factor: 2,
            tolerance: 1e-3,
        }
    }
}

impl QuadratureConfig {
    pub fn default_points(dim: usize) -> usize {
        match dim {
            1 => 2048,
            2 => 512,
            3 => 64,
            _ => 24,
        }
    }

    pub fn points_for(&self, dim: usize) -> usize {
        self.points_per_axis
            .unwrap_or_else(|| Self::default_points(dim))
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        if dim == 0 || dim > 4 {
            return Err(Error::InvalidConfig(format!(
                "quadrature supports 1 <= d <= 4, got {dim}"
            )));
        }
        if self.points_for(dim) < 16 {
            return Err(Error::InvalidConfig("points_per_axis must be >= 16".into()));
        }
        if self.refinement_factor < 2 {
            return Err(Error::InvalidConfig(
                "refinement_factor must be >= 2".into(),
            ));
        }
        if !(self.tolerance > 0.0) {
            return Err(Error::InvalidConfig("tolerance must be positive".into()));
        }
        if let Some(b) = &self.bounds {
            if b.len() != dim {
                return Err(Error::InvalidConfig(format!(
                    "{} bounds for dimension {dim}",
                    b.len()
                )));
            }
            if b.iter().any(|(lo, hi)| !(lo < hi)) {
                return Err(Error::InvalidConfig("bounds need lo < hi".into()));
            }
        }
        Ok(())
    }
}

/// Nodes and weights of the `n`-point Gauss-Legendre rule on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        // Chebyshev-like initial guess, then Newton on P_n.
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 1.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

/// One-dimensional composite rule.
#[derive(Debug, Clone)]
pub struct AxisRule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl AxisRule {
    pub fn new(lo: f64, hi: f64, breakpoints: &[f64], points: usize, scheme: Scheme) -> Self {
        let mut cuts: Vec<f64> = std::iter::once(lo)
            .chain(breakpoints.iter().copied().filter(|b| *b > lo && *b < hi))
            .chain(std::iter::once(hi))
            .collect();
        cuts.sort_by(f64::total_cmp);
        cuts.dedup();
        let total = hi - lo;
        let mut nodes = Vec::with_capacity(points + cuts.len() * PANEL_ORDER);
        let mut weights = Vec::with_capacity(nodes.capacity());
        match scheme {
            Scheme::GaussLegendre => {
                let (gx, gw) = gauss_legendre(PANEL_ORDER);
                let panels = (points / PANEL_ORDER).max(cuts.len() - 1);
                for seg in cuts.windows(2) {
                    let len = seg[1] - seg[0];
                    let k = ((len / total * panels as f64).round() as usize).max(1);
                    let h = len / k as f64;
                    for p in 0..k {
                        let a = seg[0] + p as f64 * h;
                        for (x, w) in gx.iter().zip(&gw) {
                            nodes.push(a + 0.5 * h * (x + 1.0));
                            weights.push(0.5 * h * w);
                        }
                    }
                }
            }
            Scheme::Trapezoid => {
                for seg in cuts.windows(2) {
                    let len = seg[1] - seg[0];
                    let k = ((len / total * (points - 1) as f64).round() as usize).max(1);
                    let h = len / k as f64;
                    for p in 0..=k {
                        let x = seg[0] + p as f64 * h;
                        let w = if p == 0 || p == k { 0.5 * h } else { h };
                        if p == 0 && !nodes.is_empty() {
                            // shared endpoint with the previous segment
                            *weights.last_mut().unwrap() += w;
                        } else {
                            nodes.push(x);
                            weights.push(w);
                        }
                    }
                }
            }
        }
        Self { nodes, weights }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
}

/// Tensor product of per-axis rules.
#[derive(Debug, Clone)]
pub struct Grid {
    axes: Vec<AxisRule>,
}

impl Grid {
    pub fn new(
        bounds: &[(f64, f64)],
        breakpoints: &[Vec<f64>],
        points: usize,
        scheme: Scheme,
    ) -> Self {
        let axes = bounds
            .iter()
            .enumerate()
            .map(|(i, &(lo, hi))| {
                let b = breakpoints.get(i).map(Vec::as_slice).unwrap_or(&[]);
                AxisRule::new(lo, hi, b, points, scheme)
            })
            .collect();
        Self { axes }
    }

    pub fn dim(&self) -> usize {
        self.axes.len()
    }

    pub fn len(&self) -> usize {
        self.axes.iter().map(AxisRule::len).product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn point(&self, mut flat: usize, x: &mut [f64]) -> f64 {
        let mut w = 1.0;
        for (axis, xi) in self.axes.iter().zip(x.iter_mut()).rev() {
            let i = flat % axis.len();
            flat /= axis.len();
            *xi = axis.nodes[i];
            w *= axis.weights[i];
        }
        w
    }

    /// Weighted sum of `f` over the grid.
    pub fn integrate<F>(&self, f: F) -> f64
    where
        F: Fn(&[f64]) -> f64 + Sync,
    {
        let n = self.len();
        let d = self.dim();
        let blocks: Vec<f64> = (0..n.div_ceil(BLOCK))
            .into_par_iter()
            .map(|b| {
                let mut x = vec![0.0; d];
                let mut acc = 0.0;
                for flat in b * BLOCK..((b + 1) * BLOCK).min(n) {
                    let w = self.point(flat, &mut x);
                    acc += w * f(&x);
                }
                acc
            })
            .collect();
        pairwise_sum(&blocks)
    }

    /// First grid point where `f` is not finite.
    pub fn find_non_finite<F>(&self, f: F) -> Option<Vec<f64>>
    where
        F: Fn(&[f64]) -> f64,
    {
        let mut x = vec![0.0; self.dim()];
        (0..self.len()).find_map(|flat| {
            self.point(flat, &mut x);
            (!f(&x).is_finite()).then(|| x.clone())
        })
    }
}

/// Fixed-shape pairwise reduction.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    match values.len() {
        0 => 0.0,
        1 => values[0],
        n => {
            let (a, b) = values.split_at(n / 2);
            pairwise_sum(a) + pairwise_sum(b)
        }
    }
}
