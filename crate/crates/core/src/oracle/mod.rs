//! Exact reference quantities computed from analytic densities.
//!
//! Everything here is deterministic 64-bit arithmetic: quadrature for the
//! chi-squared distance and the Pearson/Neyman divergences, the closed-form
//! optimal critic, the whitened-mean closed form for critics that are linear
//! in a fixed feature map, and the effective dimension of a regularised
//! linear critic.

pub mod quadrature;

use nalgebra::{DMatrix, DVector};
use ndarray::{ArrayView2, Axis};
use serde::Serialize;

use crate::distzoo::Distribution;
use crate::error::{Error, Result};
pub use quadrature::{Grid, QuadratureConfig, Scheme};

/// Densities below this contribute nothing to the integrands.
pub const DENSITY_FLOOR: f64 = 1e-300;

/// Integrand magnitude treated as overflow.
pub const OVERFLOW_THRESHOLD: f64 = 1e300;

/// Anything with a pointwise density and an integration box.
pub trait Density: Sync {
    fn dim(&self) -> usize;
    fn density(&self, x: &[f64]) -> f64;
    fn truncation_box(&self) -> Vec<(f64, f64)>;
    fn breakpoints(&self) -> Vec<Vec<f64>>;
}

impl Density for Distribution {
    fn dim(&self) -> usize {
        Distribution::dim(self)
    }
    fn density(&self, x: &[f64]) -> f64 {
        Distribution::density(self, x)
    }
    fn truncation_box(&self) -> Vec<(f64, f64)> {
        Distribution::truncation_box(self)
    }
    fn breakpoints(&self) -> Vec<Vec<f64>> {
        Distribution::breakpoints(self)
    }
}

/// The equal-weight mixture `(P + Q) / 2`.
pub struct Midpoint<'a, A: ?Sized, B: ?Sized>(pub &'a A, pub &'a B);

impl<A: Density + ?Sized, B: Density + ?Sized> Density for Midpoint<'_, A, B> {
    fn dim(&self) -> usize {
        self.0.dim()
    }
    fn density(&self, x: &[f64]) -> f64 {
        0.5 * (self.0.density(x) + self.1.density(x))
    }
    fn truncation_box(&self) -> Vec<(f64, f64)> {
        union_box(self.0, self.1)
    }
    fn breakpoints(&self) -> Vec<Vec<f64>> {
        union_breaks(self.0, self.1)
    }
}

fn union_box<A: Density + ?Sized, B: Density + ?Sized>(p: &A, q: &B) -> Vec<(f64, f64)> {
    p.truncation_box()
        .into_iter()
        .zip(q.truncation_box())
        .map(|((a, b), (c, d))| (a.min(c), b.max(d)))
        .collect()
}

fn union_breaks<A: Density + ?Sized, B: Density + ?Sized>(p: &A, q: &B) -> Vec<Vec<f64>> {
    p.breakpoints()
        .into_iter()
        .zip(q.breakpoints())
        .map(|(mut a, b)| {
            a.extend(b);
            a.sort_by(f64::total_cmp);
            a.dedup();
            a
        })
        .collect()
}

/// Quadrature result with its refinement-based error estimate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct QuadEstimate {
    pub value: f64,
    /// `|fine - coarse|` between the base grid and the refined grid.
    pub error_estimate: f64,
}

/// Chi-squared distance; `squared` is the raw integral.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Chi2Estimate {
    pub value: f64,
    pub squared: f64,
    pub error_estimate: f64,
}

/// Grid description echoed into reports.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridSummary {
    pub bounds: Vec<(f64, f64)>,
    pub breakpoints: Vec<Vec<f64>>,
    pub points_per_axis: usize,
    pub refined_points_per_axis: usize,
    pub scheme: Scheme,
}

/// Domain and rule for a pair of densities under `quad`.
pub fn grid_summary<A, B>(p: &A, q: &B, quad: &QuadratureConfig) -> Result<GridSummary>
where
    A: Density + ?Sized,
    B: Density + ?Sized,
{
    let dim = p.dim();
    if q.dim() != dim {
        return Err(Error::ShapeMismatch(format!(
            "distributions have dimensions {dim} and {}",
            q.dim()
        )));
    }
    quad.validate(dim)?;
    let points = quad.points_for(dim);
    Ok(GridSummary {
        bounds: quad.bounds.clone().unwrap_or_else(|| union_box(p, q)),
        breakpoints: union_breaks(p, q),
        points_per_axis: points,
        refined_points_per_axis: points * quad.refinement_factor,
        scheme: quad.scheme,
    })
}

/// Integrates `f` on the coarse and refined grids; returns `(coarse, fine)`.
pub fn integrate_pair<F>(summary: &GridSummary, f: F) -> (f64, f64)
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    let coarse = Grid::new(
        &summary.bounds,
        &summary.breakpoints,
        summary.points_per_axis,
        summary.scheme,
    );
    let fine = Grid::new(
        &summary.bounds,
        &summary.breakpoints,
        summary.refined_points_per_axis,
        summary.scheme,
    );
    (coarse.integrate(&f), fine.integrate(&f))
}

/// `∫ f` on the refined grid for the pair's domain, with error estimate.
pub fn integrate<A, B, F>(p: &A, q: &B, quad: &QuadratureConfig, f: F) -> Result<QuadEstimate>
where
    A: Density + ?Sized,
    B: Density + ?Sized,
    F: Fn(&[f64]) -> f64 + Sync,
{
    let summary = grid_summary(p, q, quad)?;
    let (coarse, fine) = integrate_pair(&summary, f);
    Ok(QuadEstimate {
        value: fine,
        error_estimate: (fine - coarse).abs(),
    })
}

fn chi2_integrand<A: Density + ?Sized, B: Density + ?Sized>(p: &A, q: &B, x: &[f64]) -> f64 {
    let (a, b) = (p.density(x), q.density(x));
    let s = a + b;
    if s < DENSITY_FLOOR {
        0.0
    } else {
        let diff = a - b;
        diff * diff / (0.5 * s)
    }
}

/// `sqrt( ∫ (P - Q)^2 / ((P + Q) / 2) dx )` over the truncated domain.
///
/// Fails with [`Error::NonConverged`] when the distance moves by more than
/// `quad.tolerance` between the base and refined grids.
pub fn chi2_distance<A, B>(p: &A, q: &B, quad: &QuadratureConfig) -> Result<Chi2Estimate>
where
    A: Density + ?Sized,
    B: Density + ?Sized,
{
    let summary = grid_summary(p, q, quad)?;
    let (coarse, fine) = integrate_pair(&summary, |x| chi2_integrand(p, q, x));
    let value = fine.max(0.0).sqrt();
    let error = (value - coarse.max(0.0).sqrt()).abs();
    if error > quad.tolerance {
        return Err(Error::NonConverged {
            value,
            error,
            tolerance: quad.tolerance,
        });
    }
    Ok(Chi2Estimate {
        value,
        squared: fine,
        error_estimate: error,
    })
}

/// Optimal critic value at a point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CriticValue {
    pub value: f64,
    /// `P(x) + Q(x)` fell below [`DENSITY_FLOOR`]; the value is reported as 0.
    pub underflow: bool,
}

/// Distances at or below this cannot normalise the optimal critic.
pub const DEGENERATE_DISTANCE: f64 = 1e-12;

/// `(1/χ2) (P(x) - Q(x)) / ((P(x) + Q(x)) / 2)`.
pub fn optimal_critic<A, B>(p: &A, q: &B, chi2: f64, x: &[f64]) -> Result<CriticValue>
where
    A: Density + ?Sized,
    B: Density + ?Sized,
{
    if !(chi2 > DEGENERATE_DISTANCE) {
        return Err(Error::DegenerateDistance(chi2));
    }
    let (a, b) = (p.density(x), q.density(x));
    let s = a + b;
    if s < DENSITY_FLOOR {
        return Ok(CriticValue {
            value: 0.0,
            underflow: true,
        });
    }
    Ok(CriticValue {
        value: (a - b) / (0.5 * s) / chi2,
        underflow: false,
    })
}

/// Mean difference and pooled second moment of a critic under `P` and `Q`:
/// `(E_P f - E_Q f, ½ E_P f² + ½ E_Q f²)`.
pub fn critic_moments<A, B, F>(
    p: &A,
    q: &B,
    quad: &QuadratureConfig,
    critic: F,
) -> Result<(QuadEstimate, QuadEstimate)>
where
    A: Density + ?Sized,
    B: Density + ?Sized,
    F: Fn(&[f64]) -> f64 + Sync,
{
    let mean_diff = integrate(p, q, quad, |x| critic(x) * (p.density(x) - q.density(x)))?;
    let second = integrate(p, q, quad, |x| {
        let f = critic(x);
        f * f * 0.5 * (p.density(x) + q.density(x))
    })?;
    Ok((mean_diff, second))
}

/// Pearson divergence `∫ (P - Q)^2 / Q dx`.
///
/// Requires `Q > 0` wherever `P` has mass on the grid.
pub fn pearson_divergence<A, B>(p: &A, q: &B, quad: &QuadratureConfig) -> Result<QuadEstimate>
where
    A: Density + ?Sized,
    B: Density + ?Sized,
{
    let summary = grid_summary(p, q, quad)?;
    let integrand = |x: &[f64]| {
        let (a, b) = (p.density(x), q.density(x));
        if b < DENSITY_FLOOR {
            return if a < DENSITY_FLOOR {
                0.0
            } else {
                f64::INFINITY
            };
        }
        let v = (a - b) * (a - b) / b;
        if v > OVERFLOW_THRESHOLD {
            f64::INFINITY
        } else {
            v
        }
    };
    let (coarse, fine) = integrate_pair(&summary, integrand);
    if !coarse.is_finite() || !fine.is_finite() {
        let grid = Grid::new(
            &summary.bounds,
            &summary.breakpoints,
            summary.refined_points_per_axis,
            summary.scheme,
        );
        let at = grid.find_non_finite(integrand).unwrap_or_default();
        return Err(Error::UnboundedIntegrand { at });
    }
    let error = (fine - coarse).abs();
    let tolerance = quad.tolerance * fine.abs().max(1.0);
    if error > tolerance {
        return Err(Error::NonConverged {
            value: fine,
            error,
            tolerance,
        });
    }
    Ok(QuadEstimate {
        value: fine,
        error_estimate: error,
    })
}

/// Neyman divergence `∫ (P - Q)^2 / P dx`, i.e. Pearson with the roles swapped.
pub fn neyman_divergence<A, B>(p: &A, q: &B, quad: &QuadratureConfig) -> Result<QuadEstimate>
where
    A: Density + ?Sized,
    B: Density + ?Sized,
{
    pearson_divergence(q, p, quad)
}

/// Closed-form Fisher IPM over critics `f(x) = <v, φ(x)>` for fixed features.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearFisher {
    /// `|| Σ^{-1/2} (μ_P - μ_Q) ||`.
    pub value: f64,
    /// Maximiser, normalised so that `v^T Σ v = 1`.
    pub v_star: Vec<f64>,
    pub mean_diff: Vec<f64>,
    /// Pooled `½ Σ_P + ½ Σ_Q + γ I`, row-major.
    pub pooled: Vec<f64>,
}

impl LinearFisher {
    /// Empirical Rayleigh quotient `<v, Δμ> / sqrt(v^T Σ v)` for any direction.
    pub fn rayleigh_quotient(&self, v: &[f64]) -> f64 {
        let m = self.mean_diff.len();
        let num: f64 = v.iter().zip(&self.mean_diff).map(|(a, b)| a * b).sum();
        let mut den = 0.0;
        for i in 0..m {
            for j in 0..m {
                den += v[i] * self.pooled[i * m + j] * v[j];
            }
        }
        if den > 0.0 {
            num / den.sqrt()
        } else {
            0.0
        }
    }
}

/// Whitened mean distance between two feature matrices (rows are samples).
///
/// The second-moment matrices are uncentred Gramians `E[φ φ^T]`.
pub fn linear_fisher_ipm(
    feat_p: ArrayView2<'_, f64>,
    feat_q: ArrayView2<'_, f64>,
    gamma: f64,
) -> Result<LinearFisher> {
    let m = feat_p.ncols();
    if feat_q.ncols() != m {
        return Err(Error::ShapeMismatch(format!(
            "feature widths {m} and {}",
            feat_q.ncols()
        )));
    }
    if feat_p.nrows() == 0 || feat_q.nrows() == 0 || m == 0 {
        return Err(Error::ShapeMismatch("empty feature matrix".into()));
    }
    if !(gamma > 0.0) {
        return Err(Error::InvalidConfig("gamma must be positive".into()));
    }
    let mu_p = feat_p.mean_axis(Axis(0)).expect("non-empty");
    let mu_q = feat_q.mean_axis(Axis(0)).expect("non-empty");
    let gram_p = feat_p.t().dot(&feat_p) / feat_p.nrows() as f64;
    let gram_q = feat_q.t().dot(&feat_q) / feat_q.nrows() as f64;
    let pooled = DMatrix::from_fn(m, m, |i, j| {
        0.5 * gram_p[[i, j]] + 0.5 * gram_q[[i, j]] + if i == j { gamma } else { 0.0 }
    });
    let diff = DVector::from_iterator(m, mu_p.iter().zip(mu_q.iter()).map(|(a, b)| a - b));
    let chol = pooled.clone().cholesky().ok_or(Error::SingularCovariance)?;
    let w = chol.solve(&diff);
    let value = diff.dot(&w).max(0.0).sqrt();
    let v_star = if value > 0.0 {
        (w / value).iter().copied().collect()
    } else {
        // any feasible direction attains 0
        let mut e = vec![0.0; m];
        e[0] = 1.0 / pooled[(0, 0)].sqrt();
        e
    };
    Ok(LinearFisher {
        value,
        v_star,
        mean_diff: diff.iter().copied().collect(),
        pooled: pooled.transpose().iter().copied().collect(),
    })
}

/// `Σ_j σ_j² / (σ_j² + γ)`; terms with `σ_j = γ = 0` count as 0.
pub fn effective_dimension(singular_values: &[f64], gamma: f64) -> f64 {
    singular_values
        .iter()
        .map(|s| {
            let s2 = s * s;
            if s2 + gamma > 0.0 {
                s2 / (s2 + gamma)
            } else {
                0.0
            }
        })
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distzoo::DistributionSpec;
    use ndarray::array;

    fn normal(mean: f64) -> Distribution {
        Distribution::new(DistributionSpec::gaussian(vec![mean], 1.0)).unwrap()
    }

    fn uniform(lo: f64, hi: f64) -> Distribution {
        Distribution::new(DistributionSpec::uniform(vec![lo], vec![hi])).unwrap()
    }

    #[test]
    fn identical_distributions_have_zero_distance() {
        let q = QuadratureConfig::default();
        let p = normal(0.3);
        assert!(chi2_distance(&p, &p, &q).unwrap().value < 1e-9);
        let u = uniform(0.0, 1.0);
        assert!(chi2_distance(&u, &u, &q).unwrap().value < 1e-9);
    }

    #[test]
    fn disjoint_uniforms_have_distance_two() {
        let c = chi2_distance(
            &uniform(0.0, 1.0),
            &uniform(2.0, 3.0),
            &QuadratureConfig::default(),
        )
        .unwrap();
        assert!((c.value - 2.0).abs() < 1e-9, "{c:?}");
    }

    #[test]
    fn shifted_gaussian_distance_increases_with_shift() {
        let q = QuadratureConfig::default();
        let p = normal(0.0);
        let values: Vec<f64> = [0.5, 1.0, 2.0, 4.0]
            .iter()
            .map(|&d| chi2_distance(&p, &normal(d), &q).unwrap().value)
            .collect();
        assert!(values.windows(2).all(|w| w[0] < w[1]), "{values:?}");
        // reference values from adaptive scipy quadrature
        let reference = [
            0.485575845942078,
            0.9034473213940042,
            1.4837796208242346,
            1.9301840235679717,
        ];
        for (v, r) in values.iter().zip(reference) {
            assert!((v - r).abs() < 1e-9, "{v} vs {r}");
        }
    }

    #[test]
    fn distance_is_symmetric_bit_for_bit() {
        let q = QuadratureConfig::default();
        let (a, b) = (normal(0.0), uniform(-0.5, 2.0));
        assert_eq!(
            chi2_distance(&a, &b, &q).unwrap().value,
            chi2_distance(&b, &a, &q).unwrap().value
        );
    }

    #[test]
    fn coarse_grid_reports_non_convergence() {
        let q = QuadratureConfig {
            points_per_axis: Some(16),
            scheme: Scheme::Trapezoid,
            tolerance: 1e-6,
            ..Default::default()
        };
        let narrow = Distribution::new(DistributionSpec::gaussian(vec![0.0], 1e-4)).unwrap();
        let err = chi2_distance(&narrow, &normal(0.5), &q).unwrap_err();
        assert!(matches!(err, Error::NonConverged { .. }), "{err}");
    }

    #[test]
    fn optimal_critic_on_disjoint_uniforms() {
        let (p, q) = (uniform(0.0, 1.0), uniform(2.0, 3.0));
        assert_eq!(optimal_critic(&p, &q, 2.0, &[0.5]).unwrap().value, 1.0);
        assert_eq!(optimal_critic(&p, &q, 2.0, &[2.5]).unwrap().value, -1.0);
        let gap = optimal_critic(&p, &q, 2.0, &[1.5]).unwrap();
        assert!(gap.underflow && gap.value == 0.0);
    }

    #[test]
    fn optimal_critic_is_antisymmetric_about_midpoint() {
        let delta = 1.7;
        let (p, q) = (normal(0.0), normal(delta));
        let chi = chi2_distance(&p, &q, &QuadratureConfig::default())
            .unwrap()
            .value;
        assert!(
            optimal_critic(&p, &q, chi, &[delta / 2.0])
                .unwrap()
                .value
                .abs()
                < 1e-15
        );
        for t in [0.1, 0.7, 2.3, 5.0] {
            let a = optimal_critic(&p, &q, chi, &[delta / 2.0 + t])
                .unwrap()
                .value;
            let b = optimal_critic(&p, &q, chi, &[delta / 2.0 - t])
                .unwrap()
                .value;
            assert!((a + b).abs() < 1e-12, "t={t}: {a} {b}");
        }
    }

    #[test]
    fn optimal_critic_rejects_zero_distance() {
        let p = normal(0.0);
        assert!(matches!(
            optimal_critic(&p, &p, 0.0, &[0.0]),
            Err(Error::DegenerateDistance(_))
        ));
    }

    #[test]
    fn pearson_and_neyman_basics() {
        let q = QuadratureConfig::default();
        let (a, b) = (normal(0.0), normal(1.0));
        assert!(pearson_divergence(&a, &a, &q).unwrap().value.abs() < 1e-12);
        let pearson = pearson_divergence(&a, &b, &q).unwrap().value;
        assert!((pearson - (1f64.exp() - 1.0)).abs() < 1e-8, "{pearson}");
        assert_eq!(
            neyman_divergence(&a, &b, &q).unwrap().value,
            pearson_divergence(&b, &a, &q).unwrap().value
        );
        let err = neyman_divergence(&uniform(0.0, 1.0), &uniform(2.0, 3.0), &q).unwrap_err();
        assert!(matches!(err, Error::UnboundedIntegrand { .. }), "{err}");
    }

    #[test]
    fn linear_fisher_hand_example() {
        let fp = array![[1.0], [3.0]];
        let fq = array![[-1.0], [-3.0]];
        let r = linear_fisher_ipm(fp.view(), fq.view(), 1e-12).unwrap();
        assert!((r.value - 4.0 / 5f64.sqrt()).abs() < 1e-9);
        assert!((r.value - 1.78885).abs() < 1e-5);
        // v* is feasible and attains the value
        assert!((r.rayleigh_quotient(&r.v_star) - r.value).abs() < 1e-12);
        let quad: f64 = r.v_star[0] * r.pooled[0] * r.v_star[0];
        assert!((quad - 1.0).abs() < 1e-12);
    }

    #[test]
    fn linear_fisher_equal_means_is_zero() {
        let fp = array![[1.0, 2.0], [-1.0, -2.0]];
        let fq = array![[0.5, 0.0], [-0.5, 0.0]];
        let r = linear_fisher_ipm(fp.view(), fq.view(), 1e-3).unwrap();
        assert_eq!(r.value, 0.0);
        assert!(r.rayleigh_quotient(&r.v_star).abs() < 1e-15);
    }

    #[test]
    fn linear_fisher_is_scale_invariant_without_regularisation() {
        let fp = array![[1.0, 0.2], [2.0, -0.3], [0.5, 0.9]];
        let fq = array![[-1.0, 0.1], [0.3, 0.4], [-0.2, -0.8]];
        let a = linear_fisher_ipm(fp.view(), fq.view(), 1e-14)
            .unwrap()
            .value;
        let b = linear_fisher_ipm((&fp * 7.5).view(), (&fq * 7.5).view(), 1e-14 * 56.25)
            .unwrap()
            .value;
        assert!((a - b).abs() < 1e-10, "{a} {b}");
    }

    #[test]
    fn linear_fisher_rejects_bad_input() {
        let fp = array![[1.0, 0.0]];
        let fq = array![[1.0]];
        assert!(matches!(
            linear_fisher_ipm(fp.view(), fq.view(), 1.0),
            Err(Error::ShapeMismatch(_))
        ));
        assert!(linear_fisher_ipm(fp.view(), fp.view(), 0.0).is_err());
    }

    #[test]
    fn effective_dimension_limits() {
        let ones = vec![1.0; 6];
        assert_eq!(effective_dimension(&ones, 0.0), 6.0);
        assert_eq!(effective_dimension(&ones, 1.0), 3.0);
        assert!(effective_dimension(&ones, 1e300) < 1e-290);
        assert_eq!(effective_dimension(&[0.0, 2.0], 0.0), 1.0);
    }
}
