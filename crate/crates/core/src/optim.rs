//! Adam for network parameters and the gradient step on the Lagrange
//! multiplier of the augmented Lagrangian.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.5,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Bias-corrected Adam state.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub m: Vec<f64>,
    pub u: Vec<f64>,
    pub t: u64,
    /// Largest `|Δ|` of the most recent step.
    pub last_max_step: f64,
}

impl AdamState {
    pub fn new(config: AdamConfig, len: usize) -> Self {
        Self {
            config,
            m: vec![0.0; len],
            u: vec![0.0; len],
            t: 0,
            last_max_step: 0.0,
        }
    }

    /// One Adam step. `maximize` ascends instead of descending.
    pub fn step(&mut self, params: &mut [f64], grad: &[f64], maximize: bool) -> Result<()> {
        if params.len() != self.m.len() || grad.len() != self.m.len() {
            return Err(Error::ShapeMismatch(format!(
                "adam state of {} for {} params and {} gradients",
                self.m.len(),
                params.len(),
                grad.len()
            )));
        }
        if let Some(i) = grad.iter().position(|g| !g.is_finite()) {
            return Err(Error::NonFiniteGradient(i));
        }
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.config;
        self.t += 1;
        let c1 = 1.0 - beta1.powi(self.t as i32);
        let c2 = 1.0 - beta2.powi(self.t as i32);
        let sign = if maximize { 1.0 } else { -1.0 };
        let mut max_step = 0.0f64;
        for (((p, g), m), u) in params
            .iter_mut()
            .zip(grad)
            .zip(self.m.iter_mut())
            .zip(self.u.iter_mut())
        {
            *m = beta1 * *m + (1.0 - beta1) * g;
            *u = beta2 * *u + (1.0 - beta2) * g * g;
            let delta = lr * (*m / c1) / ((*u / c2).sqrt() + eps);
            *p += sign * delta;
            max_step = max_step.max(delta.abs());
        }
        self.last_max_step = max_step;
        Ok(())
    }
}

/// Lagrange multiplier `λ` and quadratic penalty weight `ρ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlmState {
    pub lambda: f64,
    pub rho: f64,
}

impl AlmState {
    pub fn new(rho: f64) -> Self {
        Self { lambda: 0.0, rho }
    }

    /// `λ ← λ - ρ (1 - Ω̂)`: gradient descent on `λ` with step `ρ`, where
    /// `∂L_F/∂λ = 1 - Ω̂`.
    pub fn step(self, omega_hat: f64) -> Self {
        Self {
            lambda: self.lambda - self.rho * (1.0 - omega_hat),
            rho: self.rho,
        }
    }
}
