use thiserror::Error;

use crate::diffnet::Params;
use crate::fisher::MetricsRecord;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("quadrature did not converge: error estimate {error:.3e} exceeds {tolerance:.1e}")]
    NonConverged {
        value: f64,
        error: f64,
        tolerance: f64,
    },

    #[error("integrand is unbounded on the quadrature grid near {at:?}")]
    UnboundedIntegrand { at: Vec<f64> },

    #[error("distance {0:.3e} is too small to normalise the optimal critic")]
    DegenerateDistance(f64),

    #[error("pooled covariance is not positive definite")]
    SingularCovariance,

    #[error("non-finite loss: {0}")]
    NonFiniteLoss(String),

    #[error("non-finite gradient entry at index {0}")]
    NonFiniteGradient(usize),

    #[error("training diverged at iteration {}: {}", .0.iteration, .0.reason)]
    Diverged(Box<Divergence>),

    #[error("malformed csv: {0}")]
    MalformedCsv(String),

    #[error("malformed params file: {0}")]
    MalformedParams(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// State recovered when a training loop hits a non-finite value.
#[derive(Debug, Clone)]
pub struct Divergence {
    pub iteration: usize,
    pub reason: String,
    /// Critic parameters at the end of the last finite iteration.
    pub critic: Params,
    /// Generator parameters, when the loop trains one.
    pub generator: Option<Params>,
    pub metrics: Vec<MetricsRecord>,
}
