//! Fisher IPM: an integral probability metric whose critic is constrained by
//! its pooled second moment.
//!
//! The crate is organised bottom-up:
//!
//! - [`distzoo`]: analytic synthetic distributions (exact density + seeded sampler)
//! - [`oracle`]: quadrature chi-squared distance, optimal critic, Pearson/Neyman
//!   divergences, closed-form linear-critic Fisher IPM, effective dimension
//! - [`diffnet`]: small LeakyReLU MLPs with hand-written reverse mode
//! - [`optim`]: Adam and the multiplier update of the augmented Lagrangian
//! - [`fisher`]: objectives, critic/generator steps, IPM estimation and GAN training
//! - [`ssl`]: cross-entropy regularised and K+1 critics for semi-supervised toys
//! - [`harness`]: experiment configs, sweeps, reports and SVG plots

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod diffnet;
pub mod distzoo;
pub mod error;
pub mod fisher;
pub mod harness;
pub mod optim;
pub mod oracle;
pub mod rng;
pub mod ssl;

pub use diffnet::{CriticForm, Gradient, Layout, MlpSpec, OutputActivation, Params, Partition};
pub use distzoo::{Distribution, DistributionSpec, GaussianParams, MixtureParams};
pub use error::{Error, Result};
pub use fisher::{ConstraintMode, MetricsRecord, TrainConfig};
pub use optim::{AdamConfig, AdamState, AlmState};
pub use oracle::QuadratureConfig;
pub use ssl::SslConfig;
