//! Feed-forward LeakyReLU networks with hand-written reverse mode.
//!
//! One parameter container serves the three roles in Fisher GAN: the critic
//! `f(x) = <v, Φ_ω(x)> + b`, the feature map `Φ_ω` (every layer but the
//! last), and the generator `g_θ`. A critic may also carry a class head
//! `S ∈ R^{K×m}` on top of `Φ_ω` for the semi-supervised variants.
//!
//! Parameters live in one flat `Vec<f64>`; a [`Layout`] maps each layer's
//! weights and bias to a slice and tags it with its [`Partition`].

mod critic;
mod io;
mod net;

use std::ops::Range;

use ndarray::{ArrayView1, ArrayView2};
use rand::Rng as _;
use rand_distr::Normal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, Rng};

pub use critic::{kplus1_critic, log_softmax_rows, softmax_rows, CriticForm, CriticTrace};
pub use io::PARAMS_FORMAT_VERSION;
pub use net::{grad_input, grad_params, gradient_penalty, PenaltyGrad, Trace};

/// Default LeakyReLU negative slope.
pub const DEFAULT_SLOPE: f64 = 0.2;

/// Default weight initialisation standard deviation.
pub const DEFAULT_INIT_STDEV: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum OutputActivation {
    #[default]
    Linear,
    Tanh,
}

/// Layer widths from input to output, LeakyReLU on every hidden layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MlpSpec {
    pub layer_sizes: Vec<usize>,
    #[serde(default = "default_slope")]
    pub slope: f64,
    #[serde(default)]
    pub output: OutputActivation,
}

fn default_slope() -> f64 {
    DEFAULT_SLOPE
}

impl MlpSpec {
    pub fn new(layer_sizes: Vec<usize>) -> Self {
        Self {
            layer_sizes,
            slope: DEFAULT_SLOPE,
            output: OutputActivation::Linear,
        }
    }

    /// `depth` hidden layers of `width` units between `input` and `output`.
    pub fn uniform(input: usize, width: usize, depth: usize, output: usize) -> Self {
        let mut sizes = vec![input];
        sizes.extend(std::iter::repeat_n(width, depth));
        sizes.push(output);
        Self::new(sizes)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layer_sizes.len() < 2 || self.layer_sizes.contains(&0) {
            return Err(Error::InvalidConfig(format!(
                "layer sizes {:?} need an input and an output width, all positive",
                self.layer_sizes
            )));
        }
        if !(self.slope > 0.0 && self.slope < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "LeakyReLU slope {} outside (0, 1)",
                self.slope
            )));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_sizes.last().expect("validated")
    }

    pub fn hidden_layers(&self) -> usize {
        self.layer_sizes.len() - 2
    }

    /// Width of `Φ_ω`: the last hidden layer, or the input without hidden layers.
    pub fn feature_dim(&self) -> usize {
        self.layer_sizes[self.layer_sizes.len() - 2]
    }
}

/// Which block of the critic a parameter belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Partition {
    /// Feature map `Φ_ω`: every layer but the last.
    Omega,
    /// Last linear layer.
    V,
    /// Classifier head.
    S,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerSlot {
    pub inputs: usize,
    pub outputs: usize,
    /// Row-major `outputs x inputs`.
    pub weights: Range<usize>,
    pub bias: Option<Range<usize>>,
    pub partition: Partition,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layout {
    pub spec: MlpSpec,
    pub layers: Vec<LayerSlot>,
    /// Bias-free `K x m` classifier on the features.
    pub head: Option<LayerSlot>,
    pub len: usize,
}

impl Layout {
    pub fn new(spec: MlpSpec, classes: Option<usize>) -> Result<Self> {
        spec.validate()?;
        let mut offset = 0;
        let n = spec.layer_sizes.len() - 1;
        let mut layers = Vec::with_capacity(n);
        for (l, pair) in spec.layer_sizes.windows(2).enumerate() {
            let (inputs, outputs) = (pair[0], pair[1]);
            let weights = offset..offset + inputs * outputs;
            offset = weights.end;
            let bias = offset..offset + outputs;
            offset = bias.end;
            layers.push(LayerSlot {
                inputs,
                outputs,
                weights,
                bias: Some(bias),
                partition: if l + 1 == n {
                    Partition::V
                } else {
                    Partition::Omega
                },
            });
        }
        let head = match classes {
            Some(k) if k < 2 => {
                return Err(Error::InvalidConfig("class head needs K >= 2".into()));
            }
            Some(k) => {
                let m = spec.feature_dim();
                let weights = offset..offset + k * m;
                offset = weights.end;
                Some(LayerSlot {
                    inputs: m,
                    outputs: k,
                    weights,
                    bias: None,
                    partition: Partition::S,
                })
            }
            None => None,
        };
        Ok(Self {
            spec,
            layers,
            head,
            len: offset,
        })
    }

    pub fn classes(&self) -> Option<usize> {
        self.head.as_ref().map(|h| h.outputs)
    }

    fn slots(&self) -> impl Iterator<Item = &LayerSlot> {
        self.layers.iter().chain(self.head.iter())
    }

    /// Partition tag of every flat index.
    pub fn partitions(&self) -> Vec<Partition> {
        let mut out = vec![Partition::Omega; self.len];
        for slot in self.slots() {
            for i in slot
                .weights
                .clone()
                .chain(slot.bias.clone().unwrap_or(0..0))
            {
                out[i] = slot.partition;
            }
        }
        out
    }

    /// Flat ranges of all weights and biases in `partition`.
    pub fn ranges(&self, partition: Partition) -> Vec<Range<usize>> {
        self.slots()
            .filter(|s| s.partition == partition)
            .flat_map(|s| std::iter::once(s.weights.clone()).chain(s.bias.clone()))
            .collect()
    }
}

/// Flat parameter vector plus its layout.
#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    pub values: Vec<f64>,
    layout: Layout,
}

/// Flat gradient congruent with a [`Params`] layout.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    pub values: Vec<f64>,
}

impl Gradient {
    pub fn zeros(len: usize) -> Self {
        Self {
            values: vec![0.0; len],
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// `self += scale * other`.
    pub fn add_scaled(&mut self, other: &Gradient, scale: f64) {
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += scale * b;
        }
    }

    pub fn scale(&mut self, s: f64) {
        self.values.iter_mut().for_each(|v| *v *= s);
    }
}

impl Params {
    pub fn zeros(layout: Layout) -> Self {
        Self {
            values: vec![0.0; layout.len],
            layout,
        }
    }

    pub fn from_values(layout: Layout, values: Vec<f64>) -> Result<Self> {
        if values.len() != layout.len {
            return Err(Error::ShapeMismatch(format!(
                "{} values for a layout of {}",
                values.len(),
                layout.len
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::ShapeMismatch(format!("non-finite parameter at {i}")));
        }
        Ok(Self { values, layout })
    }

    /// Weights `~ N(0, stdev²)`, biases zero. The class head draws from its
    /// own stream, so adding one leaves the network weights unchanged.
    pub fn init(layout: Layout, seed: u64, stream: u64, stdev: f64) -> Result<Self> {
        if !(stdev > 0.0) {
            return Err(Error::InvalidConfig("init stdev must be positive".into()));
        }
        let normal = Normal::new(0.0, stdev).expect("positive stdev");
        let mut params = Self::zeros(layout);
        let mut rng = rng::stream(seed, stream);
        let mut head_rng = rng::stream(seed, rng::streams::HEAD_INIT);
        let (layers, head) = (params.layout.layers.clone(), params.layout.head.clone());
        for slot in &layers {
            fill_normal(&mut params.values[slot.weights.clone()], &mut rng, normal);
        }
        if let Some(slot) = head {
            fill_normal(
                &mut params.values[slot.weights.clone()],
                &mut head_rng,
                normal,
            );
        }
        Ok(params)
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn spec(&self) -> &MlpSpec {
        &self.layout.spec
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn weight(&self, layer: usize) -> ArrayView2<'_, f64> {
        let s = &self.layout.layers[layer];
        ArrayView2::from_shape((s.outputs, s.inputs), &self.values[s.weights.clone()])
            .expect("layout is consistent")
    }

    pub fn bias(&self, layer: usize) -> ArrayView1<'_, f64> {
        let s = &self.layout.layers[layer];
        ArrayView1::from(&self.values[s.bias.clone().expect("MLP layers have biases")])
    }

    pub fn head(&self) -> Option<ArrayView2<'_, f64>> {
        self.layout.head.as_ref().map(|s| {
            ArrayView2::from_shape((s.outputs, s.inputs), &self.values[s.weights.clone()])
                .expect("layout is consistent")
        })
    }

    pub fn gradient_zeros(&self) -> Gradient {
        Gradient::zeros(self.len())
    }

    /// Clamp every entry to `[-c, c]`.
    pub fn clip(&mut self, c: f64) {
        self.values.iter_mut().for_each(|v| *v = v.clamp(-c, c));
    }
}

fn fill_normal(out: &mut [f64], rng: &mut Rng, normal: Normal<f64>) {
    for v in out {
        *v = rng.sample(normal);
    }
}
