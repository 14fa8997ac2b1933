use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};

use super::{Gradient, OutputActivation, Params};
use crate::error::{Error, Result};

/// Activations recorded by a forward pass, consumed by the backward pass.
#[derive(Debug, Clone)]
pub struct Trace {
    pub input: Array2<f64>,
    /// Pre-activations per layer.
    pub pre: Vec<Array2<f64>>,
    /// Post-activations per layer; the last entry is the network output.
    pub post: Vec<Array2<f64>>,
}

impl Trace {
    pub fn output(&self) -> &Array2<f64> {
        self.post.last().expect("at least one layer")
    }

    /// `Φ_ω(x)`: the last hidden activation, or the input itself.
    pub fn features(&self) -> &Array2<f64> {
        match self.post.len() {
            1 => &self.input,
            n => &self.post[n - 2],
        }
    }
}

fn leaky(z: f64, slope: f64) -> f64 {
    if z > 0.0 {
        z
    } else {
        slope * z
    }
}

fn leaky_grad(z: f64, slope: f64) -> f64 {
    if z > 0.0 {
        1.0
    } else {
        slope
    }
}

impl Params {
    fn check_input(&self, x: &ArrayView2<'_, f64>) -> Result<()> {
        let d = self.spec().input_dim();
        if x.ncols() != d {
            return Err(Error::ShapeMismatch(format!(
                "input has {} columns, network expects {d}",
                x.ncols()
            )));
        }
        Ok(())
    }

    /// Forward pass keeping every intermediate activation.
    pub fn trace(&self, x: ArrayView2<'_, f64>) -> Result<Trace> {
        self.check_input(&x)?;
        let slope = self.spec().slope;
        let n_layers = self.layout().layers.len();
        let mut pre = Vec::with_capacity(n_layers);
        let mut post: Vec<Array2<f64>> = Vec::with_capacity(n_layers);
        for l in 0..n_layers {
            let a = if l == 0 { x } else { post[l - 1].view() };
            let mut z = a.dot(&self.weight(l).t());
            z += &self.bias(l);
            let act = if l + 1 < n_layers {
                z.mapv(|v| leaky(v, slope))
            } else {
                match self.spec().output {
                    OutputActivation::Linear => z.clone(),
                    OutputActivation::Tanh => z.mapv(f64::tanh),
                }
            };
            pre.push(z);
            post.push(act);
        }
        Ok(Trace {
            input: x.to_owned(),
            pre,
            post,
        })
    }

    /// Network output, `n x out`.
    pub fn forward(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        let mut t = self.trace(x)?;
        Ok(t.post.pop().expect("at least one layer"))
    }

    /// Feature map `Φ_ω(x)`, `n x m`.
    pub fn features(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        let t = self.trace(x)?;
        Ok(t.features().clone())
    }

    /// Reverse pass.
    ///
    /// `d_out` is the adjoint of the network output; `d_features` is an extra
    /// adjoint on `Φ_ω` from heads attached to the features. Returns the
    /// parameter gradient and the input adjoint.
    pub fn backward(
        &self,
        trace: &Trace,
        d_out: ArrayView2<'_, f64>,
        d_features: Option<ArrayView2<'_, f64>>,
    ) -> (Gradient, Array2<f64>) {
        let slope = self.spec().slope;
        let layers = &self.layout().layers;
        let n_layers = layers.len();
        let mut grad = self.gradient_zeros();
        let mut delta = d_out.to_owned();
        if self.spec().output == OutputActivation::Tanh {
            Zip::from(&mut delta)
                .and(trace.output())
                .for_each(|d, a| *d *= 1.0 - a * a);
        }
        for l in (0..n_layers).rev() {
            let slot = &layers[l];
            let a_prev = if l == 0 {
                &trace.input
            } else {
                &trace.post[l - 1]
            };
            let gw = delta.t().dot(a_prev);
            grad.values[slot.weights.clone()]
                .iter_mut()
                .zip(gw.iter())
                .for_each(|(g, v)| *g += v);
            let gb = delta.sum_axis(Axis(0));
            grad.values[slot.bias.clone().expect("MLP layers have biases")]
                .iter_mut()
                .zip(gb.iter())
                .for_each(|(g, v)| *g += v);
            let mut d_prev = delta.dot(&self.weight(l));
            if l + 1 == n_layers {
                if let Some(df) = d_features {
                    d_prev += &df;
                }
            }
            if l > 0 {
                Zip::from(&mut d_prev)
                    .and(&trace.pre[l - 1])
                    .for_each(|d, z| *d *= leaky_grad(*z, slope));
            }
            delta = d_prev;
        }
        (grad, delta)
    }
}

/// Loss value and reverse-mode gradient for a scalar loss of the outputs.
///
/// `loss` receives the `n x out` output matrix and returns the loss with its
/// adjoint `∂loss/∂outputs`.
pub fn grad_params<F>(params: &Params, x: ArrayView2<'_, f64>, loss: F) -> Result<(f64, Gradient)>
where
    F: FnOnce(ArrayView2<'_, f64>) -> (f64, Array2<f64>),
{
    let trace = params.trace(x)?;
    let (value, d_out) = loss(trace.output().view());
    if !value.is_finite() {
        return Err(Error::NonFiniteLoss(format!("loss evaluated to {value}")));
    }
    if d_out.dim() != trace.output().dim() {
        return Err(Error::ShapeMismatch(format!(
            "loss adjoint has shape {:?}, outputs {:?}",
            d_out.dim(),
            trace.output().dim()
        )));
    }
    let (grad, _) = params.backward(&trace, d_out.view(), None);
    Ok((value, grad))
}

/// Per-row gradient of a scalar-output network with respect to its input.
pub fn grad_input(params: &Params, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
    if params.spec().output_dim() != 1 {
        return Err(Error::ShapeMismatch(
            "input gradients need a scalar-output network".into(),
        ));
    }
    let trace = params.trace(x)?;
    let ones = Array2::ones((x.nrows(), 1));
    Ok(params.backward(&trace, ones.view(), None).1)
}

/// Two-sided gradient penalty `mean_i (||∇_x f(x_i)|| - 1)²` and its
/// parameter gradient.
#[derive(Debug, Clone)]
pub struct PenaltyGrad {
    pub penalty: f64,
    pub input_grad_norms: Array1<f64>,
    pub grad: Gradient,
}

/// Penalty gradient by forward-over-reverse through the input gradient.
///
/// With piecewise-linear hidden activations and a linear scalar output,
/// `∇_x f = W_1ᵀ D_1 ... W_Lᵀ` where the `D_l` are locally constant, so
/// `∂<r, ∇_x f>/∂W_l = δ_l t_{l-1}ᵀ` with `δ_l` the ordinary backprop
/// adjoints and `t_l` the forward tangent of direction `r`.
pub fn gradient_penalty(params: &Params, x: ArrayView2<'_, f64>) -> Result<PenaltyGrad> {
    let spec = params.spec();
    if spec.output_dim() != 1 || spec.output != OutputActivation::Linear {
        return Err(Error::ShapeMismatch(
            "gradient penalty needs a linear scalar-output critic".into(),
        ));
    }
    let trace = params.trace(x)?;
    let slope = spec.slope;
    let n = x.nrows();
    let layers = &params.layout().layers;
    let n_layers = layers.len();

    // δ_l = ∂f/∂z_l for every layer, output first.
    let mut deltas: Vec<Array2<f64>> = vec![Array2::zeros((0, 0)); n_layers];
    deltas[n_layers - 1] = Array2::ones((n, 1));
    for l in (1..n_layers).rev() {
        let mut d = deltas[l].dot(&params.weight(l));
        Zip::from(&mut d)
            .and(&trace.pre[l - 1])
            .for_each(|d, z| *d *= leaky_grad(*z, slope));
        deltas[l - 1] = d;
    }
    let g = deltas[0].dot(&params.weight(0));

    let norms: Array1<f64> = g.rows().into_iter().map(|r| r.dot(&r).sqrt()).collect();
    let penalty = norms.iter().map(|v| (v - 1.0) * (v - 1.0)).sum::<f64>() / n as f64;

    // r_i = ∂penalty/∂g_i
    let mut tangent = g;
    for (mut row, norm) in tangent.rows_mut().into_iter().zip(norms.iter()) {
        let scale = if *norm > 0.0 {
            2.0 * (norm - 1.0) / (norm * n as f64)
        } else {
            0.0
        };
        row *= scale;
    }

    let mut grad = params.gradient_zeros();
    for l in 0..n_layers {
        let gw = deltas[l].t().dot(&tangent);
        grad.values[layers[l].weights.clone()]
            .iter_mut()
            .zip(gw.iter())
            .for_each(|(a, b)| *a += b);
        if l + 1 < n_layers {
            let mut next = tangent.dot(&params.weight(l).t());
            Zip::from(&mut next)
                .and(&trace.pre[l])
                .for_each(|t, z| *t *= leaky_grad(*z, slope));
            tangent = next;
        }
    }
    if !penalty.is_finite() || !grad.is_finite() {
        return Err(Error::NonFiniteLoss("gradient penalty".into()));
    }
    Ok(PenaltyGrad {
        penalty,
        input_grad_norms: norms,
        grad,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffnet::{Layout, MlpSpec};
    use ndarray::array;

    #[test]
    fn zero_params_give_zero_output() {
        let p = Params::zeros(Layout::new(MlpSpec::uniform(3, 8, 2, 2), None).unwrap());
        let x = array![[1.0, -2.0, 3.0], [0.5, 0.5, 0.5]];
        assert!(p.forward(x.view()).unwrap().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn single_linear_layer_is_matrix_product() {
        let layout = Layout::new(MlpSpec::new(vec![3, 1]), None).unwrap();
        let p = Params::from_values(layout, vec![0.5, -1.0, 2.0, 0.0]).unwrap();
        let x = array![[1.0, 2.0, 3.0], [-1.0, 0.0, 0.25]];
        let y = p.forward(x.view()).unwrap();
        assert_eq!(y, array![[4.5], [0.0]]);
    }

    #[test]
    fn leaky_relu_definition() {
        assert_eq!(leaky(-1.0, 0.2), -0.2);
        assert_eq!(leaky(3.0, 0.2), 3.0);
        // identity-weight hidden layer exposes the activation
        let layout = Layout::new(MlpSpec::new(vec![1, 1, 1]), None).unwrap();
        let p = Params::from_values(layout, vec![1.0, 0.0, 1.0, 0.0]).unwrap();
        assert_eq!(p.forward(array![[-1.0]].view()).unwrap()[[0, 0]], -0.2);
    }

    #[test]
    fn linear_critic_gradients() {
        let layout = Layout::new(MlpSpec::new(vec![2, 1]), None).unwrap();
        let p = Params::from_values(layout, vec![0.7, -0.3, 0.1]).unwrap();
        let x = array![[1.0, 2.0], [3.0, -4.0], [0.5, 0.5]];
        let gi = grad_input(&p, x.view()).unwrap();
        for row in gi.rows() {
            assert_eq!(row.to_vec(), vec![0.7, -0.3]);
        }
        let n = x.nrows() as f64;
        let (_, g) = grad_params(&p, x.view(), |out| {
            (out.sum() / n, Array2::from_elem(out.dim(), 1.0 / n))
        })
        .unwrap();
        let mean = x.mean_axis(Axis(0)).unwrap();
        assert!((g.values[0] - mean[0]).abs() < 1e-15);
        assert!((g.values[1] - mean[1]).abs() < 1e-15);
        assert_eq!(g.values[2], 1.0);
    }

    #[test]
    fn constant_critic_has_zero_input_gradient() {
        let layout = Layout::new(MlpSpec::uniform(2, 4, 2, 1), None).unwrap();
        let mut p = Params::zeros(layout);
        let last = p.layout().layers.last().unwrap().bias.clone().unwrap();
        p.values[last][0] = 2.5;
        let x = array![[0.3, -0.1], [4.0, 1.0]];
        assert!(grad_input(&p, x.view()).unwrap().iter().all(|v| *v == 0.0));
        assert!(p.forward(x.view()).unwrap().iter().all(|v| *v == 2.5));
    }

    #[test]
    fn bias_free_features_are_positively_homogeneous() {
        let layout = Layout::new(MlpSpec::new(vec![2, 6, 1]), None).unwrap();
        let p = Params::init(layout, 3, 1, 0.5).unwrap();
        let mut scaled = p.clone();
        let w0 = p.layout().layers[0].weights.clone();
        scaled.values[w0].iter_mut().for_each(|v| *v *= 3.0);
        let x = array![[0.2, -1.0], [1.5, 0.3]];
        let a = p.features(x.view()).unwrap();
        let b = scaled.features(x.view()).unwrap();
        Zip::from(&a)
            .and(&b)
            .for_each(|a, b| assert!((3.0 * a - b).abs() < 1e-14));
    }

    #[test]
    fn forward_is_deterministic() {
        let layout = Layout::new(MlpSpec::uniform(1, 16, 5, 1), None).unwrap();
        let p = Params::init(layout, 1, 1, 0.3).unwrap();
        let x = Array2::from_shape_fn((64, 1), |(i, _)| i as f64 * 0.1 - 3.0);
        assert_eq!(p.forward(x.view()).unwrap(), p.forward(x.view()).unwrap());
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let p = Params::zeros(Layout::new(MlpSpec::uniform(2, 4, 1, 1), None).unwrap());
        let x = array![[1.0, 2.0, 3.0]];
        assert!(matches!(p.forward(x.view()), Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn non_finite_loss_is_rejected() {
        let p = Params::zeros(Layout::new(MlpSpec::new(vec![1, 1]), None).unwrap());
        let x = array![[1.0]];
        let r = grad_params(&p, x.view(), |o| (f64::NAN, o.to_owned()));
        assert!(matches!(r, Err(Error::NonFiniteLoss(_))));
    }

    #[test]
    fn penalty_of_unit_slope_linear_critic_is_zero() {
        let layout = Layout::new(MlpSpec::new(vec![2, 1]), None).unwrap();
        let p = Params::from_values(layout, vec![0.6, 0.8, 0.0]).unwrap();
        let x = array![[1.0, 2.0], [3.0, -4.0]];
        let pg = gradient_penalty(&p, x.view()).unwrap();
        assert!(pg.penalty.abs() < 1e-15);
        assert!(pg.grad.values.iter().all(|v| v.abs() < 1e-15));
    }
}
