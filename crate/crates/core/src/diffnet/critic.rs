use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis, Zip};
use serde::{Deserialize, Serialize};

use super::{Gradient, Params, Trace};
use crate::error::{Error, Result};

/// How the scalar critic is read off the network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum CriticForm {
    /// `f(x) = <v, Φ_ω(x)> + b`, the network output itself.
    #[default]
    Split,
    /// `f(x) = Σ_y p(y|x) <S_y, Φ_ω(x)> - (<v, Φ_ω(x)> + b)` with
    /// `p(y|x) = softmax(S Φ_ω(x))_y`.
    KPlusOne,
}

/// Row-wise softmax, shifted by the row maximum.
pub fn softmax_rows(logits: ArrayView2<'_, f64>) -> Array2<f64> {
    let mut p = logits.to_owned();
    for mut row in p.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |a, b| a.max(*b));
        row.mapv_inplace(|v| (v - max).exp());
        let s = row.sum();
        row /= s;
    }
    p
}

/// Row-wise log-softmax.
pub fn log_softmax_rows(logits: ArrayView2<'_, f64>) -> Array2<f64> {
    let mut out = logits.to_owned();
    for mut row in out.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |a, b| a.max(*b));
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        row.mapv_inplace(|v| v - lse);
    }
    out
}

/// Forward state of a critic evaluation.
#[derive(Debug, Clone)]
pub struct CriticTrace {
    pub net: Trace,
    /// `S Φ_ω(x)`, present whenever the network has a class head.
    pub logits: Option<Array2<f64>>,
    pub probs: Option<Array2<f64>>,
    pub values: Array1<f64>,
}

impl CriticTrace {
    pub fn features(&self) -> &Array2<f64> {
        self.net.features()
    }
}

impl Params {
    pub fn critic_trace(&self, form: CriticForm, x: ArrayView2<'_, f64>) -> Result<CriticTrace> {
        if self.spec().output_dim() != 1 {
            return Err(Error::ShapeMismatch("critic output must be scalar".into()));
        }
        if form == CriticForm::KPlusOne && self.head().is_none() {
            return Err(Error::ShapeMismatch("K+1 critic needs a class head".into()));
        }
        let net = self.trace(x)?;
        let (logits, probs) = match self.head() {
            Some(s) => {
                let logits = net.features().dot(&s.t());
                let probs = softmax_rows(logits.view());
                (Some(logits), Some(probs))
            }
            None => (None, None),
        };
        let u = net.output().column(0).to_owned();
        let values = match form {
            CriticForm::Split => u,
            CriticForm::KPlusOne => {
                let (l, p) = (logits.as_ref().unwrap(), probs.as_ref().unwrap());
                (l * p).sum_axis(Axis(1)) - u
            }
        };
        Ok(CriticTrace {
            net,
            logits,
            probs,
            values,
        })
    }

    /// Scalar critic values, one per row.
    pub fn critic(&self, form: CriticForm, x: ArrayView2<'_, f64>) -> Result<Array1<f64>> {
        Ok(self.critic_trace(form, x)?.values)
    }

    /// Reverse pass for `d_values = ∂L/∂f` plus an optional extra adjoint on
    /// the class logits (the cross-entropy term).
    pub fn critic_backward(
        &self,
        form: CriticForm,
        trace: &CriticTrace,
        d_values: ArrayView1<'_, f64>,
        d_logits: Option<ArrayView2<'_, f64>>,
    ) -> (Gradient, Array2<f64>) {
        let n = d_values.len();
        let mut d_out = Array2::zeros((n, 1));
        let mut total_logits = d_logits.map(|d| d.to_owned());
        match form {
            CriticForm::Split => d_out.column_mut(0).assign(&d_values),
            CriticForm::KPlusOne => {
                d_out.column_mut(0).assign(&d_values.mapv(|v| -v));
                let (l, p) = (
                    trace.logits.as_ref().unwrap(),
                    trace.probs.as_ref().unwrap(),
                );
                let lbar = (l * p).sum_axis(Axis(1));
                let mut dl = Array2::zeros(l.dim());
                Zip::indexed(&mut dl).for_each(|(i, k), d| {
                    *d = d_values[i] * p[[i, k]] * (1.0 + l[[i, k]] - lbar[i]);
                });
                total_logits = Some(match total_logits {
                    Some(extra) => dl + extra,
                    None => dl,
                });
            }
        }
        let (d_features, head_grad) = match (&total_logits, self.head()) {
            (Some(dl), Some(s)) => (Some(dl.dot(&s)), Some(dl.t().dot(trace.features()))),
            _ => (None, None),
        };
        let (mut grad, dx) = self.backward(
            &trace.net,
            d_out.view(),
            d_features.as_ref().map(|d| d.view()),
        );
        if let (Some(hg), Some(slot)) = (head_grad, &self.layout().head) {
            grad.values[slot.weights.clone()]
                .iter_mut()
                .zip(hg.iter())
                .for_each(|(a, b)| *a += b);
        }
        (grad, dx)
    }
}

/// K+1 critic values `Σ_y p(y|x)<S_y, Φ(x)> - <v, Φ(x)> - b`.
pub fn kplus1_critic(params: &Params, x: ArrayView2<'_, f64>) -> Result<Array1<f64>> {
    params.critic(CriticForm::KPlusOne, x)
}
