//! Adam optimizer with bias correction.

use ndarray::{Array1, Array2};

use super::{DenseNet, GradientSet};
use crate::error::{Error, Result};

/// First/second moment accumulators plus step counter for one network.
#[derive(Debug, Clone)]
pub struct AdamState {
    m_weights: Vec<Array2<f64>>,
    v_weights: Vec<Array2<f64>>,
    m_biases: Vec<Array1<f64>>,
    v_biases: Vec<Array1<f64>>,
    step: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    /// Zero-initialized state with the standard defaults
    /// `beta1 = 0.9, beta2 = 0.999, eps = 1e-8`.
    pub fn new(net: &DenseNet, lr: f64) -> Self {
        let zeros = GradientSet::zeros_like(net);
        AdamState {
            m_weights: zeros.weights.clone(),
            v_weights: zeros.weights.clone(),
            m_biases: zeros.biases.clone(),
            v_biases: zeros.biases,
            step: 0,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    #[inline]
    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One Adam update in place. Rejects non-finite gradients, naming the
    /// offending layer.
    pub fn step(&mut self, net: &mut DenseNet, grads: &GradientSet) -> Result<()> {
        if grads.weights.len() != net.num_layers() {
            return Err(Error::shape(
                "adam step",
                format!("{} layers", net.num_layers()),
                format!("{} layers", grads.weights.len()),
            ));
        }
        if let Some(layer) = grads.first_non_finite_layer() {
            return Err(Error::NonFinite {
                layer,
                context: "adam gradients".into(),
            });
        }
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        let (beta1, beta2, lr, eps) = (self.beta1, self.beta2, self.lr, self.eps);
        for l in 0..net.num_layers() {
            let layer = &mut net.layers_mut()[l];
            update(
                layer.weights_mut().as_slice_mut().unwrap(),
                grads.weights[l].as_slice().unwrap(),
                self.m_weights[l].as_slice_mut().unwrap(),
                self.v_weights[l].as_slice_mut().unwrap(),
                beta1,
                beta2,
                bc1,
                bc2,
                lr,
                eps,
            );
            update(
                layer.biases_mut().as_slice_mut().unwrap(),
                grads.biases[l].as_slice().unwrap(),
                self.m_biases[l].as_slice_mut().unwrap(),
                self.v_biases[l].as_slice_mut().unwrap(),
                beta1,
                beta2,
                bc1,
                bc2,
                lr,
                eps,
            );
        }
        Ok(())
    }
}

#[allow(clippy::too_many_arguments)]
#[inline]
fn update(
    params: &mut [f64],
    grads: &[f64],
    m: &mut [f64],
    v: &mut [f64],
    beta1: f64,
    beta2: f64,
    bc1: f64,
    bc2: f64,
    lr: f64,
    eps: f64,
) {
    for i in 0..params.len() {
        let g = grads[i];
        m[i] = beta1 * m[i] + (1.0 - beta1) * g;
        v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
        let m_hat = m[i] / bc1;
        let v_hat = v[i] / bc2;
        params[i] -= lr * m_hat / (v_hat.sqrt() + eps);
    }
}
