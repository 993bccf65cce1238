//! Importance estimators used as comparison baselines: diagonal Fisher
//! information (EWC) and the path-integral importance of Synaptic
//! Intelligence. Both produce nonnegative weight-shaped arrays that plug
//! into [`crate::plasticity::ImportanceStore::push_task`] unchanged.

use ndarray::Array2;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use crate::error::{Error, Result};
use crate::nn::{softmax, softmax_cross_entropy, DenseNet, GradientSet};

/// How the Fisher estimate picks labels.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FisherLabels {
    /// Empirical Fisher: squared log-likelihood gradients at the ground
    /// truth labels (default).
    GroundTruth,
    /// Draw the label from the model's predictive distribution, seeded.
    Sampled(u64),
}

/// Diagonal Fisher information estimate, weight-shaped.
#[derive(Debug, Clone)]
pub struct FisherEstimate {
    pub values: Vec<Array2<f64>>,
    pub sample_count: usize,
}

/// Mean over samples of the squared log-likelihood gradient per weight.
///
/// Gradients of `-log softmax(y|x)` are computed one sample at a time, so
/// the estimate is exact (not a batch average of averages) and deterministic
/// given the data order.
pub fn fisher_diagonal(
    net: &DenseNet,
    images: &Array2<f64>,
    labels: &[u8],
    mode: FisherLabels,
) -> Result<FisherEstimate> {
    if images.nrows() == 0 {
        return Err(Error::EmptyData("fisher estimation".into()));
    }
    if images.nrows() != labels.len() {
        return Err(Error::CountMismatch {
            images: images.nrows(),
            labels: labels.len(),
        });
    }
    let mut rng = match mode {
        FisherLabels::Sampled(seed) => Some(ChaCha20Rng::seed_from_u64(seed)),
        FisherLabels::GroundTruth => None,
    };
    let mut values: Vec<Array2<f64>> = net
        .layers()
        .iter()
        .map(|l| Array2::zeros((l.fan_out(), l.fan_in())))
        .collect();
    for (b, &raw_label) in labels.iter().enumerate() {
        let row = images.row(b).insert_axis(ndarray::Axis(0)).to_owned();
        let trace = net.forward(&row)?;
        let label = match &mut rng {
            None => raw_label as usize,
            Some(rng) => {
                let probs = softmax(trace.logits());
                let draw: f64 = rng.random_range(0.0..1.0);
                let mut acc = 0.0;
                let mut picked = probs.ncols() - 1;
                for (c, &p) in probs.row(0).iter().enumerate() {
                    acc += p;
                    if draw < acc {
                        picked = c;
                        break;
                    }
                }
                picked
            }
        };
        let dlogits = softmax_cross_entropy(trace.logits(), &[label])?.dlogits;
        let grads = net.backward(&trace, &dlogits)?;
        for (acc, g) in values.iter_mut().zip(&grads.weights) {
            acc.zip_mut_with(g, |a, &b| *a += b * b);
        }
    }
    let n = images.nrows() as f64;
    for v in &mut values {
        *v /= n;
    }
    Ok(FisherEstimate {
        values,
        sample_count: images.nrows(),
    })
}

/// Running path integral of `-grad . delta` per weight, the Synaptic
/// Intelligence credit for loss decrease along the training trajectory.
#[derive(Debug, Clone)]
pub struct PathIntegralState {
    omega: Vec<Array2<f64>>,
    /// Damping added to the squared per-task displacement.
    pub xi: f64,
}

impl PathIntegralState {
    pub fn new(net: &DenseNet, xi: f64) -> Self {
        PathIntegralState {
            omega: net
                .layers()
                .iter()
                .map(|l| Array2::zeros((l.fan_out(), l.fan_in())))
                .collect(),
            xi,
        }
    }

    #[inline]
    pub fn omega(&self) -> &[Array2<f64>] {
        &self.omega
    }

    /// Accumulates one optimizer step: `omega += -g * delta`, where `g` is
    /// the task-loss gradient and `delta` the realized parameter change. A
    /// descent step (`g` and `delta` of opposite sign) contributes
    /// positively.
    pub fn accumulate(&mut self, grads: &GradientSet, delta: &[Array2<f64>]) {
        for (l, omega) in self.omega.iter_mut().enumerate() {
            let g = grads.weights[l].as_slice().unwrap();
            let d = delta[l].as_slice().unwrap();
            let o = omega.as_slice_mut().unwrap();
            for k in 0..o.len() {
                o[k] -= g[k] * d[k];
            }
        }
    }

    /// Turns the accumulated path integral into per-weight importance:
    /// `relu(omega) / ((new - old)^2 + xi)`, then resets the integral for
    /// the next task.
    pub fn consolidate(
        &mut self,
        old_anchor: &[Array2<f64>],
        new_params: &[Array2<f64>],
    ) -> Vec<Array2<f64>> {
        let xi = self.xi;
        let importance = self
            .omega
            .iter()
            .zip(old_anchor.iter().zip(new_params))
            .map(|(omega, (old, new))| {
                let mut out = omega.clone();
                out.zip_mut_with(&(new - old), |o, &d| {
                    *o = o.max(0.0) / (d * d + xi);
                });
                out
            })
            .collect();
        for omega in &mut self.omega {
            omega.fill(0.0);
        }
        importance
    }
}
