//! Minimal dense feed-forward network with hand-derived gradients.
//!
//! The network is a stack of affine layers `z = x W^T + b` with an
//! element-wise activation. All math is `f64`; batches are row-major
//! `(batch, features)` arrays. Forward passes record every layer's pre- and
//! post-activations in an [`ActivationTrace`] so that backpropagation and
//! excitation backprop can both replay the pass.

mod adam;
mod loss;

pub use adam::AdamState;
pub use loss::{softmax, softmax_cross_entropy, softmax_cross_entropy_masked, LossOutput};

use ndarray::{Array1, Array2, ArrayView1, Axis};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use crate::error::{Error, Result};

/// Element-wise nonlinearity of a layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    /// No-op; used for the final (logit) layer.
    Identity,
}

impl Activation {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Identity => z,
        }
    }

    /// Derivative with respect to the pre-activation. ReLU uses the
    /// subgradient 0 at exactly zero.
    #[inline]
    fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
        }
    }
}

/// One dense layer: weights `(fan_out, fan_in)` row-major, biases `(fan_out)`.
#[derive(Debug, Clone)]
pub struct Layer {
    weights: Array2<f64>,
    biases: Array1<f64>,
    activation: Activation,
}

impl Layer {
    pub fn new(weights: Array2<f64>, biases: Array1<f64>, activation: Activation) -> Result<Self> {
        if weights.nrows() != biases.len() {
            return Err(Error::shape(
                "layer construction",
                format!("{} biases", weights.nrows()),
                format!("{} biases", biases.len()),
            ));
        }
        if weights.iter().any(|w| !w.is_finite()) || biases.iter().any(|b| !b.is_finite()) {
            return Err(Error::NonFinite {
                layer: 0,
                context: "layer construction".into(),
            });
        }
        Ok(Layer {
            weights,
            biases,
            activation,
        })
    }

    #[inline]
    pub fn fan_in(&self) -> usize {
        self.weights.ncols()
    }

    #[inline]
    pub fn fan_out(&self) -> usize {
        self.weights.nrows()
    }

    #[inline]
    pub fn weights(&self) -> &Array2<f64> {
        &self.weights
    }

    #[inline]
    pub fn biases(&self) -> &Array1<f64> {
        &self.biases
    }

    #[inline]
    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub(crate) fn weights_mut(&mut self) -> &mut Array2<f64> {
        &mut self.weights
    }

    pub(crate) fn biases_mut(&mut self) -> &mut Array1<f64> {
        &mut self.biases
    }
}

/// A dense feed-forward network. Hidden layers are ReLU; the last layer
/// produces raw logits (identity).
#[derive(Debug, Clone)]
pub struct DenseNet {
    layers: Vec<Layer>,
}

impl DenseNet {
    /// Builds a net from explicit layers, rejecting dimension mismatches
    /// between adjacent layers up front.
    pub fn new(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidConfig("network needs at least one layer".into()));
        }
        for (l, pair) in layers.windows(2).enumerate() {
            if pair[0].fan_out() != pair[1].fan_in() {
                return Err(Error::shape(
                    format!("layer {} -> {}", l, l + 1),
                    format!("fan_in {}", pair[0].fan_out()),
                    format!("fan_in {}", pair[1].fan_in()),
                ));
            }
        }
        Ok(DenseNet { layers })
    }

    /// Kaiming-uniform initialization (fan-in scaling), seeded. `dims` lists
    /// layer widths input-first, e.g. `[784, 400, 400, 10]`. Hidden layers
    /// get ReLU, the final layer identity; biases start at zero.
    pub fn kaiming_seeded(dims: &[usize], seed: u64) -> Result<Self> {
        if dims.len() < 2 {
            return Err(Error::InvalidConfig(
                "need at least an input and an output dimension".into(),
            ));
        }
        if dims.contains(&0) {
            return Err(Error::InvalidConfig("layer widths must be positive".into()));
        }
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let mut layers = Vec::with_capacity(dims.len() - 1);
        for (l, pair) in dims.windows(2).enumerate() {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let limit = (6.0 / fan_in as f64).sqrt();
            let weights =
                Array2::from_shape_fn((fan_out, fan_in), |_| rng.random_range(-limit..limit));
            let biases = Array1::zeros(fan_out);
            let activation = if l + 2 == dims.len() {
                Activation::Identity
            } else {
                Activation::Relu
            };
            layers.push(Layer::new(weights, biases, activation)?);
        }
        DenseNet::new(layers)
    }

    #[inline]
    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    #[inline]
    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    #[inline]
    pub fn input_dim(&self) -> usize {
        self.layers[0].fan_in()
    }

    #[inline]
    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("nonempty").fan_out()
    }

    pub(crate) fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    /// Clones the weight matrices (biases excluded); this is the anchor
    /// snapshot used by consolidation.
    pub fn snapshot_weights(&self) -> Vec<Array2<f64>> {
        self.layers.iter().map(|l| l.weights.clone()).collect()
    }

    /// Forward pass over a batch `(batch, input_dim)`; records every layer's
    /// pre/post activations.
    pub fn forward(&self, input: &Array2<f64>) -> Result<ActivationTrace> {
        if input.ncols() != self.input_dim() {
            return Err(Error::shape(
                "forward input",
                format!("{} columns", self.input_dim()),
                format!("{} columns", input.ncols()),
            ));
        }
        if input.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite {
                layer: 0,
                context: "forward input".into(),
            });
        }
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut post = Vec::with_capacity(self.layers.len());
        let mut current = input.clone();
        for layer in &self.layers {
            let mut z = current.dot(&layer.weights.t());
            z += &layer.biases;
            let a = z.mapv(|v| layer.activation.apply(v));
            pre.push(z);
            post.push(a.clone());
            current = a;
        }
        Ok(ActivationTrace {
            input: input.clone(),
            pre,
            post,
        })
    }

    /// Backpropagation from `dlogits` (one row of `dL/dlogits` per sample,
    /// same shape as the logits). Parameter gradients are mean-reduced over
    /// the batch.
    pub fn backward(&self, trace: &ActivationTrace, dlogits: &Array2<f64>) -> Result<GradientSet> {
        let last = self.layers.len() - 1;
        if dlogits.dim() != trace.post[last].dim() {
            return Err(Error::shape(
                "backward dlogits",
                format!("{:?}", trace.post[last].dim()),
                format!("{:?}", dlogits.dim()),
            ));
        }
        if trace.input.nrows() != dlogits.nrows() {
            return Err(Error::shape(
                "backward trace",
                format!("{} rows", dlogits.nrows()),
                format!("{} rows", trace.input.nrows()),
            ));
        }
        let batch = trace.input.nrows() as f64;
        let mut d_weights = vec![Array2::zeros((0, 0)); self.layers.len()];
        let mut d_biases = vec![Array1::zeros(0); self.layers.len()];

        // dz for the current layer, walking from the top down.
        let mut dz = dlogits.clone();
        for l in (0..self.layers.len()).rev() {
            let layer = &self.layers[l];
            // The logits layer is identity; hidden layers gate by ReLU'.
            if layer.activation != Activation::Identity {
                dz.zip_mut_with(&trace.pre[l], |d, &z| *d *= layer.activation.derivative(z));
            }
            let below = trace.layer_output(l);
            d_weights[l] = dz.t().dot(below) / batch;
            d_biases[l] = dz.sum_axis(Axis(0)) / batch;
            if l > 0 {
                dz = dz.dot(&layer.weights);
            }
        }
        Ok(GradientSet {
            weights: d_weights,
            biases: d_biases,
        })
    }
}

/// Every layer's pre- and post-activations from one forward pass, with the
/// network input stored as layer 0's output.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationTrace {
    input: Array2<f64>,
    pre: Vec<Array2<f64>>,
    post: Vec<Array2<f64>>,
}

impl ActivationTrace {
    #[inline]
    pub fn batch_len(&self) -> usize {
        self.input.nrows()
    }

    /// Output of layer `l` where layer 0 is the network input; `l = depth`
    /// gives the logits.
    #[inline]
    pub fn layer_output(&self, l: usize) -> &Array2<f64> {
        if l == 0 {
            &self.input
        } else {
            &self.post[l - 1]
        }
    }

    /// One sample's output at layer `l`.
    #[inline]
    pub fn layer_output_row(&self, l: usize, sample: usize) -> ArrayView1<'_, f64> {
        self.layer_output(l).row(sample)
    }

    #[inline]
    pub fn pre_activation(&self, l: usize) -> &Array2<f64> {
        &self.pre[l - 1]
    }

    /// Raw logits for the batch.
    #[inline]
    pub fn logits(&self) -> &Array2<f64> {
        self.post.last().expect("nonempty")
    }

    #[inline]
    pub fn depth(&self) -> usize {
        self.post.len()
    }
}

/// Gradients shaped like a [`DenseNet`]'s parameters.
#[derive(Debug, Clone)]
pub struct GradientSet {
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
}

impl GradientSet {
    pub fn zeros_like(net: &DenseNet) -> Self {
        GradientSet {
            weights: net
                .layers
                .iter()
                .map(|l| Array2::zeros((l.fan_out(), l.fan_in())))
                .collect(),
            biases: net.layers.iter().map(|l| Array1::zeros(l.fan_out())).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &GradientSet) {
        for (a, b) in self.weights.iter_mut().zip(&other.weights) {
            *a += b;
        }
        for (a, b) in self.biases.iter_mut().zip(&other.biases) {
            *a += b;
        }
    }

    /// Index of the first layer holding a non-finite entry, if any.
    pub fn first_non_finite_layer(&self) -> Option<usize> {
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            if w.iter().any(|x| !x.is_finite()) || b.iter().any(|x| !x.is_finite()) {
                return Some(l);
            }
        }
        None
    }
}
