//! Synaptic importance learned by Oja's rule and the quadratic
//! consolidation penalty it weights.
//!
//! Each weight carries a nonnegative importance `gamma`, grown whenever its
//! pre- and post-synaptic neurons are both highlighted by a contrastive
//! attention pass and decayed by Oja's stabilizing term so it cannot grow
//! without bound. At a task boundary the current weights and importances are
//! frozen as an anchor; from then on, moving an important weight away from
//! its anchor costs `lambda * gamma * (w - w_anchor)^2`.
//!
//! Biases carry no importance: they have no pre-synaptic neuron, so no
//! attention mass ever reaches them and they are never consolidated.

use ndarray::{Array1, Array2};

use crate::attention::MwpMaps;
use crate::error::{Error, Result};
use crate::nn::{DenseNet, GradientSet};

/// A consolidated task: anchor weights plus the importance frozen with them.
#[derive(Debug, Clone)]
pub struct ConsolidatedTask {
    pub anchors: Vec<Array2<f64>>,
    pub importance: Vec<Array2<f64>>,
}

/// Running per-synapse importance plus the anchors of every finished task.
#[derive(Debug, Clone)]
pub struct ImportanceStore {
    gamma: Vec<Array2<f64>>,
    tasks: Vec<ConsolidatedTask>,
    lambda: f64,
    epsilon: f64,
    /// Reset the running importance at each boundary (default). The
    /// accumulate variant keeps it growing across tasks.
    reset_on_consolidate: bool,
}

impl ImportanceStore {
    /// Zero importance, no consolidated tasks.
    pub fn new(net: &DenseNet, lambda: f64, epsilon: f64) -> Self {
        ImportanceStore {
            gamma: net
                .layers()
                .iter()
                .map(|l| Array2::zeros((l.fan_out(), l.fan_in())))
                .collect(),
            tasks: Vec::new(),
            lambda,
            epsilon,
            reset_on_consolidate: true,
        }
    }

    pub fn set_reset_on_consolidate(&mut self, reset: bool) {
        self.reset_on_consolidate = reset;
    }

    #[inline]
    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    #[inline]
    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    #[inline]
    pub fn gamma(&self) -> &[Array2<f64>] {
        &self.gamma
    }

    #[inline]
    pub fn tasks(&self) -> &[ConsolidatedTask] {
        &self.tasks
    }

    #[inline]
    pub fn has_tasks(&self) -> bool {
        !self.tasks.is_empty()
    }

    pub(crate) fn from_parts(
        gamma: Vec<Array2<f64>>,
        tasks: Vec<ConsolidatedTask>,
        lambda: f64,
        epsilon: f64,
        reset_on_consolidate: bool,
    ) -> Self {
        ImportanceStore {
            gamma,
            tasks,
            lambda,
            epsilon,
            reset_on_consolidate,
        }
    }

    #[inline]
    pub(crate) fn reset_on_consolidate(&self) -> bool {
        self.reset_on_consolidate
    }

    /// One Oja update of every synapse's importance from a set of MWP maps:
    /// `gamma += eps * (pc_pre * pc_post - pc_post^2 * gamma)`.
    /// Layers whose contrastive map is flagged all-zero are skipped.
    pub fn oja_update(&mut self, maps: &MwpMaps) -> Result<()> {
        if maps.depth() != self.gamma.len() {
            return Err(Error::shape(
                "oja update",
                format!("{} layers", self.gamma.len()),
                format!("{} layers", maps.depth()),
            ));
        }
        let eps = self.epsilon;
        for l in 0..self.gamma.len() {
            let pre_map = maps.layer(l);
            let post_map = maps.layer(l + 1);
            if pre_map.flagged || post_map.flagged {
                continue;
            }
            let gamma = &mut self.gamma[l];
            if gamma.dim() != (post_map.contrastive.len(), pre_map.contrastive.len()) {
                return Err(Error::shape(
                    format!("oja update layer {l}"),
                    format!("{:?}", gamma.dim()),
                    format!(
                        "({}, {})",
                        post_map.contrastive.len(),
                        pre_map.contrastive.len()
                    ),
                ));
            }
            let pre = &pre_map.contrastive;
            let post = &post_map.contrastive;
            for (i, mut row) in gamma.rows_mut().into_iter().enumerate() {
                let p = post[i];
                if p == 0.0 {
                    continue;
                }
                let decay = eps * p * p;
                let grow = eps * p;
                for (g, &q) in row.iter_mut().zip(pre.iter()) {
                    *g += grow * q - decay * *g;
                }
            }
        }
        Ok(())
    }

    /// Quadratic penalty over all consolidated tasks and its gradient
    /// (`2 * lambda * gamma * (w - anchor)`, summed over tasks). Biases get
    /// zero gradient. With no consolidated tasks both are zero.
    pub fn consolidation_penalty(&self, net: &DenseNet) -> Result<(f64, GradientSet)> {
        let mut grads = GradientSet::zeros_like(net);
        let penalty = self.accumulate_penalty(net, &mut grads)?;
        Ok((penalty, grads))
    }

    /// Adds the penalty gradient into `grads` and returns the penalty value.
    /// Same math as [`Self::consolidation_penalty`] without the allocation.
    pub fn accumulate_penalty(&self, net: &DenseNet, grads: &mut GradientSet) -> Result<f64> {
        let mut penalty = 0.0;
        for task in &self.tasks {
            if task.anchors.len() != net.num_layers() {
                return Err(Error::shape(
                    "consolidation penalty",
                    format!("{} layers", net.num_layers()),
                    format!("{} layers", task.anchors.len()),
                ));
            }
            for (l, layer) in net.layers().iter().enumerate() {
                let weights = layer.weights();
                let anchor = &task.anchors[l];
                let importance = &task.importance[l];
                if anchor.dim() != weights.dim() {
                    return Err(Error::shape(
                        format!("consolidation anchor layer {l}"),
                        format!("{:?}", weights.dim()),
                        format!("{:?}", anchor.dim()),
                    ));
                }
                let w = weights.as_slice().unwrap();
                let a = anchor.as_slice().unwrap();
                let g = importance.as_slice().unwrap();
                let out = grads.weights[l].as_slice_mut().unwrap();
                for k in 0..w.len() {
                    let diff = w[k] - a[k];
                    penalty += g[k] * diff * diff;
                    out[k] += 2.0 * self.lambda * g[k] * diff;
                }
            }
        }
        Ok(self.lambda * penalty)
    }

    /// Freezes the current weights and importance as a new anchor, then
    /// resets the running importance for the next task (unless configured to
    /// accumulate).
    pub fn consolidate_task(&mut self, net: &DenseNet) {
        self.push_task(net.snapshot_weights(), self.gamma.clone());
        if self.reset_on_consolidate {
            for g in &mut self.gamma {
                g.fill(0.0);
            }
        }
    }

    /// Appends a consolidated task from externally computed importance
    /// (shared by the EWC and SI estimators).
    pub fn push_task(&mut self, anchors: Vec<Array2<f64>>, importance: Vec<Array2<f64>>) {
        debug_assert_eq!(anchors.len(), importance.len());
        self.tasks.push(ConsolidatedTask {
            anchors,
            importance,
        });
    }
}

/// Convenience one-hot constructor used in tests and the harness.
pub fn onehot(len: usize, index: usize) -> Array1<f64> {
    let mut v = Array1::zeros(len);
    v[index] = 1.0;
    v
}
