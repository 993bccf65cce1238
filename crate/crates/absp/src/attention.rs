//! Excitation backprop (EB) and its contrastive variant.
//!
//! EB walks a probability distribution over neurons from the output layer
//! down to the pixels. At each step the mass of an upper neuron `i` is split
//! across the lower neurons `j` in proportion to their positive-weighted
//! contribution `f_j * max(w_ij, 0)`; negative-weight synapses carry none.
//! The per-neuron mass at layer `l` is the marginal winning probability
//! (MWP) of that neuron for the chosen class.
//!
//! The contrastive variant runs a second pass whose top-layer weights are
//! negated, then keeps the positive part of the difference between the two
//! marginal vectors, renormalized per layer. The result highlights neurons
//! that argue *for* the class rather than for anything salient.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};

use crate::error::{Error, Result};
use crate::nn::{ActivationTrace, DenseNet};

/// Per-layer marginal winning probabilities for one top-down pass.
///
/// `dropped_*` record excitation mass lost while computing *this* layer from
/// the one above (an upper neuron whose positive contributions sum to zero
/// cannot pass its mass down).
#[derive(Debug, Clone)]
pub struct LayerMwp {
    pub positive: Array1<f64>,
    pub negative: Array1<f64>,
    pub contrastive: Array1<f64>,
    /// True when the ReLU'd positive/negative difference had no mass; the
    /// contrastive vector is all-zero and must be skipped downstream.
    pub flagged: bool,
    pub dropped_positive: f64,
    pub dropped_negative: f64,
}

/// MWP vectors for every layer of one network, output layer included.
/// Layer 0 is the input (pixels); layer `depth()` the logits.
#[derive(Debug, Clone)]
pub struct MwpMaps {
    layers: Vec<LayerMwp>,
}

impl MwpMaps {
    /// Builds maps from externally supplied per-layer contrastive vectors
    /// (input layer first). Positive/negative vectors are set equal to the
    /// contrastive ones and no layer is flagged.
    pub fn from_contrastive(vectors: Vec<Array1<f64>>) -> Self {
        let layers = vectors
            .into_iter()
            .map(|v| LayerMwp {
                positive: v.clone(),
                negative: Array1::zeros(v.len()),
                contrastive: v,
                flagged: false,
                dropped_positive: 0.0,
                dropped_negative: 0.0,
            })
            .collect();
        MwpMaps { layers }
    }

    /// Marks the given layers as flagged all-zero (testing and diagnostics).
    pub fn with_flags(mut self, flags: &[bool]) -> Self {
        for (layer, &f) in self.layers.iter_mut().zip(flags) {
            layer.flagged = f;
        }
        self
    }

    /// Maps for layer `l`; layer 0 is the input layer.
    #[inline]
    pub fn layer(&self, l: usize) -> &LayerMwp {
        &self.layers[l]
    }

    #[inline]
    pub fn depth(&self) -> usize {
        self.layers.len() - 1
    }

    /// Contrastive map at the input layer (the attention heatmap source).
    #[inline]
    pub fn input_map(&self) -> &Array1<f64> {
        &self.layers[0].contrastive
    }

    /// Total excitation mass dropped across all positive-pass steps.
    pub fn total_dropped_positive(&self) -> f64 {
        self.layers.iter().map(|l| l.dropped_positive).sum()
    }

    pub fn total_dropped_negative(&self) -> f64 {
        self.layers.iter().map(|l| l.dropped_negative).sum()
    }
}

/// One EB propagation step (reference implementation).
///
/// `pre_acts` holds the lower layer's activations `f^(l-1)` (must be
/// nonnegative: ReLU outputs or pixel intensities), `weights` the
/// `(upper x lower)` synapse matrix, and `upper` the MWP vector over the
/// upper layer. Returns the lower-layer marginals and the mass dropped from
/// upper neurons with no positive contribution.
pub fn eb_step(
    pre_acts: ArrayView1<'_, f64>,
    weights: ArrayView2<'_, f64>,
    upper: ArrayView1<'_, f64>,
) -> (Array1<f64>, f64) {
    assert_eq!(
        weights.ncols(),
        pre_acts.len(),
        "eb_step: weights columns must match lower layer width"
    );
    assert_eq!(
        weights.nrows(),
        upper.len(),
        "eb_step: weights rows must match upper layer width"
    );
    let mut lower = Array1::zeros(pre_acts.len());
    let mut dropped = 0.0;
    for (i, &mass) in upper.iter().enumerate() {
        if mass == 0.0 {
            continue;
        }
        let row = weights.row(i);
        let mut denom = 0.0;
        for (j, &w) in row.iter().enumerate() {
            if w >= 0.0 {
                denom += pre_acts[j] * w;
            }
        }
        if denom <= 0.0 {
            dropped += mass;
            continue;
        }
        for (j, &w) in row.iter().enumerate() {
            if w >= 0.0 {
                lower[j] += mass * pre_acts[j] * w / denom;
            }
        }
    }
    (lower, dropped)
}

/// Batched EB step over `(batch, width)` marginal matrices.
///
/// `pos_weights` must already be clipped to `max(w, 0)`. Algebraically
/// identical to [`eb_step`] applied per row, but expressed as two matrix
/// products so large batches run at matmul speed.
pub fn eb_step_batch(
    pre_acts: &Array2<f64>,
    pos_weights: &Array2<f64>,
    upper: &Array2<f64>,
) -> (Array2<f64>, Array1<f64>) {
    // denom[b][i] = sum_j pre[b][j] * w+[i][j]
    let denom = pre_acts.dot(&pos_weights.t());
    let mut ratio = upper.clone();
    let mut dropped = Array1::zeros(upper.nrows());
    for ((b, i), r) in ratio.indexed_iter_mut() {
        if *r == 0.0 {
            continue;
        }
        let d = denom[[b, i]];
        if d <= 0.0 {
            dropped[b] += *r;
            *r = 0.0;
        } else {
            *r /= d;
        }
    }
    // lower[b][j] = pre[b][j] * sum_i ratio[b][i] * w+[i][j]
    let mut lower = ratio.dot(pos_weights);
    lower *= pre_acts;
    (lower, dropped)
}

/// Contrastive MWP maps for one sample of a recorded forward pass.
///
/// The positive pass starts from a one-hot distribution on `target` and
/// recurses with the network weights; the negative pass starts identically
/// but negates the weights of the top layer only. Each layer's contrastive
/// map is the renormalized positive part of `positive - negative`; a layer
/// where that difference vanishes is flagged all-zero. The output layer's
/// contrastive map is the one-hot target by definition.
pub fn contrastive_mwp(
    net: &DenseNet,
    trace: &ActivationTrace,
    sample: usize,
    target: usize,
) -> Result<MwpMaps> {
    let classes = net.output_dim();
    if target >= classes {
        return Err(Error::LabelOutOfRange {
            label: target,
            classes,
        });
    }
    if sample >= trace.batch_len() {
        return Err(Error::shape(
            "contrastive_mwp sample",
            format!("sample < {}", trace.batch_len()),
            format!("sample {sample}"),
        ));
    }
    let depth = net.num_layers();
    let onehot = {
        let mut v = Array1::zeros(classes);
        v[target] = 1.0;
        v
    };

    let mut positive: Vec<Array1<f64>> = vec![Array1::zeros(0); depth + 1];
    let mut negative: Vec<Array1<f64>> = vec![Array1::zeros(0); depth + 1];
    let mut dropped = vec![(0.0, 0.0); depth + 1];
    positive[depth] = onehot.clone();
    negative[depth] = onehot;

    for l in (1..=depth).rev() {
        let pre = trace.layer_output_row(l - 1, sample);
        let weights = net.layers()[l - 1].weights();
        let (pos, dp) = eb_step(pre, weights.view(), positive[l].view());
        let (neg, dn) = if l == depth {
            let negated = weights.mapv(|w| -w);
            eb_step(pre, negated.view(), negative[l].view())
        } else {
            eb_step(pre, weights.view(), negative[l].view())
        };
        positive[l - 1] = pos;
        negative[l - 1] = neg;
        dropped[l - 1] = (dp, dn);
    }

    let mut layers = Vec::with_capacity(depth + 1);
    for l in 0..=depth {
        let (contrastive, flagged) = if l == depth {
            (positive[l].clone(), false)
        } else {
            contrast(&positive[l], &negative[l])
        };
        layers.push(LayerMwp {
            positive: std::mem::take(&mut positive[l]),
            negative: std::mem::take(&mut negative[l]),
            contrastive,
            flagged,
            dropped_positive: dropped[l].0,
            dropped_negative: dropped[l].1,
        });
    }
    Ok(MwpMaps { layers })
}

/// Renormalized positive part of `pos - neg`; flags an all-zero result.
fn contrast(pos: &Array1<f64>, neg: &Array1<f64>) -> (Array1<f64>, bool) {
    let mut diff = pos - neg;
    diff.mapv_inplace(|v| v.max(0.0));
    let sum = diff.sum();
    if sum <= 0.0 {
        (Array1::zeros(diff.len()), true)
    } else {
        diff /= sum;
        (diff, false)
    }
}

/// Contrastive maps for a whole batch, averaged into one [`MwpMaps`].
///
/// Equivalent to running [`contrastive_mwp`] per sample with that sample's
/// target and averaging the resulting distributions per layer. A sample
/// flagged at some layer contributes nothing to that layer's average; a
/// layer flagged for every sample stays flagged.
pub fn batch_contrastive_mwp(
    net: &DenseNet,
    trace: &ActivationTrace,
    targets: &[usize],
) -> Result<MwpMaps> {
    let batch = trace.batch_len();
    if targets.len() != batch {
        return Err(Error::shape(
            "batch_contrastive_mwp targets",
            format!("{batch} targets"),
            format!("{} targets", targets.len()),
        ));
    }
    let classes = net.output_dim();
    if let Some(&bad) = targets.iter().find(|&&t| t >= classes) {
        return Err(Error::LabelOutOfRange {
            label: bad,
            classes,
        });
    }
    let depth = net.num_layers();

    let mut onehot = Array2::zeros((batch, classes));
    for (b, &t) in targets.iter().enumerate() {
        onehot[[b, t]] = 1.0;
    }

    let mut positive: Vec<Array2<f64>> = vec![Array2::zeros((0, 0)); depth + 1];
    let mut negative: Vec<Array2<f64>> = vec![Array2::zeros((0, 0)); depth + 1];
    let mut dropped_pos: Vec<Array1<f64>> = vec![Array1::zeros(batch); depth + 1];
    let mut dropped_neg: Vec<Array1<f64>> = vec![Array1::zeros(batch); depth + 1];
    positive[depth] = onehot.clone();
    negative[depth] = onehot;

    for l in (1..=depth).rev() {
        let pre = trace.layer_output(l - 1);
        let weights = net.layers()[l - 1].weights();
        let pos_w = weights.mapv(|w| w.max(0.0));
        let (pos, dp) = eb_step_batch(pre, &pos_w, &positive[l]);
        let (neg, dn) = if l == depth {
            let neg_w = weights.mapv(|w| (-w).max(0.0));
            eb_step_batch(pre, &neg_w, &negative[l])
        } else {
            eb_step_batch(pre, &pos_w, &negative[l])
        };
        positive[l - 1] = pos;
        negative[l - 1] = neg;
        dropped_pos[l - 1] = dp;
        dropped_neg[l - 1] = dn;
    }

    // Contrast per sample, then average distributions over unflagged samples.
    let mut layers = Vec::with_capacity(depth + 1);
    for l in 0..=depth {
        let pos_mean = positive[l].mean_axis(Axis(0)).expect("nonempty batch");
        let neg_mean = negative[l].mean_axis(Axis(0)).expect("nonempty batch");
        let (contrastive, flagged) = if l == depth {
            (pos_mean.clone(), false)
        } else {
            let width = positive[l].ncols();
            let mut acc = Array1::zeros(width);
            let mut used = 0usize;
            for b in 0..batch {
                let mut diff = &positive[l].row(b) - &negative[l].row(b);
                diff.mapv_inplace(|v| v.max(0.0));
                let sum = diff.sum();
                if sum > 0.0 {
                    diff /= sum;
                    acc += &diff;
                    used += 1;
                }
            }
            if used == 0 {
                (Array1::zeros(width), true)
            } else {
                (acc / used as f64, false)
            }
        };
        layers.push(LayerMwp {
            positive: pos_mean,
            negative: neg_mean,
            contrastive,
            flagged,
            dropped_positive: dropped_pos[l].mean().unwrap_or(0.0),
            dropped_negative: dropped_neg[l].mean().unwrap_or(0.0),
        });
    }
    Ok(MwpMaps { layers })
}

/// Linearly rescales a nonnegative map to `[0, 255]` (max-normalized);
/// an all-zero map renders all-black.
pub fn render_heatmap(map: &Array1<f64>, width: usize, height: usize) -> Result<Vec<u8>> {
    if map.len() != width * height {
        return Err(Error::shape(
            "render_heatmap",
            format!("{} pixels", width * height),
            format!("{} pixels", map.len()),
        ));
    }
    let max = map.iter().cloned().fold(0.0, f64::max);
    if max <= 0.0 {
        return Ok(vec![0; map.len()]);
    }
    Ok(map
        .iter()
        .map(|&v| ((v.max(0.0) / max) * 255.0).round() as u8)
        .collect())
}
