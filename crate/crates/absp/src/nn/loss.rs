//! Softmax cross-entropy with max-subtraction for overflow safety.

use ndarray::Array2;

use crate::error::{Error, Result};

/// Mean loss over the batch plus per-sample logit gradients
/// (`softmax - onehot`, one row per sample).
#[derive(Debug, Clone)]
pub struct LossOutput {
    pub loss: f64,
    pub dlogits: Array2<f64>,
}

/// Row-wise softmax, computed as `exp(z - max(z)) / sum`.
pub fn softmax(logits: &Array2<f64>) -> Array2<f64> {
    let mut out = logits.clone();
    for mut row in out.rows_mut() {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - max).exp());
        let sum: f64 = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
    out
}

/// Cross-entropy of the true class under the row-wise softmax.
pub fn softmax_cross_entropy(logits: &Array2<f64>, labels: &[usize]) -> Result<LossOutput> {
    softmax_cross_entropy_masked(logits, labels, None)
}

/// Cross-entropy restricted to a subset of classes. With `mask = None` all
/// classes participate. With a mask, the softmax runs over the masked logits
/// only and gradients outside the mask are zero; labels must be members of
/// the mask.
pub fn softmax_cross_entropy_masked(
    logits: &Array2<f64>,
    labels: &[usize],
    mask: Option<&[usize]>,
) -> Result<LossOutput> {
    if labels.len() != logits.nrows() {
        return Err(Error::shape(
            "cross entropy labels",
            format!("{} labels", logits.nrows()),
            format!("{} labels", labels.len()),
        ));
    }
    let classes = logits.ncols();
    if let Some(mask) = mask {
        if let Some(&bad) = mask.iter().find(|&&c| c >= classes) {
            return Err(Error::LabelOutOfRange {
                label: bad,
                classes,
            });
        }
    }
    let mut dlogits = Array2::zeros(logits.raw_dim());
    let mut total = 0.0;
    for (b, &label) in labels.iter().enumerate() {
        if label >= classes {
            return Err(Error::LabelOutOfRange { label, classes });
        }
        if let Some(mask) = mask {
            if !mask.contains(&label) {
                return Err(Error::LabelOutOfRange {
                    label,
                    classes: mask.len(),
                });
            }
        }
        let row = logits.row(b);
        let active: Vec<usize> = match mask {
            Some(m) => m.to_vec(),
            None => (0..classes).collect(),
        };
        let max = active
            .iter()
            .map(|&c| row[c])
            .fold(f64::NEG_INFINITY, f64::max);
        let denom: f64 = active.iter().map(|&c| (row[c] - max).exp()).sum();
        total += -(row[label] - max - denom.ln());
        for &c in &active {
            let p = (row[c] - max).exp() / denom;
            dlogits[[b, c]] = p - if c == label { 1.0 } else { 0.0 };
        }
    }
    Ok(LossOutput {
        loss: total / labels.len() as f64,
        dlogits,
    })
}
