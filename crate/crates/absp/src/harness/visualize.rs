//! Attention-map visualization: noisy inputs alongside contrastive-MWP
//! heatmaps for the predicted and runner-up labels.

use std::path::{Path, PathBuf};

use crate::attention::{contrastive_mwp, render_heatmap};
use crate::error::{Error, Result};
use crate::pgm::write_pgm;
use crate::tasks::{add_gaussian_noise, Dataset};
use crate::checkpoint;

/// For each of the first `count` samples, writes a PGM triplet: the noisy
/// input, the predicted-label attention map, and the runner-up-label map.
/// Returns the written paths in order.
pub fn visualize_attention(
    checkpoint_path: &Path,
    dataset: &Dataset,
    count: usize,
    sigma: f64,
    noise_seed: u64,
    out_dir: &Path,
) -> Result<Vec<PathBuf>> {
    let (net, _) = checkpoint::load(checkpoint_path)?;
    if net.input_dim() != dataset.pixel_count() {
        return Err(Error::shape(
            "visualize checkpoint",
            format!("{} input pixels", dataset.pixel_count()),
            format!("{} input pixels", net.input_dim()),
        ));
    }
    if count > dataset.len() {
        return Err(Error::InvalidConfig(format!(
            "requested {count} samples but the dataset has {}",
            dataset.len()
        )));
    }
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir.display().to_string(), e))?;

    let noisy = add_gaussian_noise(dataset, sigma, noise_seed)?;
    let (width, height) = (noisy.cols(), noisy.rows());
    let mut written = Vec::with_capacity(count * 3);

    for i in 0..count {
        let image = noisy
            .images()
            .row(i)
            .insert_axis(ndarray::Axis(0))
            .to_owned();
        let trace = net.forward(&image)?;
        let logits = trace.logits().row(0);
        let (predicted, runner_up) = top_two(logits.as_slice().unwrap());

        let input_pixels: Vec<u8> = image
            .iter()
            .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect();
        let input_path = out_dir.join(format!("sample{i:03}_input.pgm"));
        write_pgm(&input_path, width, height, &input_pixels)?;
        written.push(input_path);

        for (tag, target) in [("pred", predicted), ("runnerup", runner_up)] {
            let maps = contrastive_mwp(&net, &trace, 0, target)?;
            let pixels = render_heatmap(maps.input_map(), width, height)?;
            let path = out_dir.join(format!("sample{i:03}_{tag}{target}.pgm"));
            write_pgm(&path, width, height, &pixels)?;
            written.push(path);
        }
    }
    Ok(written)
}

/// Indices of the largest and second-largest logits.
fn top_two(logits: &[f64]) -> (usize, usize) {
    let mut best = 0usize;
    for (c, &v) in logits.iter().enumerate() {
        if v > logits[best] {
            best = c;
        }
    }
    let mut second = usize::MAX;
    for (c, &v) in logits.iter().enumerate() {
        if c == best {
            continue;
        }
        if second == usize::MAX || v > logits[second] {
            second = c;
        }
    }
    (best, second)
}
