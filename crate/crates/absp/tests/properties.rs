//! Property tests for the numerical invariants the engine relies on.

use absp::attention::{contrastive_mwp, eb_step, MwpMaps};
use absp::nn::{softmax, softmax_cross_entropy, Activation, DenseNet, Layer};
use absp::plasticity::ImportanceStore;
use absp::tasks::{add_gaussian_noise, Dataset, Split};
use ndarray::{Array1, Array2};
use proptest::prelude::*;

/// Small positive activations and arbitrary-sign weights for one EB step.
fn eb_inputs() -> impl Strategy<Value = (Vec<f64>, Vec<Vec<f64>>, Vec<f64>)> {
    (2usize..6, 2usize..6).prop_flat_map(|(lower, upper)| {
        (
            proptest::collection::vec(0.0..2.0f64, lower),
            proptest::collection::vec(proptest::collection::vec(-1.5..1.5f64, lower), upper),
            proptest::collection::vec(0.0..1.0f64, upper),
        )
    })
}

proptest! {
    /// Each upper neuron with positive mass and at least one positive
    /// contribution distributes exactly its own mass.
    #[test]
    fn eb_step_is_stochastic_per_upper_neuron((pre, weights, upper) in eb_inputs()) {
        let lower_n = pre.len();
        let pre = Array1::from_vec(pre);
        let weights = Array2::from_shape_vec(
            (upper.len(), lower_n),
            weights.into_iter().flatten().collect(),
        ).unwrap();
        for (i, &mass) in upper.iter().enumerate() {
            if mass == 0.0 {
                continue;
            }
            let mut one = Array1::zeros(upper.len());
            one[i] = mass;
            let (lower, dropped) = eb_step(pre.view(), weights.view(), one.view());
            let total = lower.sum() + dropped;
            prop_assert!((total - mass).abs() < 1e-9, "mass {mass} redistributed to {total}");
        }
    }

    /// With all-positive weights no mass is ever dropped: layer sums are
    /// conserved exactly.
    #[test]
    fn eb_step_conserves_mass_for_positive_weights((pre, weights, upper) in eb_inputs()) {
        let lower_n = pre.len();
        let mut pre = Array1::from_vec(pre);
        // Keep activations strictly positive so denominators cannot vanish.
        pre.mapv_inplace(|v| v + 0.05);
        let weights = Array2::from_shape_vec(
            (upper.len(), lower_n),
            weights.into_iter().flatten().map(|w: f64| w.abs() + 0.01).collect(),
        ).unwrap();
        let upper = Array1::from_vec(upper);
        let (lower, dropped) = eb_step(pre.view(), weights.view(), upper.view());
        prop_assert_eq!(dropped, 0.0);
        prop_assert!((lower.sum() - upper.sum()).abs() < 1e-9);
    }

    /// Mixed signs: the conservation deficit equals the dropped mass.
    #[test]
    fn eb_step_deficit_equals_dropped_mass((pre, weights, upper) in eb_inputs()) {
        let lower_n = pre.len();
        let pre = Array1::from_vec(pre);
        let weights = Array2::from_shape_vec(
            (upper.len(), lower_n),
            weights.into_iter().flatten().collect(),
        ).unwrap();
        let upper = Array1::from_vec(upper);
        let (lower, dropped) = eb_step(pre.view(), weights.view(), upper.view());
        prop_assert!((upper.sum() - lower.sum() - dropped).abs() < 1e-9);
    }

    /// Rescaling one upper neuron's incoming weight column by c > 0 leaves
    /// its conditional distribution unchanged.
    #[test]
    fn eb_conditionals_are_scale_invariant(
        (pre, weights, _) in eb_inputs(),
        scale in 0.01..50.0f64,
        pick in any::<prop::sample::Index>(),
    ) {
        let lower_n = pre.len();
        let pre = Array1::from_vec(pre).mapv(|v| v + 0.05);
        let weights = Array2::from_shape_vec(
            (3, lower_n),
            weights.into_iter().flatten().take(3 * lower_n)
                .chain(std::iter::repeat(0.5)).take(3 * lower_n).collect(),
        ).unwrap();
        let i = pick.index(3);
        let mut one = Array1::zeros(3);
        one[i] = 1.0;
        let (base, dropped_a) = eb_step(pre.view(), weights.view(), one.view());
        let mut scaled = weights.clone();
        scaled.row_mut(i).mapv_inplace(|w| w * scale);
        let (after, dropped_b) = eb_step(pre.view(), scaled.view(), one.view());
        prop_assert_eq!(dropped_a, dropped_b);
        for (a, b) in base.iter().zip(after.iter()) {
            prop_assert!((a - b).abs() < 1e-9);
        }
    }

    /// Softmax rows are probability vectors; cross-entropy is nonnegative.
    #[test]
    fn softmax_rows_normalize(
        logits in proptest::collection::vec(-50.0..50.0f64, 3..30),
        label in 0usize..3,
    ) {
        let cols = logits.len() / 3;
        let logits = Array2::from_shape_vec((3, cols), logits[..3 * cols].to_vec()).unwrap();
        let sm = softmax(&logits);
        for row in sm.rows() {
            prop_assert!((row.sum() - 1.0).abs() < 1e-9);
        }
        let labels = vec![label.min(cols - 1); 3];
        let out = softmax_cross_entropy(&logits, &labels).unwrap();
        prop_assert!(out.loss >= 0.0);
        for row in out.dlogits.rows() {
            prop_assert!(row.sum().abs() < 1e-9);
        }
    }

    /// Oja updates never drive importance negative while P_c stays in [0, 1]
    /// and epsilon <= 1; with constant maps the distance to the fixed point
    /// contracts monotonically.
    #[test]
    fn oja_is_nonnegative_and_contracts(
        p in 0.0..1.0f64,
        q in 0.001..1.0f64,
        eps in 0.001..1.0f64,
        steps in 1usize..200,
    ) {
        let net = DenseNet::new(vec![Layer::new(
            Array2::from_elem((1, 1), 1.0),
            Array1::zeros(1),
            Activation::Identity,
        ).unwrap()]).unwrap();
        let mut store = ImportanceStore::new(&net, 1.0, eps);
        let maps = MwpMaps::from_contrastive(vec![
            Array1::from_elem(1, p),
            Array1::from_elem(1, q),
        ]);
        let target = p / q;
        let mut last_dist = target;
        for _ in 0..steps {
            store.oja_update(&maps).unwrap();
            let gamma = store.gamma()[0][[0, 0]];
            prop_assert!(gamma >= 0.0, "gamma went negative: {gamma}");
            let dist = (gamma - target).abs();
            prop_assert!(dist <= last_dist + 1e-12, "distance grew: {dist} > {last_dist}");
            last_dist = dist;
        }
    }

    /// Clamped noise keeps intensities in range for any sigma.
    #[test]
    fn noise_respects_intensity_bounds(sigma in 0.0..1.5f64, seed in any::<u64>()) {
        let images = Array2::from_shape_fn((4, 9), |(i, j)| ((i + j) % 10) as f64 / 9.0);
        let data = Dataset::from_parts(images, vec![0, 1, 2, 3], Split::Test, 3, 3).unwrap();
        let noisy = add_gaussian_noise(&data, sigma, seed).unwrap();
        prop_assert!(noisy.images().iter().all(|&v| (0.0..=1.0).contains(&v)));
    }
}

/// Rebuilds a net with one weight entry shifted by `delta`.
fn with_weight_shift(net: &DenseNet, layer: usize, idx: usize, delta: f64) -> DenseNet {
    let layers = net
        .layers()
        .iter()
        .enumerate()
        .map(|(l, src)| {
            let mut weights = src.weights().clone();
            if l == layer {
                weights.as_slice_mut().unwrap()[idx] += delta;
            }
            Layer::new(weights, src.biases().clone(), src.activation()).unwrap()
        })
        .collect();
    DenseNet::new(layers).unwrap()
}

/// The penalty vanishes exactly when weights sit on their anchors wherever
/// the frozen importance is positive; touching an unimportant weight is
/// free.
#[test]
fn penalty_zero_iff_anchored_where_important() {
    let net = DenseNet::kaiming_seeded(&[4, 3, 2], 31).unwrap();
    let mut store = ImportanceStore::new(&net, 1.0, 0.1);
    let x = Array2::from_shape_fn((2, 4), |(i, j)| 0.15 + 0.1 * ((i + 2 * j) % 4) as f64);
    let trace = net.forward(&x).unwrap();
    let maps = absp::attention::batch_contrastive_mwp(&net, &trace, &[0, 1]).unwrap();
    store.oja_update(&maps).unwrap();
    store.consolidate_task(&net);

    // At the anchor: exactly zero.
    assert_eq!(store.consolidation_penalty(&net).unwrap().0, 0.0);

    let importance = &store.tasks()[0].importance[0];
    let (mut zero_idx, mut pos_idx) = (None, None);
    for (idx, &g) in importance.iter().enumerate() {
        if g == 0.0 && zero_idx.is_none() {
            zero_idx = Some(idx);
        }
        if g > 0.0 && pos_idx.is_none() {
            pos_idx = Some(idx);
        }
    }

    // Moving a gamma-zero weight costs nothing.
    if let Some(idx) = zero_idx {
        let moved = with_weight_shift(&net, 0, idx, 5.0);
        assert_eq!(store.consolidation_penalty(&moved).unwrap().0, 0.0);
    }

    // Moving an important weight costs.
    let idx = pos_idx.expect("attention pass should mark some weight important");
    let moved = with_weight_shift(&net, 0, idx, 0.5);
    assert!(store.consolidation_penalty(&moved).unwrap().0 > 0.0);
}

/// Contrastive maps of every unflagged layer are probability vectors.
#[test]
fn contrastive_layers_normalize_or_flag() {
    for seed in 0..20u64 {
        let net = DenseNet::kaiming_seeded(&[10, 7, 5, 4], seed).unwrap();
        let x = Array2::from_shape_fn((1, 10), |(_, j)| ((j * 13 + seed as usize) % 10) as f64 / 10.0);
        let trace = net.forward(&x).unwrap();
        let maps = contrastive_mwp(&net, &trace, 0, (seed % 4) as usize).unwrap();
        for l in 0..=maps.depth() {
            let layer = maps.layer(l);
            if layer.flagged {
                assert!(layer.contrastive.iter().all(|&v| v == 0.0));
            } else {
                assert!(
                    (layer.contrastive.sum() - 1.0).abs() < 1e-6,
                    "layer {l} sums to {}",
                    layer.contrastive.sum()
                );
            }
            assert!(layer
                .contrastive
                .iter()
                .all(|&v| (0.0..=1.0 + 1e-12).contains(&v)));
        }
    }
}
