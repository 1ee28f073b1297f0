mod common;

use std::collections::BTreeSet;

use common::{
    chain_network, check_schedule, exact_quota, oracle_layerwise, oracle_networkwide,
    pruned_positions, random_chain, rng,
};
use nucprune::autonet::{build_toy_network, weight_name, Head, Sample};
use nucprune::pruner::{
    iter_mag_prune, iteration_count, prune_layerwise, prune_networkwide, theoretical_speedup,
    PruneConfig, PruneError, PruneMethod,
};
use nucprune::tensor::Tensor;
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::Rng;

/// Fractions `num/den` with small denominators, plus the halving schedule.
fn random_target(rng: &mut impl Rng) -> (u64, u64) {
    if rng.random_bool(0.5) {
        let k = rng.random_range(1..=5u32);
        ((1 << k) - 1, 1 << k)
    } else {
        let den = rng.random_range(2..=20u64);
        (rng.random_range(0..den), den)
    }
}

#[test]
fn masks_match_sort_oracles_on_random_chains() {
    let mut rng = rng(101);
    let mut connectivity_losses = 0;
    for case in 0..100 {
        let (channels, layers) = random_chain(&mut rng);
        let net = chain_network(&channels, &layers);
        let (num, den) = random_target(&mut rng);
        let target = num as f64 / den as f64;

        let quotas: Vec<usize> = layers
            .iter()
            .map(|w| exact_quota(num, den, w.len()))
            .collect();
        match prune_layerwise(&net, target) {
            Ok(masks) => {
                for (l, w) in layers.iter().enumerate() {
                    assert!(quotas[l] < w.len());
                    assert_eq!(
                        pruned_positions(&masks, l),
                        oracle_layerwise(w, quotas[l]),
                        "case {case} layer {l}"
                    );
                }
            }
            Err(PruneError::ConnectivityLoss { layer, .. }) => {
                connectivity_losses += 1;
                let first = quotas
                    .iter()
                    .zip(&layers)
                    .position(|(&q, w)| q >= w.len())
                    .unwrap();
                assert_eq!(layer, weight_name(&format!("l{first}")));
            }
            Err(e) => panic!("case {case}: {e}"),
        }

        let total: usize = layers.iter().map(Vec::len).sum();
        let masks = prune_networkwide(&net, target).unwrap();
        let expected = oracle_networkwide(&layers, exact_quota(num, den, total));
        let actual: BTreeSet<(usize, usize)> = (0..layers.len())
            .flat_map(|l| pruned_positions(&masks, l).into_iter().map(move |i| (l, i)))
            .collect();
        assert_eq!(actual, expected, "case {case}");
    }
    assert!(connectivity_losses > 0);
}

#[test]
fn two_weight_layer_loses_connectivity_only_layerwise() {
    let channels = [2, 1, 16];
    let layers = vec![
        vec![0.9, -0.4],
        (0..16).map(|i| i as f32 * 0.1 - 0.75).collect(),
    ];
    let net = chain_network(&channels, &layers);
    let cfg = |method| PruneConfig {
        method,
        compression_ratio: 4,
        retrain: None,
    };
    let err = iter_mag_prune(&net, &cfg(PruneMethod::LayerWise), &[]).unwrap_err();
    assert!(matches!(err, PruneError::ConnectivityLoss { ref layer, .. } if layer == "l0.weight"));
    for cr in [2, 4, 8, 16] {
        let cps = iter_mag_prune(
            &net,
            &PruneConfig {
                compression_ratio: cr,
                ..cfg(PruneMethod::NetworkWide)
            },
            &[],
        )
        .unwrap();
        assert_eq!(cps.len() as u32, iteration_count(cr).unwrap());
    }
}

#[test]
fn schedule_reaches_target_without_resurrection() {
    let mut rng = rng(7);
    for _ in 0..20 {
        let (channels, layers) = random_chain(&mut rng);
        let net = chain_network(&channels, &layers);
        let smallest = layers.iter().map(Vec::len).min().unwrap();
        for method in [PruneMethod::LayerWise, PruneMethod::NetworkWide] {
            for cr in [2u64, 4, 8, 16] {
                if method == PruneMethod::LayerWise && exact_quota(cr - 1, cr, smallest) >= smallest
                {
                    continue;
                }
                check_schedule(&net, method, cr, &[], 0);
            }
        }
    }
}

#[test]
fn retraining_keeps_pruned_weights_at_zero() {
    let mut rng = rng(9);
    let data: Vec<Sample> = (0..2)
        .map(|_| {
            let input = common::uniform_tensor(&mut rng, &[1, 8, 8], 0.0, 1.0);
            let target = input.map(|v| if v > 0.5 { 1.0 } else { 0.0 });
            Sample {
                image: input,
                target,
            }
        })
        .collect();
    let net = build_toy_network(Head::Sigmoid, 2);
    for method in [PruneMethod::LayerWise, PruneMethod::NetworkWide] {
        check_schedule(&net, method, 8, &data, 2);
    }
}

fn shuffled_within_layers(
    net: &nucprune::autonet::Network,
    seed: u64,
) -> nucprune::autonet::Network {
    let mut rng = rng(seed);
    let mut out = net.clone();
    for name in net.prunable_names() {
        let t = net.param(&name).unwrap();
        let mut data = t.data().to_vec();
        data.shuffle(&mut rng);
        out.set_param(&name, Tensor::new(t.shape().to_vec(), data).unwrap())
            .unwrap();
    }
    out
}

#[test]
fn toy_speedup_band_and_method_ordering() {
    for seed in 0..3 {
        let net = build_toy_network(Head::Sigmoid, seed);
        for k in 1..=5u32 {
            let cr = 1u64 << k;
            let target = 1.0 - 1.0 / cr as f64;
            let lw =
                theoretical_speedup(&net, &prune_layerwise(&net, target).unwrap(), [1, 64, 64])
                    .unwrap();
            assert!(
                lw.speedup <= cr as f64 && lw.speedup >= 0.9 * cr as f64,
                "CR {cr}: {}",
                lw.speedup
            );
            let nw =
                theoretical_speedup(&net, &prune_networkwide(&net, target).unwrap(), [1, 64, 64])
                    .unwrap();
            if cr >= 4 {
                assert!(
                    nw.speedup < lw.speedup,
                    "CR {cr}: {} vs {}",
                    nw.speedup,
                    lw.speedup
                );
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn speedup_ignores_weight_order_within_layers(seed in 0u64..1000, k in 1u32..=5) {
        let net = build_toy_network(Head::Linear, seed);
        let shuffled = shuffled_within_layers(&net, seed ^ 0x5eed);
        let target = 1.0 - 0.5f64.powi(k as i32);
        for method in [PruneMethod::LayerWise, PruneMethod::NetworkWide] {
            let prune = |n| match method {
                PruneMethod::LayerWise => prune_layerwise(n, target),
                PruneMethod::NetworkWide => prune_networkwide(n, target),
            };
            let a = theoretical_speedup(&net, &prune(&net).unwrap(), [1, 32, 32]).unwrap();
            let b = theoretical_speedup(&shuffled, &prune(&shuffled).unwrap(), [1, 32, 32]).unwrap();
            prop_assert_eq!(a, b);
        }
    }

    #[test]
    fn higher_targets_only_add_pruned_weights(seed in 0u64..1000, a in 0u32..20, b in 0u32..20) {
        let (lo, hi) = (a.min(b) as f64 / 20.0, a.max(b) as f64 / 20.0);
        let mut rng = rng(seed);
        let (channels, layers) = random_chain(&mut rng);
        let net = chain_network(&channels, &layers);
        let low = prune_networkwide(&net, lo).unwrap();
        let mut staged = net.clone();
        staged.install_masks(low.clone()).unwrap();
        let high = prune_networkwide(&staged, hi).unwrap();
        for (name, m) in &low {
            for (&before, &after) in m.bits().iter().zip(high[name].bits()) {
                prop_assert!(before || !after);
            }
        }
        let total: usize = layers.iter().map(Vec::len).sum();
        let pruned: usize = high.values().map(|m| m.pruned()).sum();
        prop_assert_eq!(pruned, exact_quota(a.max(b) as u64, 20, total).max(exact_quota(a.min(b) as u64, 20, total)));
    }

    #[test]
    fn layerwise_speedup_matches_kept_counts(seed in 0u64..1000, k in 1u32..=5) {
        let mut rng = rng(seed);
        let (channels, layers) = random_chain(&mut rng);
        let net = chain_network(&channels, &layers);
        let cr = 1u64 << k;
        let target = 1.0 - 1.0 / cr as f64;
        match prune_layerwise(&net, target) {
            Ok(masks) => {
                let kept: u64 = layers.iter().map(|w| (w.len() - exact_quota(cr - 1, cr, w.len())) as u64).sum();
                let dense: u64 = layers.iter().map(|w| w.len() as u64).sum();
                let r = theoretical_speedup(&net, &masks, [channels[0], 4, 4]).unwrap();
                prop_assert_eq!(r.sparse_flops, 16 * kept);
                prop_assert_eq!(r.dense_flops, 16 * dense);
                prop_assert!(r.speedup >= cr as f64);
            }
            Err(e) => {
                let lost = matches!(e, PruneError::ConnectivityLoss { .. });
                prop_assert!(lost, "{}", e);
            }
        }
    }
}
