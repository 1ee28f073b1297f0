mod common;

use common::gradients::gradient_suite;
use common::{central_difference, rel_error, rng, uniform_tensor};
use nucprune::autonet::{
    build_toy_network, mse_loss, toy_layers, Activation, Head, Layer, Network,
};
use nucprune::tensor::{conv2d, Tensor};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

#[test]
fn primitives_match_finite_differences() {
    for r in gradient_suite(50, 11) {
        assert_eq!(r.shapes, 50);
        assert!(
            r.max_error < 1e-3,
            "{}: max relative error {:.3e}",
            r.name,
            r.max_error
        );
    }
}

#[test]
fn conv_is_linear_in_kernel() {
    let mut rng = rng(3);
    for _ in 0..20 {
        let x = uniform_tensor(&mut rng, &[3, 9, 7], -1.0, 1.0);
        let k1 = uniform_tensor(&mut rng, &[2, 3, 3, 3], -1.0, 1.0);
        let k2 = uniform_tensor(&mut rng, &[2, 3, 3, 3], -1.0, 1.0);
        let (a, b) = (
            rng.random_range(-2.0f32..2.0),
            rng.random_range(-2.0f32..2.0),
        );
        let zero = Tensor::zeros(&[2]);
        let mix = Tensor::new(
            k1.shape().to_vec(),
            k1.data()
                .iter()
                .zip(k2.data())
                .map(|(p, q)| a * p + b * q)
                .collect(),
        )
        .unwrap();
        let lhs = conv2d(&x, &mix, &zero).unwrap();
        let o1 = conv2d(&x, &k1, &zero).unwrap();
        let o2 = conv2d(&x, &k2, &zero).unwrap();
        for ((l, p), q) in lhs.data().iter().zip(o1.data()).zip(o2.data()) {
            assert!((l - (a * p + b * q)).abs() < 1e-5);
        }
    }
}

#[test]
fn repeated_calls_are_bit_identical() {
    let mut rng = rng(5);
    let x = uniform_tensor(&mut rng, &[1, 16, 16], 0.0, 1.0);
    let net = build_toy_network(Head::Sigmoid, 9);
    assert_eq!(net.forward(&x).unwrap(), net.forward(&x).unwrap());
}

/// The toy topology with every ReLU replaced by the identity. Only pooling
/// switches remain as kinks, and those are rare under small steps.
fn smooth_toy(head: Head, seed: u64) -> Network {
    let layers = toy_layers()
        .into_iter()
        .map(|l| match l {
            Layer::Conv {
                name,
                in_channels,
                out_channels,
                kernel,
                activation: Activation::Relu,
                prunable,
            } => Layer::Conv {
                name,
                in_channels,
                out_channels,
                kernel,
                activation: Activation::Identity,
                prunable,
            },
            other => other,
        })
        .collect();
    Network::new(head, layers, seed).unwrap()
}

/// Best-of-three-steps relative errors for six sampled entries of every
/// parameter. A step that straddles a switch is usually rescued by a smaller one.
fn network_fd_errors(net: &Network, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let x = uniform_tensor(rng, &[1, 8, 8], 0.0, 1.0);
    let target = uniform_tensor(rng, &[1, 8, 8], 0.0, 1.0);
    let (out, cache) = net.forward_train(&x).unwrap();
    let (_, g) = mse_loss(&out, &target).unwrap();
    let grads = net.backward(&cache, &g).unwrap();
    let mut errors = Vec::new();
    for name in net.param_names() {
        let p = net.param(&name).unwrap().clone();
        let scale = grads[&name]
            .data()
            .iter()
            .fold(0.0f64, |m, &v| m.max(v.abs() as f64));
        let floor = (1e-1 * scale).max(1e-9);
        let loss = |t: &Tensor| {
            let mut n = net.clone();
            n.set_param(&name, t.clone()).unwrap();
            mse_loss(&n.forward(&x).unwrap(), &target).unwrap().0
        };
        for _ in 0..6 {
            let i = rng.random_range(0..p.len());
            let analytic = grads[&name].data()[i] as f64;
            let best = [1e-2f32, 3e-3, 1e-3]
                .into_iter()
                .map(|step| rel_error(analytic, central_difference(&p, i, step, &loss), floor))
                .fold(f64::INFINITY, f64::min);
            errors.push(best);
        }
    }
    errors
}

#[test]
fn smooth_network_backward_matches_finite_differences() {
    let mut rng = rng(17);
    for head in [Head::Linear, Head::Sigmoid] {
        let errors = network_fd_errors(&smooth_toy(head, 4), &mut rng);
        let worst = errors.iter().copied().fold(0.0, f64::max);
        assert!(worst < 1e-3, "{head:?}: {worst:e}");
    }
}

/// With ReLUs and a linear head the MSE loss is exactly quadratic in any one
/// weight between activation switches. Entries whose loss along the axis is not
/// quadratic over the probed interval (nonzero third difference) straddle a
/// switch and are skipped; every other entry must match tightly.
#[test]
fn relu_network_backward_matches_finite_differences() {
    const STEP: f32 = 1e-3;
    let mut rng = rng(19);
    let net = build_toy_network(Head::Linear, 4);
    let x = uniform_tensor(&mut rng, &[1, 8, 8], 0.0, 1.0);
    let target = uniform_tensor(&mut rng, &[1, 8, 8], 0.0, 1.0);
    let (out, cache) = net.forward_train(&x).unwrap();
    let (_, g) = mse_loss(&out, &target).unwrap();
    let grads = net.backward(&cache, &g).unwrap();
    let (mut checked, mut skipped) = (0, 0);
    for name in net.param_names() {
        let p = net.param(&name).unwrap().clone();
        let scale = grads[&name]
            .data()
            .iter()
            .fold(0.0f64, |m, &v| m.max(v.abs() as f64));
        let floor = (1e-1 * scale).max(1e-9);
        for _ in 0..12 {
            let i = rng.random_range(0..p.len());
            let f: Vec<f64> = [-1.0f32, 0.0, 1.0, 2.0]
                .iter()
                .map(|&k| {
                    let mut q = p.clone();
                    q.data_mut()[i] += k * STEP;
                    let mut n = net.clone();
                    n.set_param(&name, q).unwrap();
                    mse_loss(&n.forward(&x).unwrap(), &target).unwrap().0
                })
                .collect();
            let third = f[3] - 3.0 * f[2] + 3.0 * f[1] - f[0];
            let analytic = grads[&name].data()[i] as f64;
            if third.abs() > 1e-3 * STEP as f64 * analytic.abs().max(floor) {
                skipped += 1;
                continue;
            }
            checked += 1;
            let numeric = (f[2] - f[0]) / 2.0 / STEP as f64;
            let err = rel_error(analytic, numeric, floor);
            assert!(
                err < 1e-3,
                "{name}[{i}]: analytic {analytic:e} numeric {numeric:e}"
            );
        }
    }
    assert!(checked >= skipped, "{skipped} skipped vs {checked} checked");
}
