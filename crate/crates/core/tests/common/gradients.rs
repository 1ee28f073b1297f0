//! Central finite-difference checks of every differentiable primitive.

use nucprune::autonet::{dice_loss, mse_loss};
use nucprune::tensor::{
    conv2d, conv2d_backward, identity, identity_backward, maxpool2, maxpool2_backward, relu,
    relu_backward, sigmoid, sigmoid_backward, upsample_nearest2, upsample_nearest2_backward,
    Tensor,
};
use rand::Rng;

use super::{
    distinct_tensor, kink_free_tensor, max_fd_error, rng, uniform_tensor, weighted_sum, FD_STEP,
};

/// Largest relative error seen for one primitive over all shapes.
#[derive(Debug, Clone)]
pub struct GradientResult {
    pub name: &'static str,
    pub shapes: usize,
    pub max_error: f64,
}

fn record(results: &mut Vec<GradientResult>, name: &'static str, err: f64) {
    match results.iter_mut().find(|r| r.name == name) {
        Some(r) => {
            r.shapes += 1;
            r.max_error = r.max_error.max(err);
        }
        None => results.push(GradientResult {
            name,
            shapes: 1,
            max_error: err,
        }),
    }
}

/// Runs `shapes` random shapes (at most 4x16x16) through every primitive.
pub fn gradient_suite(shapes: usize, seed: u64) -> Vec<GradientResult> {
    let mut rng = rng(seed);
    let mut out = Vec::new();
    for _ in 0..shapes {
        let c_in = rng.random_range(1..=4);
        let c_out = rng.random_range(1..=4);
        let h = rng.random_range(1..=16);
        let w = rng.random_range(1..=16);
        let k = [1, 3, 5][rng.random_range(0..3)];

        // conv2d: input, kernel and bias gradients
        let x = uniform_tensor(&mut rng, &[c_in, h, w], -1.0, 1.0);
        let kern = uniform_tensor(&mut rng, &[c_out, c_in, k, k], -1.0, 1.0);
        let bias = uniform_tensor(&mut rng, &[c_out], -1.0, 1.0);
        let r = uniform_tensor(&mut rng, &[c_out, h, w], -1.0, 1.0);
        let g = conv2d_backward(&x, &kern, &r, None).unwrap();
        let rd = r.data().to_vec();
        record(
            &mut out,
            "conv2d/input",
            max_fd_error(&x, &g.input, 0.5, |t| {
                weighted_sum(&conv2d(t, &kern, &bias).unwrap(), &rd)
            }),
        );
        record(
            &mut out,
            "conv2d/kernel",
            max_fd_error(&kern, &g.kernel, 0.5, |t| {
                weighted_sum(&conv2d(&x, t, &bias).unwrap(), &rd)
            }),
        );
        record(
            &mut out,
            "conv2d/bias",
            max_fd_error(&bias, &g.bias, 0.5, |t| {
                weighted_sum(&conv2d(&x, &kern, t).unwrap(), &rd)
            }),
        );

        // maxpool2 needs even sides
        let (ph, pw) = (2 * h.div_ceil(2).min(8), 2 * w.div_ceil(2).min(8));
        let x = distinct_tensor(&mut rng, &[c_in, ph, pw]);
        let r = uniform_tensor(&mut rng, &[c_in, ph / 2, pw / 2], -1.0, 1.0);
        let rd = r.data().to_vec();
        let gx = maxpool2_backward(&x, &r).unwrap();
        record(
            &mut out,
            "maxpool2",
            max_fd_error(&x, &gx, FD_STEP, |t| {
                weighted_sum(&maxpool2(t).unwrap(), &rd)
            }),
        );

        let uh = h.div_ceil(2);
        let uw = w.div_ceil(2);
        let x = uniform_tensor(&mut rng, &[c_in, uh, uw], -1.0, 1.0);
        let r = uniform_tensor(&mut rng, &[c_in, 2 * uh, 2 * uw], -1.0, 1.0);
        let rd = r.data().to_vec();
        let gx = upsample_nearest2_backward(&r).unwrap();
        record(
            &mut out,
            "upsample_nearest2",
            max_fd_error(&x, &gx, FD_STEP, |t| {
                weighted_sum(&upsample_nearest2(t).unwrap(), &rd)
            }),
        );

        let shape = [c_in, h, w];
        let r = uniform_tensor(&mut rng, &shape, -1.0, 1.0);
        let rd = r.data().to_vec();
        let x = kink_free_tensor(&mut rng, &shape);
        record(
            &mut out,
            "relu",
            max_fd_error(&x, &relu_backward(&x, &r), FD_STEP, |t| {
                weighted_sum(&relu(t), &rd)
            }),
        );
        let x = uniform_tensor(&mut rng, &shape, -4.0, 4.0);
        record(
            &mut out,
            "sigmoid",
            max_fd_error(&x, &sigmoid_backward(&sigmoid(&x), &r), 1e-2, |t| {
                weighted_sum(&sigmoid(t), &rd)
            }),
        );
        record(
            &mut out,
            "identity",
            max_fd_error(&x, &identity_backward(&r), FD_STEP, |t| {
                weighted_sum(&identity(t), &rd)
            }),
        );

        let pred = uniform_tensor(&mut rng, &[1, h, w], 0.01, 0.99);
        let target = Tensor::new(
            vec![1, h, w],
            (0..h * w)
                .map(|_| if rng.random_bool(0.4) { 1.0 } else { 0.0 })
                .collect(),
        )
        .unwrap();
        let (_, gd) = dice_loss(&pred, &target).unwrap();
        record(
            &mut out,
            "dice_loss",
            max_fd_error(&pred, &gd, FD_STEP, |t| dice_loss(t, &target).unwrap().0),
        );
        let target = uniform_tensor(&mut rng, &[1, h, w], 0.0, 1.0);
        let (_, gm) = mse_loss(&pred, &target).unwrap();
        record(
            &mut out,
            "mse_loss",
            max_fd_error(&pred, &gm, FD_STEP, |t| mse_loss(t, &target).unwrap().0),
        );
    }
    out
}
