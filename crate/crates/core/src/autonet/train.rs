use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{cosine_lr, dice_loss, mse_loss, AdamState, AutonetError, Head, Network};
use crate::tensor::Tensor;

/// One training pair: a `[C, H, W]` image and a `[1, H, W]` target.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub image: Tensor,
    pub target: Tensor,
}

/// Stop when the best epoch loss has not improved by a relative
/// `min_rel_improvement` for `patience` consecutive epochs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EarlyStop {
    pub patience: usize,
    pub min_rel_improvement: f64,
}

impl Default for EarlyStop {
    fn default() -> Self {
        Self {
            patience: 20,
            min_rel_improvement: 1e-4,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub initial_lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub min_lr: f64,
    pub seed: u64,
    pub augment_flips: bool,
    pub early_stop: Option<EarlyStop>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            initial_lr: 1e-3,
            batch_size: 2,
            epochs: 300,
            min_lr: 0.0,
            seed: 0,
            augment_flips: true,
            early_stop: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), AutonetError> {
        if self.epochs == 0 {
            return Err(AutonetError::Config("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(AutonetError::Config("batch size must be at least 1".into()));
        }
        if !(self.initial_lr.is_finite() && self.initial_lr > 0.0) {
            return Err(AutonetError::Config(format!(
                "learning rate {} must be positive",
                self.initial_lr
            )));
        }
        if !(0.0..=self.initial_lr).contains(&self.min_lr) {
            return Err(AutonetError::Config(format!(
                "min lr {} must lie in [0, {}]",
                self.min_lr, self.initial_lr
            )));
        }
        Ok(())
    }
}

fn check_samples(head: Head, data: &[Sample]) -> Result<(), AutonetError> {
    if data.is_empty() {
        return Err(AutonetError::EmptyDataset);
    }
    for (index, s) in data.iter().enumerate() {
        let bad = |reason: String| AutonetError::BadSample { index, reason };
        let (is, ts) = (s.image.shape(), s.target.shape());
        if is.len() != 3 || ts.len() != 3 || ts[0] != 1 || is[1..] != ts[1..] {
            return Err(bad(format!(
                "image {is:?} and target {ts:?} are incompatible"
            )));
        }
        if !s.image.is_finite() || !s.target.is_finite() {
            return Err(bad("non-finite values".into()));
        }
        if head == Head::Sigmoid && s.target.data().iter().any(|&v| v != 0.0 && v != 1.0) {
            return Err(bad("segmentation targets must be binary".into()));
        }
    }
    Ok(())
}

/// Trains `net` in place and returns the mean loss of every epoch.
///
/// Mini-batches are drawn from a seeded shuffle; with `augment_flips` each
/// sample is mirrored horizontally and vertically with probability 0.5 each.
/// Installed masks are enforced after every optimizer step.
pub fn train(
    net: &mut Network,
    data: &[Sample],
    cfg: &TrainConfig,
) -> Result<Vec<f64>, AutonetError> {
    cfg.validate()?;
    check_samples(net.head(), data)?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = AdamState::new();
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best = f64::INFINITY;
    let mut stale = 0usize;

    for epoch in 0..cfg.epochs {
        let lr = cosine_lr(epoch, cfg.epochs, cfg.initial_lr, cfg.min_lr)? as f32;
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0f64;
        for batch in order.chunks(cfg.batch_size) {
            let scale = 1.0 / batch.len() as f32;
            let mut acc: BTreeMap<String, Tensor> = BTreeMap::new();
            for &i in batch {
                let (image, target) = if cfg.augment_flips {
                    augment(&data[i], rng.random_bool(0.5), rng.random_bool(0.5))
                } else {
                    (data[i].image.clone(), data[i].target.clone())
                };
                let (out, cache) = net.forward_train(&image)?;
                let (loss, grad) = match net.head() {
                    Head::Sigmoid => dice_loss(&out, &target)?,
                    Head::Linear => mse_loss(&out, &target)?,
                };
                epoch_loss += loss;
                for (name, g) in net.backward(&cache, &grad)? {
                    match acc.get_mut(&name) {
                        Some(a) => a
                            .data_mut()
                            .iter_mut()
                            .zip(g.data())
                            .for_each(|(a, b)| *a += scale * b),
                        None => {
                            acc.insert(name, g.map(|v| scale * v));
                        }
                    }
                }
            }
            net.mask_gradients(&mut acc);
            adam.step(net.params_mut(), &acc, lr);
            net.apply_masks();
        }
        let mean = epoch_loss / data.len() as f64;
        if !mean.is_finite() {
            return Err(AutonetError::NonFinite(epoch));
        }
        history.push(mean);

        if let Some(es) = cfg.early_stop {
            if best - mean > es.min_rel_improvement * best.abs() || !best.is_finite() {
                best = mean;
                stale = 0;
            } else {
                stale += 1;
                if stale >= es.patience {
                    break;
                }
            }
        }
    }
    Ok(history)
}

fn augment(s: &Sample, horizontal: bool, vertical: bool) -> (Tensor, Tensor) {
    let (mut x, mut y) = (s.image.clone(), s.target.clone());
    if horizontal {
        x = x.flip_horizontal();
        y = y.flip_horizontal();
    }
    if vertical {
        x = x.flip_vertical();
        y = y.flip_vertical();
    }
    (x, y)
}
