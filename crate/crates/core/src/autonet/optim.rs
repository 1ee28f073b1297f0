use std::collections::BTreeMap;
use std::f64::consts::PI;

use super::AutonetError;
use crate::tensor::Tensor;

/// Cosine annealing from `lr0` at epoch 0 to `lr_min` at `total_epochs`.
pub fn cosine_lr(
    epoch: usize,
    total_epochs: usize,
    lr0: f64,
    lr_min: f64,
) -> Result<f64, AutonetError> {
    if total_epochs == 0 || epoch > total_epochs {
        return Err(AutonetError::EpochOutOfRange {
            epoch,
            total: total_epochs,
        });
    }
    let phase = PI * epoch as f64 / total_epochs as f64;
    Ok(lr_min + 0.5 * (lr0 - lr_min) * (1.0 + phase.cos()))
}

/// Adam moments keyed by parameter name.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
    step: u64,
    first: BTreeMap<String, Tensor>,
    second: BTreeMap<String, Tensor>,
}

impl Default for AdamState {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            first: BTreeMap::new(),
            second: BTreeMap::new(),
        }
    }
}

impl AdamState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One bias-corrected Adam update of every parameter that has a gradient.
    pub fn step(
        &mut self,
        params: &mut BTreeMap<String, Tensor>,
        grads: &BTreeMap<String, Tensor>,
        lr: f32,
    ) {
        self.step += 1;
        let t = self.step.min(i32::MAX as u64) as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
        for (name, g) in grads {
            let Some(p) = params.get_mut(name) else {
                continue;
            };
            let m = self
                .first
                .entry(name.clone())
                .or_insert_with(|| Tensor::zeros(p.shape()));
            let v = self
                .second
                .entry(name.clone())
                .or_insert_with(|| Tensor::zeros(p.shape()));
            for (((w, &gi), mi), vi) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *mi = b1 * *mi + (1.0 - b1) * gi;
                *vi = b2 * *vi + (1.0 - b2) * gi * gi;
                let m_hat = *mi / c1;
                let v_hat = *vi / c2;
                *w -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cosine_endpoints() {
        assert_eq!(cosine_lr(0, 10, 1e-3, 1e-5).unwrap(), 1e-3);
        assert!((cosine_lr(10, 10, 1e-3, 1e-5).unwrap() - 1e-5).abs() < 1e-18);
        assert!((cosine_lr(5, 10, 1e-3, 1e-5).unwrap() - (1e-3 + 1e-5) / 2.0).abs() < 1e-15);
        assert!(cosine_lr(11, 10, 1e-3, 0.0).is_err());
        assert!(cosine_lr(0, 0, 1e-3, 0.0).is_err());
    }

    fn single(name: &str, v: &[f32]) -> BTreeMap<String, Tensor> {
        BTreeMap::from([(
            name.to_string(),
            Tensor::new(vec![v.len()], v.to_vec()).unwrap(),
        )])
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = single("w", &[0.5, -1.0, 2.0]);
        let before = p.clone();
        AdamState::new().step(&mut p, &single("w", &[0.0; 3]), 1e-3);
        assert_eq!(p, before);
    }

    #[test]
    fn first_step_is_signed_lr() {
        let mut p = single("w", &[0.5, -1.0, 2.0, 0.0]);
        let g = single("w", &[3.0, -0.2, 1e-3, -50.0]);
        AdamState::new().step(&mut p, &g, 1e-3);
        let expected = [0.5 - 1e-3, -1.0 + 1e-3, 2.0 - 1e-3, 1e-3];
        for (a, e) in p["w"].data().iter().zip(expected) {
            assert!((a - e).abs() < 1e-6, "{a} vs {e}");
        }
    }

    #[test]
    fn two_steps_match_scalar_reference() {
        let w0 = [0.3f32, -0.7, 1.1];
        let g1 = [0.5f32, -0.25, 2.0];
        let g2 = [-0.1f32, 0.4, 1.5];
        let lr = 0.01f32;

        let mut p = single("w", &w0);
        let mut adam = AdamState::new();
        adam.step(&mut p, &single("w", &g1), lr);
        adam.step(&mut p, &single("w", &g2), lr);

        // scalar reference, one element at a time
        for i in 0..3 {
            let (mut w, mut m, mut v) = (w0[i], 0.0f32, 0.0f32);
            for (t, g) in [(1, g1[i]), (2, g2[i])] {
                m = 0.9 * m + (1.0 - 0.9) * g;
                v = 0.999 * v + (1.0 - 0.999) * g * g;
                let mh = m / (1.0 - 0.9f32.powi(t));
                let vh = v / (1.0 - 0.999f32.powi(t));
                w -= lr * mh / (vh.sqrt() + 1e-8);
            }
            assert_eq!(p["w"].data()[i].to_bits(), w.to_bits());
        }
        assert_eq!(adam.step_count(), 2);
    }
}
