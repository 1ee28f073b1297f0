use crate::tensor::{Tensor, TensorError};

/// Additive smoothing in the soft Dice ratio; keeps the loss defined on empty masks.
pub const DICE_SMOOTHING: f64 = 1.0;

fn check_shapes(op: &'static str, pred: &Tensor, target: &Tensor) -> Result<(), TensorError> {
    if pred.shape() != target.shape() {
        return Err(TensorError::Dimension {
            op,
            dim: "target",
            expected: pred.len(),
            actual: target.len(),
        });
    }
    Ok(())
}

/// Soft Dice loss `1 - (2 sum(p t) + s) / (sum(p) + sum(t) + s)` and its gradient.
pub fn dice_loss(pred: &Tensor, target: &Tensor) -> Result<(f64, Tensor), TensorError> {
    check_shapes("dice_loss", pred, target)?;
    let (mut inter, mut sp, mut st) = (0.0f64, 0.0f64, 0.0f64);
    for (&p, &t) in pred.data().iter().zip(target.data()) {
        inter += p as f64 * t as f64;
        sp += p as f64;
        st += t as f64;
    }
    let num = 2.0 * inter + DICE_SMOOTHING;
    let den = sp + st + DICE_SMOOTHING;
    let loss = 1.0 - num / den;
    let den2 = den * den;
    let grad = target
        .data()
        .iter()
        .map(|&t| ((num - 2.0 * t as f64 * den) / den2) as f32)
        .collect();
    Ok((loss, Tensor::new(pred.shape().to_vec(), grad)?))
}

/// Mean squared error and its gradient `2 (p - t) / n`.
pub fn mse_loss(pred: &Tensor, target: &Tensor) -> Result<(f64, Tensor), TensorError> {
    check_shapes("mse_loss", pred, target)?;
    let n = pred.len() as f64;
    let mut sum = 0.0f64;
    let grad = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(&p, &t)| {
            let d = p as f64 - t as f64;
            sum += d * d;
            (2.0 * d / n) as f32
        })
        .collect();
    Ok((sum / n, Tensor::new(pred.shape().to_vec(), grad)?))
}
