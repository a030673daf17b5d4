//! Binary cross-entropy and mean-squared-error losses with adjoints.

use alloc::format;
use alloc::vec;

use super::{ensure, NnError};
use crate::math;
use crate::tensor::Tensor;

/// Probability clamp for BCE; keeps the loss finite over the whole of [0,1].
pub const BCE_EPSILON: f64 = 1e-7;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Loss {
    Bce,
    Mse,
}

/// Mean binary cross-entropy of probabilities `p` (shape `[B]` or `[B,1]`)
/// against 0/1 labels, with `p` clamped to `[eps, 1-eps]`.
pub fn bce_loss(p: &Tensor, labels: &[u8]) -> Result<f64, NnError> {
    ensure(p.len() == labels.len(), || {
        format!(
            "probability count {} != label count {}",
            p.len(),
            labels.len()
        )
    })?;
    ensure(!labels.is_empty(), || "empty batch".into())?;
    let mut total = 0.0;
    for (&pi, &yi) in p.data().iter().zip(labels) {
        let ph = pi.clamp(BCE_EPSILON, 1.0 - BCE_EPSILON);
        total -= if yi == 1 {
            math::ln(ph)
        } else {
            math::ln(1.0 - ph)
        };
    }
    Ok(total / labels.len() as f64)
}

/// dL/dp of [`bce_loss`]. Clamped coordinates get zero gradient, matching
/// finite differences of the clamped loss.
pub fn bce_grad(p: &Tensor, labels: &[u8]) -> Tensor {
    let batch = labels.len() as f64;
    let mut d = vec![0.0; p.len()];
    for ((g, &pi), &yi) in d.iter_mut().zip(p.data()).zip(labels) {
        if pi < BCE_EPSILON || pi > 1.0 - BCE_EPSILON {
            continue;
        }
        let y = yi as f64;
        *g = -(y / pi - (1.0 - y) / (1.0 - pi)) / batch;
    }
    Tensor::from_vec(p.shape(), d)
}

/// Mean squared error over all coordinates.
pub fn mse_loss(pred: &Tensor, target: &Tensor) -> Result<f64, NnError> {
    ensure(pred.len() == target.len(), || {
        format!("prediction count {} != target count {}", pred.len(), target.len())
    })?;
    ensure(!pred.is_empty(), || "empty batch".into())?;
    let sum: f64 = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(&a, &b)| (a - b) * (a - b))
        .sum();
    Ok(sum / pred.len() as f64)
}

/// dL/dpred of [`mse_loss`].
pub fn mse_grad(pred: &Tensor, target: &Tensor) -> Tensor {
    let n = pred.len() as f64;
    let d = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(&a, &b)| 2.0 * (a - b) / n)
        .collect();
    Tensor::from_vec(pred.shape(), d)
}
