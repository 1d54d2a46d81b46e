//! Losses: mean squared error and Huber for reconstruction, cross-entropy
//! for classification.
//!
//! All losses average over the elements (or rows) they score, and each
//! returns the scalar loss together with the gradient the backward pass
//! needs, so callers never recompute residuals.

use crate::error::{Error, Result};
use crate::tensor::{ensure_same_shape, Tensor};

/// Mean over elements of 0.5 * (prediction - target)^2.
///
/// Returns (loss, gradient w.r.t. prediction); the gradient of element i is
/// (prediction_i - target_i) / N.
pub fn mse_loss(prediction: &Tensor, target: &Tensor) -> Result<(f64, Tensor)> {
    ensure_same_shape("mse_loss", prediction, target)?;
    if prediction.is_empty() {
        return Err(Error::InvalidParam {
            name: "prediction",
            message: "loss over zero elements".into(),
        });
    }
    let n = prediction.len() as f64;
    let mut grad = prediction.clone();
    let mut loss = 0.0;
    for (g, &t) in grad.data_mut().iter_mut().zip(target.data()) {
        let d = *g - t;
        loss += 0.5 * d * d;
        *g = d / n;
    }
    Ok((loss / n, grad))
}

/// Threshold parameter for the Huber loss. Strictly positive.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HuberParams {
    c: f64,
}

impl HuberParams {
    /// Threshold tuned for standardised residuals; gives 95% asymptotic
    /// efficiency on clean Gaussian data while bounding outlier influence.
    pub const DEFAULT_C: f64 = 1.345;

    pub fn new(c: f64) -> Result<Self> {
        if !(c > 0.0) || !c.is_finite() {
            return Err(Error::InvalidParam {
                name: "c",
                message: format!("Huber threshold must be positive and finite, got {c}"),
            });
        }
        Ok(Self { c })
    }

    pub fn c(&self) -> f64 {
        self.c
    }
}

impl Default for HuberParams {
    fn default() -> Self {
        Self { c: Self::DEFAULT_C }
    }
}

/// Huber loss, averaged over elements. Per element with residual d:
/// 0.5 d^2 where |d| < c, and c|d| - c^2/2 otherwise. The two branches meet
/// at |d| = c with equal value and slope, so the loss is C^1.
///
/// Returns (loss, gradient w.r.t. prediction). The per-element gradient is
/// d/N on the quadratic branch (including |d| = c, where both branches give
/// the same number) and c*sign(d)/N on the linear branch, so its magnitude
/// never exceeds c/N no matter how large the residual.
pub fn huber_loss(
    prediction: &Tensor,
    target: &Tensor,
    params: &HuberParams,
) -> Result<(f64, Tensor)> {
    ensure_same_shape("huber_loss", prediction, target)?;
    if prediction.is_empty() {
        return Err(Error::InvalidParam {
            name: "prediction",
            message: "loss over zero elements".into(),
        });
    }
    let c = params.c();
    let n = prediction.len() as f64;
    let mut grad = prediction.clone();
    let mut loss = 0.0;
    for (g, &t) in grad.data_mut().iter_mut().zip(target.data()) {
        let d = *g - t;
        if d.abs() <= c {
            loss += 0.5 * d * d;
            *g = d / n;
        } else {
            loss += c * d.abs() - 0.5 * c * c;
            *g = if d > 0.0 { c } else { -c } / n;
        }
    }
    Ok((loss / n, grad))
}

/// Mean negative log-likelihood of the true labels under `probabilities`
/// (a (batch, classes) tensor of softmax outputs).
///
/// Returns (loss, gradient w.r.t. the *logits* that produced the
/// probabilities): (p - onehot(label)) / batch. Probabilities are clamped
/// at 1e-12 inside the log only; the gradient uses them as given.
pub fn cross_entropy_loss(probabilities: &Tensor, labels: &[usize]) -> Result<(f64, Tensor)> {
    let (b, k) = probabilities.dims2("cross_entropy_loss")?;
    if labels.len() != b {
        return Err(Error::AxisMismatch {
            context: "cross_entropy_loss",
            axis: "labels",
            expected: b,
            got: labels.len(),
        });
    }
    if b == 0 {
        return Err(Error::InvalidParam {
            name: "probabilities",
            message: "loss over zero rows".into(),
        });
    }
    let mut grad = probabilities.clone();
    let mut loss = 0.0;
    let bf = b as f64;
    for (bi, &label) in labels.iter().enumerate() {
        if label >= k {
            return Err(Error::InvalidParam {
                name: "labels",
                message: format!("label {label} out of range for {k} classes"),
            });
        }
        let p = probabilities.data()[bi * k + label];
        loss -= p.max(1e-12).ln();
        let row = &mut grad.data_mut()[bi * k..][..k];
        for v in row.iter_mut() {
            *v /= bf;
        }
        row[label] -= 1.0 / bf;
    }
    Ok((loss / bf, grad))
}
