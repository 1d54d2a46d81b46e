//! Inverted dropout.
//!
//! Surviving units are scaled by 1/(1-rate) at training time so that
//! inference applies the identity; the mask is reusable for the backward
//! pass, which multiplies by the same scale.

use crate::error::{Error, Result};
use crate::rng::ChaCha8Rng;
use crate::tensor::{ensure_same_shape, Tensor};
use rand::Rng;

/// A sampled dropout mask: per element either 0 or 1/(1-rate).
#[derive(Debug, Clone)]
pub struct DropoutMask {
    scale: Tensor,
}

impl DropoutMask {
    /// A pass-through mask (all ones), used when dropout is disabled.
    pub fn identity(shape: &[usize]) -> Self {
        Self {
            scale: Tensor::filled(shape, 1.0),
        }
    }

    /// Applies the mask elementwise; same operation forward and backward.
    pub fn apply(&self, t: &Tensor) -> Result<Tensor> {
        ensure_same_shape("DropoutMask::apply", &self.scale, t)?;
        let mut out = t.clone();
        for (o, &s) in out.data_mut().iter_mut().zip(self.scale.data()) {
            *o *= s;
        }
        Ok(out)
    }

    /// Fraction of zeroed elements.
    pub fn dropped_fraction(&self) -> f64 {
        let zeros = self.scale.data().iter().filter(|&&s| s == 0.0).count();
        zeros as f64 / self.scale.len() as f64
    }
}

/// Samples a mask: each element is dropped independently with probability
/// `rate`. Draws are sequential in element order from `rng`.
pub fn dropout_mask(shape: &[usize], rate: f64, rng: &mut ChaCha8Rng) -> Result<DropoutMask> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::InvalidParam {
            name: "rate",
            message: format!("dropout rate must be in [0, 1), got {rate}"),
        });
    }
    let keep_scale = 1.0 / (1.0 - rate);
    let mut scale = Tensor::zeros(shape);
    for s in scale.data_mut() {
        let u: f64 = rng.random();
        *s = if u < rate { 0.0 } else { keep_scale };
    }
    Ok(DropoutMask { scale })
}

/// Convenience wrapper: samples a mask and applies it when `training`,
/// otherwise returns the input unchanged (consuming no randomness).
pub fn dropout(
    input: &Tensor,
    rate: f64,
    rng: &mut ChaCha8Rng,
    training: bool,
) -> Result<Tensor> {
    if !training || rate == 0.0 {
        return Ok(input.clone());
    }
    let mask = dropout_mask(input.shape(), rate, rng)?;
    mask.apply(input)
}
