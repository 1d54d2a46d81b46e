//! Plain stochastic gradient descent: `p -= lr * g`, no momentum, no decay.

use crate::error::{Error, Result};
use crate::tensor::{ensure_same_shape, Tensor};

/// One SGD step over a tensor.
pub fn sgd_step(params: &mut Tensor, grads: &Tensor, lr: f64) -> Result<()> {
    ensure_same_shape("sgd_step", params, grads)?;
    sgd_step_slice(params.data_mut(), grads.data(), lr)
}

/// One SGD step over a flat slice (used for biases).
pub fn sgd_step_slice(params: &mut [f64], grads: &[f64], lr: f64) -> Result<()> {
    if params.len() != grads.len() {
        return Err(Error::AxisMismatch {
            context: "sgd_step",
            axis: "params",
            expected: params.len(),
            got: grads.len(),
        });
    }
    for (p, &g) in params.iter_mut().zip(grads) {
        *p -= lr * g;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn step_moves_against_gradient() {
        let mut p = Tensor::from_vec(&[3], vec![1.0, 2.0, 3.0]).unwrap();
        let g = Tensor::from_vec(&[3], vec![0.5, -1.0, 0.0]).unwrap();
        sgd_step(&mut p, &g, 0.1).unwrap();
        assert_eq!(p.data(), &[0.95, 2.1, 3.0]);
    }

    #[test]
    fn rejects_length_mismatch() {
        let mut p = vec![0.0; 3];
        assert!(sgd_step_slice(&mut p, &[1.0; 4], 0.1).is_err());
    }
}
