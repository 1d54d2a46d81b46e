//! Activations: rectified linear units and row-wise softmax.

use crate::error::Result;
use crate::exec::Exec;
use crate::tensor::{ensure_same_shape, Tensor};

/// Elementwise max(x, 0). Negative zero maps to positive zero.
pub fn relu(input: &Tensor) -> Tensor {
    input.map(|v| if v > 0.0 { v } else { 0.0 })
}

/// Passes gradient where the forward *input* was strictly positive. The
/// subgradient at exactly zero is zero.
pub fn relu_backward(input: &Tensor, grad_out: &Tensor) -> Result<Tensor> {
    ensure_same_shape("relu_backward", input, grad_out)?;
    let mut out = grad_out.clone();
    for (g, &x) in out.data_mut().iter_mut().zip(input.data()) {
        if x <= 0.0 {
            *g = 0.0;
        }
    }
    Ok(out)
}

/// Row-wise softmax over a (batch, classes) tensor on the global context.
pub fn softmax(logits: &Tensor) -> Result<Tensor> {
    softmax_with(Exec::global(), logits)
}

/// Numerically stabilised softmax: each row is shifted by its maximum before
/// exponentiation. Row sums and maxima scan in ascending index order.
pub fn softmax_with(exec: &Exec, logits: &Tensor) -> Result<Tensor> {
    let (_b, k) = logits.dims2("softmax")?;
    let data = logits.data();
    let mut out = logits.clone();
    exec.for_each_chunk(out.data_mut(), k, |bi, row| {
        let src = &data[bi * k..][..k];
        let mut max = f64::NEG_INFINITY;
        for &v in src {
            if v > max {
                max = v;
            }
        }
        let mut sum = 0.0;
        for (o, &v) in row.iter_mut().zip(src) {
            let e = (v - max).exp();
            *o = e;
            sum += e;
        }
        for o in row.iter_mut() {
            *o /= sum;
        }
    });
    Ok(out)
}
