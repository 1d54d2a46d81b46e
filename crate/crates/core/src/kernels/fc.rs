//! Fully connected layers over (batch, features) tensors.

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::tensor::Tensor;

/// Parameters of one fully connected layer: `weights` is (out_features,
/// in_features), `bias` one entry per output feature.
#[derive(Debug, Clone, PartialEq)]
pub struct FcLayerParams {
    pub weights: Tensor,
    pub bias: Vec<f64>,
}

impl FcLayerParams {
    pub fn new(weights: Tensor, bias: Vec<f64>) -> Result<Self> {
        let params = Self { weights, bias };
        params.validate("FcLayerParams::new")?;
        Ok(params)
    }

    pub fn out_features(&self) -> usize {
        self.weights.shape()[0]
    }

    pub fn in_features(&self) -> usize {
        self.weights.shape()[1]
    }

    pub fn param_count(&self) -> usize {
        self.weights.len() + self.bias.len()
    }

    pub fn validate(&self, context: &'static str) -> Result<()> {
        let (out_f, _in_f) = self.weights.dims2(context)?;
        if self.bias.len() != out_f {
            return Err(Error::AxisMismatch {
                context,
                axis: "bias",
                expected: out_f,
                got: self.bias.len(),
            });
        }
        Ok(())
    }
}

fn check_geometry(
    context: &'static str,
    input: &Tensor,
    params: &FcLayerParams,
) -> Result<(usize, usize)> {
    let (b, in_f) = input.dims2(context)?;
    params.validate(context)?;
    if params.in_features() != in_f {
        return Err(Error::AxisMismatch {
            context,
            axis: "in_features",
            expected: params.in_features(),
            got: in_f,
        });
    }
    Ok((b, in_f))
}

/// Forward pass on the global execution context.
pub fn fc_forward(input: &Tensor, params: &FcLayerParams) -> Result<Tensor> {
    fc_forward_with(Exec::global(), input, params)
}

/// out[b][o] = bias[o] + sum_i weights[o][i] * input[b][i], the sum running
/// in ascending `i`. Parallelism splits across batch rows.
pub fn fc_forward_with(exec: &Exec, input: &Tensor, params: &FcLayerParams) -> Result<Tensor> {
    let (b, in_f) = check_geometry("fc_forward", input, params)?;
    let out_f = params.out_features();
    let wt = params.weights.data();
    let bias = &params.bias;
    let data = input.data();

    let mut out = Tensor::zeros(&[b, out_f]);
    exec.for_each_chunk(out.data_mut(), out_f, |bi, row| {
        let x = &data[bi * in_f..][..in_f];
        for (o, slot) in row.iter_mut().enumerate() {
            let wrow = &wt[o * in_f..][..in_f];
            let mut acc = 0.0;
            for i in 0..in_f {
                acc += wrow[i] * x[i];
            }
            *slot = acc + bias[o];
        }
    });
    Ok(out)
}

/// Backward pass on the global execution context.
pub fn fc_backward(
    input: &Tensor,
    params: &FcLayerParams,
    grad_out: &Tensor,
) -> Result<(Tensor, Tensor, Vec<f64>)> {
    fc_backward_with(Exec::global(), input, params, grad_out)
}

/// Returns (grad_input, grad_weights, grad_bias). Fixed reduction orders:
/// grad_input sums over `o` ascending (one batch row per chunk); grad_weights
/// sums over `b` ascending (one output row per chunk); grad_bias over `b`.
pub fn fc_backward_with(
    exec: &Exec,
    input: &Tensor,
    params: &FcLayerParams,
    grad_out: &Tensor,
) -> Result<(Tensor, Tensor, Vec<f64>)> {
    let (b, in_f) = check_geometry("fc_backward", input, params)?;
    let out_f = params.out_features();
    let expected = [b, out_f];
    if grad_out.shape() != expected {
        return Err(Error::ShapeMismatch {
            context: "fc_backward grad_out",
            expected: expected.to_vec(),
            got: grad_out.shape().to_vec(),
        });
    }
    let wt = params.weights.data();
    let go = grad_out.data();
    let data = input.data();

    let mut grad_input = Tensor::zeros(input.shape());
    exec.for_each_chunk(grad_input.data_mut(), in_f, |bi, gi| {
        let g = &go[bi * out_f..][..out_f];
        for (o, &gv) in g.iter().enumerate() {
            let wrow = &wt[o * in_f..][..in_f];
            for i in 0..in_f {
                gi[i] += gv * wrow[i];
            }
        }
    });

    let mut grad_weights = Tensor::zeros(params.weights.shape());
    exec.for_each_chunk(grad_weights.data_mut(), in_f, |o, gw| {
        for bi in 0..b {
            let gv = go[bi * out_f + o];
            let x = &data[bi * in_f..][..in_f];
            for i in 0..in_f {
                gw[i] += gv * x[i];
            }
        }
    });

    let mut grad_bias = vec![0.0; out_f];
    for bi in 0..b {
        for (o, gb) in grad_bias.iter_mut().enumerate() {
            *gb += go[bi * out_f + o];
        }
    }

    Ok((grad_input, grad_weights, grad_bias))
}
