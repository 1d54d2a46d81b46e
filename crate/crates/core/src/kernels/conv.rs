//! 2-D convolution (cross-correlation) with stride 1 and zero padding that
//! preserves spatial extents.

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::tensor::Tensor;

/// Parameters of one convolutional layer.
///
/// `weights` has shape (out_channels, in_channels, f, f) with odd filter
/// size `f`; `bias` holds one entry per output channel. Stride is always 1
/// and inputs are zero-padded by (f-1)/2 on each side, so height and width
/// pass through unchanged.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayerParams {
    pub weights: Tensor,
    pub bias: Vec<f64>,
}

impl ConvLayerParams {
    pub fn new(weights: Tensor, bias: Vec<f64>) -> Result<Self> {
        let params = Self { weights, bias };
        params.validate("ConvLayerParams::new")?;
        Ok(params)
    }

    pub fn out_channels(&self) -> usize {
        self.weights.shape()[0]
    }

    pub fn in_channels(&self) -> usize {
        self.weights.shape()[1]
    }

    pub fn filter_size(&self) -> usize {
        self.weights.shape()[2]
    }

    pub fn param_count(&self) -> usize {
        self.weights.len() + self.bias.len()
    }

    pub fn validate(&self, context: &'static str) -> Result<()> {
        let (out_c, _in_c, fy, fx) = self.weights.dims4(context)?;
        if fy != fx {
            return Err(Error::AxisMismatch {
                context,
                axis: "filter_width",
                expected: fy,
                got: fx,
            });
        }
        if fy % 2 == 0 {
            return Err(Error::InvalidParam {
                name: "filter_size",
                message: format!("must be odd to preserve extents, got {fy}"),
            });
        }
        if self.bias.len() != out_c {
            return Err(Error::AxisMismatch {
                context,
                axis: "bias",
                expected: out_c,
                got: self.bias.len(),
            });
        }
        Ok(())
    }
}

/// Copies (b, c, h, w) into a zero-bordered (b, c, h+2p, w+2p) buffer.
fn pad_input(input: &Tensor, b: usize, c: usize, h: usize, w: usize, pad: usize) -> Vec<f64> {
    let (ph, pw) = (h + 2 * pad, w + 2 * pad);
    let mut padded = vec![0.0; b * c * ph * pw];
    let src = input.data();
    for plane in 0..b * c {
        let src_base = plane * h * w;
        let dst_base = plane * ph * pw;
        for y in 0..h {
            let s = src_base + y * w;
            let d = dst_base + (y + pad) * pw + pad;
            padded[d..d + w].copy_from_slice(&src[s..s + w]);
        }
    }
    padded
}

fn check_geometry(
    context: &'static str,
    input: &Tensor,
    params: &ConvLayerParams,
) -> Result<(usize, usize, usize, usize)> {
    let (b, c_in, h, w) = input.dims4(context)?;
    params.validate(context)?;
    if params.in_channels() != c_in {
        return Err(Error::AxisMismatch {
            context,
            axis: "in_channels",
            expected: params.in_channels(),
            got: c_in,
        });
    }
    if h == 0 || w == 0 {
        return Err(Error::InvalidParam {
            name: "input",
            message: format!("spatial extents must be >= 1, got {h}x{w}"),
        });
    }
    Ok((b, c_in, h, w))
}

/// Forward convolution on the global execution context.
pub fn conv2d_forward(input: &Tensor, params: &ConvLayerParams) -> Result<Tensor> {
    conv2d_forward_with(Exec::global(), input, params)
}

/// Forward convolution: out[b][oc][y][x] = bias[oc] + sum over (ic, ky, kx)
/// of weights[oc][ic][ky][kx] * padded_input[b][ic][y+ky][x+kx].
///
/// The reduction runs a single accumulator per output element in (ic, ky, kx)
/// order, which fixes the result bit for bit. Parallelism splits work across
/// (batch, out_channel) output planes only.
pub fn conv2d_forward_with(
    exec: &Exec,
    input: &Tensor,
    params: &ConvLayerParams,
) -> Result<Tensor> {
    let (b, c_in, h, w) = check_geometry("conv2d_forward", input, params)?;
    let n = params.out_channels();
    let f = params.filter_size();
    let pad = (f - 1) / 2;
    let (ph, pw) = (h + 2 * pad, w + 2 * pad);
    let padded = pad_input(input, b, c_in, h, w, pad);
    let wt = params.weights.data();
    let bias = &params.bias;

    let mut out = Tensor::zeros(&[b, n, h, w]);
    exec.for_each_chunk(out.data_mut(), h * w, |idx, plane| {
        let bi = idx / n;
        let oc = idx % n;
        let wbank = &wt[oc * c_in * f * f..][..c_in * f * f];
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0;
                for ic in 0..c_in {
                    let pplane = (bi * c_in + ic) * ph * pw;
                    let wchan = &wbank[ic * f * f..][..f * f];
                    for ky in 0..f {
                        let prow = &padded[pplane + (y + ky) * pw + x..][..f];
                        let wrow = &wchan[ky * f..][..f];
                        for kx in 0..f {
                            acc += prow[kx] * wrow[kx];
                        }
                    }
                }
                plane[y * w + x] = acc + bias[oc];
            }
        }
    });
    Ok(out)
}

/// Backward convolution on the global execution context.
pub fn conv2d_backward(
    input: &Tensor,
    params: &ConvLayerParams,
    grad_out: &Tensor,
) -> Result<(Tensor, Tensor, Vec<f64>)> {
    conv2d_backward_with(Exec::global(), input, params, grad_out)
}

/// Gradients of the forward pass: returns (grad_input, grad_weights,
/// grad_bias) for an incoming gradient of the same shape as the output.
///
/// Reduction orders, fixed for reproducibility:
/// - grad_input: scatter over (oc, y, x) then (ic, ky, kx), one batch item
///   per parallel chunk;
/// - grad_weights: accumulate over (b, y, x), one output channel per chunk;
/// - grad_bias: accumulate over (b, y, x), sequential.
pub fn conv2d_backward_with(
    exec: &Exec,
    input: &Tensor,
    params: &ConvLayerParams,
    grad_out: &Tensor,
) -> Result<(Tensor, Tensor, Vec<f64>)> {
    let (b, c_in, h, w) = check_geometry("conv2d_backward", input, params)?;
    let n = params.out_channels();
    let f = params.filter_size();
    let expected = [b, n, h, w];
    if grad_out.shape() != expected {
        return Err(Error::ShapeMismatch {
            context: "conv2d_backward grad_out",
            expected: expected.to_vec(),
            got: grad_out.shape().to_vec(),
        });
    }
    let pad = (f - 1) / 2;
    let (ph, pw) = (h + 2 * pad, w + 2 * pad);
    let padded = pad_input(input, b, c_in, h, w, pad);
    let wt = params.weights.data();
    let go = grad_out.data();

    let mut grad_input = Tensor::zeros(input.shape());
    exec.for_each_chunk(grad_input.data_mut(), c_in * h * w, |bi, gi| {
        // Scatter into a padded buffer, then crop the border away.
        let mut gpad = vec![0.0; c_in * ph * pw];
        for oc in 0..n {
            let gbase = (bi * n + oc) * h * w;
            let wbank = &wt[oc * c_in * f * f..][..c_in * f * f];
            for y in 0..h {
                for x in 0..w {
                    let g = go[gbase + y * w + x];
                    for ic in 0..c_in {
                        let pbase = ic * ph * pw;
                        let wchan = &wbank[ic * f * f..][..f * f];
                        for ky in 0..f {
                            let grow = &mut gpad[pbase + (y + ky) * pw + x..][..f];
                            let wrow = &wchan[ky * f..][..f];
                            for kx in 0..f {
                                grow[kx] += g * wrow[kx];
                            }
                        }
                    }
                }
            }
        }
        for ic in 0..c_in {
            for y in 0..h {
                let s = ic * ph * pw + (y + pad) * pw + pad;
                let d = ic * h * w + y * w;
                gi[d..d + w].copy_from_slice(&gpad[s..s + w]);
            }
        }
    });

    let mut grad_weights = Tensor::zeros(params.weights.shape());
    exec.for_each_chunk(grad_weights.data_mut(), c_in * f * f, |oc, gw| {
        for bi in 0..b {
            let gbase = (bi * n + oc) * h * w;
            for y in 0..h {
                for x in 0..w {
                    let g = go[gbase + y * w + x];
                    for ic in 0..c_in {
                        let pplane = (bi * c_in + ic) * ph * pw;
                        let wbase = ic * f * f;
                        for ky in 0..f {
                            let prow = &padded[pplane + (y + ky) * pw + x..][..f];
                            let grow = &mut gw[wbase + ky * f..][..f];
                            for kx in 0..f {
                                grow[kx] += g * prow[kx];
                            }
                        }
                    }
                }
            }
        }
    });

    let mut grad_bias = vec![0.0; n];
    for bi in 0..b {
        for (oc, gb) in grad_bias.iter_mut().enumerate() {
            let gbase = (bi * n + oc) * h * w;
            for v in &go[gbase..gbase + h * w] {
                *gb += v;
            }
        }
    }

    Ok((grad_input, grad_weights, grad_bias))
}
