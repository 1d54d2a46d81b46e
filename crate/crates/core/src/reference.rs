//! Reference implementations used to verify the fast kernels.
//!
//! These are written as the classical textbook loops with explicit bounds
//! checks and no padded buffers, shared memory, or scheduling. They must
//! stay independent of the `kernels` module so that agreement between the
//! two is evidence, not tautology. Both sides accumulate in (in_channel,
//! filter_row, filter_column) order, so on finite inputs they agree bit for
//! bit, not merely within tolerance.

use crate::kernels::ConvLayerParams;
use crate::tensor::Tensor;

/// Direct-summation convolution, stride 1, zero padding (f-1)/2.
pub fn naive_conv2d_forward(input: &Tensor, params: &ConvLayerParams) -> Tensor {
    let (b, c_in, h, w) = match input.shape() {
        [a, b_, c, d] => (*a, *b_, *c, *d),
        _ => panic!("naive_conv2d_forward expects rank-4 input"),
    };
    let n = params.out_channels();
    let f = params.filter_size() as isize;
    let pad = (f - 1) / 2;
    let wt = params.weights.data();
    let x = input.data();
    let mut out = Tensor::zeros(&[b, n, h, w]);
    let o = out.data_mut();
    for bi in 0..b {
        for oc in 0..n {
            for y in 0..h as isize {
                for xx in 0..w as isize {
                    let mut acc = 0.0;
                    for ic in 0..c_in {
                        for ky in 0..f {
                            for kx in 0..f {
                                let sy = y + ky - pad;
                                let sx = xx + kx - pad;
                                if sy < 0 || sx < 0 || sy >= h as isize || sx >= w as isize {
                                    continue;
                                }
                                let xi = ((bi * c_in + ic) * h + sy as usize) * w + sx as usize;
                                let wi = ((oc * c_in + ic) * f as usize + ky as usize) * f as usize
                                    + kx as usize;
                                acc += x[xi] * wt[wi];
                            }
                        }
                    }
                    let oi = ((bi * n + oc) * h + y as usize) * w + xx as usize;
                    o[oi] = acc + params.bias[oc];
                }
            }
        }
    }
    out
}

/// Direct-summation fully connected forward: out = W x + b per row.
pub fn naive_fc_forward(input: &Tensor, weights: &Tensor, bias: &[f64]) -> Tensor {
    let (b, in_f) = match input.shape() {
        [a, c] => (*a, *c),
        _ => panic!("naive_fc_forward expects rank-2 input"),
    };
    let out_f = weights.shape()[0];
    let mut out = Tensor::zeros(&[b, out_f]);
    let o = out.data_mut();
    for bi in 0..b {
        for of in 0..out_f {
            let mut acc = 0.0;
            for i in 0..in_f {
                acc += weights.data()[of * in_f + i] * input.data()[bi * in_f + i];
            }
            o[bi * out_f + of] = acc + bias[of];
        }
    }
    out
}
