//! Neural network kernels: forward and backward passes as plain functions
//! over tensors.
//!
//! Conventions shared by every kernel:
//! - image tensors are (batch, channels, height, width), row-major;
//! - all floating point reductions run in a fixed documented order, so
//!   results are bit-identical across runs and thread counts;
//! - backward passes take the original forward inputs and the incoming
//!   gradient, and return gradients in input order (input, weights, bias).

mod activ;
mod conv;
mod dropout;
mod fc;

pub use activ::{relu, relu_backward, softmax, softmax_with};
pub use conv::{
    conv2d_backward, conv2d_backward_with, conv2d_forward, conv2d_forward_with, ConvLayerParams,
};
pub use dropout::{dropout, dropout_mask, DropoutMask};
pub use fc::{fc_backward, fc_backward_with, fc_forward, fc_forward_with, FcLayerParams};
