//! The shared convolutional trunk: conv -> ReLU per layer, with cached
//! intermediates for the backward pass.

use crate::error::Result;
use crate::exec::Exec;
use crate::kernels::{conv2d_backward_with, conv2d_forward_with, relu, relu_backward, ConvLayerParams};
use crate::tensor::Tensor;

/// Everything the backward pass needs from a trunk forward pass.
pub(crate) struct StackCache {
    /// Input to each layer; `inputs[0]` is the network input.
    pub inputs: Vec<Tensor>,
    /// Convolution outputs before the ReLU.
    pub preacts: Vec<Tensor>,
    /// Activation after the last layer.
    pub output: Tensor,
}

/// Runs conv -> ReLU through `layers` in order.
pub(crate) fn stack_forward(
    exec: &Exec,
    layers: &[&ConvLayerParams],
    input: &Tensor,
) -> Result<StackCache> {
    let mut inputs = Vec::with_capacity(layers.len());
    let mut preacts = Vec::with_capacity(layers.len());
    let mut current = input.clone();
    for layer in layers {
        let pre = conv2d_forward_with(exec, &current, layer)?;
        let act = relu(&pre);
        inputs.push(current);
        preacts.push(pre);
        current = act;
    }
    Ok(StackCache {
        inputs,
        preacts,
        output: current,
    })
}

/// Backpropagates `grad_output` (gradient at the trunk's activation output)
/// through the trunk. Returns the gradient at the trunk input and per-layer
/// (weights, bias) gradients in layer order.
pub(crate) fn stack_backward(
    exec: &Exec,
    layers: &[&ConvLayerParams],
    cache: &StackCache,
    grad_output: &Tensor,
) -> Result<(Tensor, Vec<(Tensor, Vec<f64>)>)> {
    debug_assert_eq!(layers.len(), cache.inputs.len());
    let mut grads = vec![(Tensor::zeros(&[0]), Vec::new()); layers.len()];
    let mut grad = grad_output.clone();
    for i in (0..layers.len()).rev() {
        let grad_pre = relu_backward(&cache.preacts[i], &grad)?;
        let (grad_in, gw, gb) = conv2d_backward_with(exec, &cache.inputs[i], layers[i], &grad_pre)?;
        grads[i] = (gw, gb);
        grad = grad_in;
    }
    Ok((grad, grads))
}

/// Backward pass that stops after the deepest `trained` layers: gradients
/// are computed for layers `layers.len() - trained ..` only, and the
/// returned input gradient is skipped. Used by stagewise pre-training,
/// where earlier layers are frozen.
pub(crate) fn stack_backward_tail(
    exec: &Exec,
    layers: &[&ConvLayerParams],
    cache: &StackCache,
    grad_output: &Tensor,
    trained: usize,
) -> Result<Vec<(Tensor, Vec<f64>)>> {
    debug_assert!(trained >= 1 && trained <= layers.len());
    let first_trained = layers.len() - trained;
    let mut grads = vec![(Tensor::zeros(&[0]), Vec::new()); layers.len()];
    let mut grad = grad_output.clone();
    for i in (first_trained..layers.len()).rev() {
        let grad_pre = relu_backward(&cache.preacts[i], &grad)?;
        let (grad_in, gw, gb) = conv2d_backward_with(exec, &cache.inputs[i], layers[i], &grad_pre)?;
        grads[i] = (gw, gb);
        if i > first_trained {
            grad = grad_in;
        }
    }
    Ok(grads)
}
