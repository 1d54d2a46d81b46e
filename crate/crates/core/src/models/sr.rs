//! Super-resolution subnet: the conv trunk plus a single-channel linear
//! reconstruction head (conv4). Pre-training this subnet on aligned pairs
//! teaches the trunk low-to-high resolution features; the head is then
//! discarded and a classifier head attached in its place.

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::kernels::{conv2d_backward_with, conv2d_forward_with, ConvLayerParams};
use crate::models::classifier::{check_dropout, ClassifierNet};
use crate::models::stack::{stack_backward, stack_forward, StackCache};
use crate::models::{
    assign_params, flatten_params, gaussian_conv_init, gaussian_fc_init, init_stream,
    NetworkConfig, RandomState, RECON_FILTER_SIZE,
};
use crate::optim::{sgd_step, sgd_step_slice};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct SrNet {
    pub conv: [ConvLayerParams; 3],
    /// Linear reconstruction head: one output channel, no activation.
    pub conv4: ConvLayerParams,
}

/// Intermediates of one reconstruction forward pass.
pub struct SrCache {
    pub(crate) stack: StackCache,
}

/// Gradients in layer order.
pub struct SrGrads {
    pub conv: Vec<(Tensor, Vec<f64>)>,
    pub conv4: (Tensor, Vec<f64>),
}

impl SrGrads {
    /// Flat gradient vector matching [`SrNet::params_flat`].
    pub fn flat(&self) -> Vec<f64> {
        let mut parts: Vec<&[f64]> = Vec::new();
        for (gw, gb) in &self.conv {
            parts.push(gw.data());
            parts.push(gb);
        }
        parts.push(self.conv4.0.data());
        parts.push(&self.conv4.1);
        flatten_params(&parts)
    }
}

impl SrNet {
    /// Fresh Gaussian-initialised subnet. The trunk draws from the same
    /// streams as a directly built classifier, so attaching a head later
    /// yields the classifier that shares the trunk draws.
    pub fn build(config: &NetworkConfig, rs: &RandomState) -> Result<Self> {
        config.validate()?;
        let [n1, n2, n3] = config.filters;
        let [f1, f2, f3] = config.filter_sizes;
        let conv = [
            gaussian_conv_init(n1, 1, f1, &mut init_stream(rs, 0, 0))?,
            gaussian_conv_init(n2, n1, f2, &mut init_stream(rs, 0, 1))?,
            gaussian_conv_init(n3, n2, f3, &mut init_stream(rs, 0, 2))?,
        ];
        let conv4 = gaussian_conv_init(1, n3, RECON_FILTER_SIZE, &mut init_stream(rs, 0, 3))?;
        Ok(Self { conv, conv4 })
    }

    pub fn validate(&self) -> Result<()> {
        for layer in &self.conv {
            layer.validate("SrNet")?;
        }
        self.conv4.validate("SrNet")?;
        if self.conv[0].in_channels() != 1 {
            return Err(Error::AxisMismatch {
                context: "SrNet",
                axis: "conv1.in_channels",
                expected: 1,
                got: self.conv[0].in_channels(),
            });
        }
        for i in 0..2 {
            if self.conv[i + 1].in_channels() != self.conv[i].out_channels() {
                return Err(Error::AxisMismatch {
                    context: "SrNet",
                    axis: "conv.in_channels",
                    expected: self.conv[i].out_channels(),
                    got: self.conv[i + 1].in_channels(),
                });
            }
        }
        if self.conv4.in_channels() != self.conv[2].out_channels()
            || self.conv4.out_channels() != 1
        {
            return Err(Error::AxisMismatch {
                context: "SrNet",
                axis: "conv4",
                expected: self.conv[2].out_channels(),
                got: self.conv4.in_channels(),
            });
        }
        Ok(())
    }

    /// Reconstruction on the global context: (B, 1, h, w) in, same out.
    pub fn forward(&self, images: &Tensor) -> Result<Tensor> {
        let (recon, _) = self.forward_train(Exec::global(), images)?;
        Ok(recon)
    }

    pub fn forward_train(&self, exec: &Exec, images: &Tensor) -> Result<(Tensor, SrCache)> {
        let conv_refs: Vec<&ConvLayerParams> = self.conv.iter().collect();
        let stack = stack_forward(exec, &conv_refs, images)?;
        let recon = conv2d_forward_with(exec, &stack.output, &self.conv4)?;
        Ok((recon, SrCache { stack }))
    }

    /// Backward pass from the gradient at the reconstruction.
    pub fn backward(&self, exec: &Exec, cache: &SrCache, grad_recon: &Tensor) -> Result<SrGrads> {
        let (g_stack_out, gw4, gb4) =
            conv2d_backward_with(exec, &cache.stack.output, &self.conv4, grad_recon)?;
        let conv_refs: Vec<&ConvLayerParams> = self.conv.iter().collect();
        let (_, conv_grads) = stack_backward(exec, &conv_refs, &cache.stack, &g_stack_out)?;
        Ok(SrGrads {
            conv: conv_grads,
            conv4: (gw4, gb4),
        })
    }

    pub fn sgd_step(&mut self, grads: &SrGrads, lr: f64) -> Result<()> {
        for (layer, (gw, gb)) in self.conv.iter_mut().zip(&grads.conv) {
            sgd_step(&mut layer.weights, gw, lr)?;
            sgd_step_slice(&mut layer.bias, gb, lr)?;
        }
        sgd_step(&mut self.conv4.weights, &grads.conv4.0, lr)?;
        sgd_step_slice(&mut self.conv4.bias, &grads.conv4.1, lr)?;
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        self.conv.iter().map(|l| l.param_count()).sum::<usize>() + self.conv4.param_count()
    }

    /// Flat parameters: conv1 w/b, conv2 w/b, conv3 w/b, conv4 w/b.
    pub fn params_flat(&self) -> Vec<f64> {
        let mut parts: Vec<&[f64]> = Vec::new();
        for layer in &self.conv {
            parts.push(layer.weights.data());
            parts.push(&layer.bias);
        }
        parts.push(self.conv4.weights.data());
        parts.push(&self.conv4.bias);
        flatten_params(&parts)
    }

    pub fn set_params_flat(&mut self, flat: &[f64]) -> Result<()> {
        let mut parts: Vec<&mut [f64]> = Vec::new();
        for layer in &mut self.conv {
            parts.push(layer.weights.data_mut());
            parts.push(&mut layer.bias);
        }
        parts.push(self.conv4.weights.data_mut());
        parts.push(&mut self.conv4.bias);
        assign_params(&mut parts, flat)
    }
}

/// Discards the reconstruction head and attaches a fresh classification
/// head, yielding exactly the baseline classifier topology. The trunk keeps
/// its pre-trained weights; fc4 and fc5 are Gaussian-initialised.
pub fn attach_classifier_head(
    sr: &SrNet,
    config: &NetworkConfig,
    input_side: usize,
    dropout_rate: f64,
    rs: &RandomState,
) -> Result<ClassifierNet> {
    sr.validate()?;
    config.validate()?;
    check_dropout(dropout_rate)?;
    for i in 0..3 {
        if sr.conv[i].out_channels() != config.filters[i]
            || sr.conv[i].filter_size() != config.filter_sizes[i]
        {
            return Err(Error::InvalidParam {
                name: "config",
                message: format!(
                    "trunk layer {} is {}x{} filters of size {}, config says {} of size {}",
                    i + 1,
                    sr.conv[i].out_channels(),
                    sr.conv[i].in_channels(),
                    sr.conv[i].filter_size(),
                    config.filters[i],
                    config.filter_sizes[i],
                ),
            });
        }
    }
    let features = config.filters[2] * input_side * input_side;
    let fc4 = gaussian_fc_init(config.fc_width, features, &mut init_stream(rs, 0, 4))?;
    let fc5 = gaussian_fc_init(config.class_count, config.fc_width, &mut init_stream(rs, 0, 5))?;
    ClassifierNet::from_parts(sr.conv.clone(), fc4, fc5, dropout_rate, input_side)
}
