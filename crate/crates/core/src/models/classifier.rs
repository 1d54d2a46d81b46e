//! Single-channel classifier: conv trunk, fc4 + ReLU + dropout, fc5 +
//! softmax. This is both the baseline model trained directly on degraded
//! inputs and the shape every transfer variant collapses to at test time.

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::kernels::{
    fc_backward_with, fc_forward_with, relu, relu_backward, softmax_with, ConvLayerParams,
    DropoutMask, FcLayerParams,
};
use crate::models::stack::{stack_backward, stack_forward, StackCache};
use crate::models::{
    assign_params, flatten_params, gaussian_conv_init, gaussian_fc_init, init_stream,
    NetworkConfig,
};
use crate::optim::{sgd_step, sgd_step_slice};
use crate::rng::{ChaCha8Rng, RandomState};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierNet {
    pub conv: [ConvLayerParams; 3],
    pub fc4: FcLayerParams,
    pub fc5: FcLayerParams,
    /// Dropout rate applied after fc4's ReLU during training.
    pub dropout_rate: f64,
    /// Expected square input extent.
    pub input_side: usize,
}

/// Intermediates of one training forward pass.
pub struct ClassifierCache {
    pub(crate) stack: StackCache,
    pub(crate) flat: Tensor,
    pub(crate) fc4_pre: Tensor,
    pub(crate) mask: DropoutMask,
    pub(crate) fc4_dropped: Tensor,
    pub(crate) probs: Tensor,
}

impl ClassifierCache {
    pub fn probabilities(&self) -> &Tensor {
        &self.probs
    }
}

/// Gradients for every parameter tensor, in layer order.
pub struct ClassifierGrads {
    pub conv: Vec<(Tensor, Vec<f64>)>,
    pub fc4: (Tensor, Vec<f64>),
    pub fc5: (Tensor, Vec<f64>),
}

impl ClassifierGrads {
    /// Flat gradient vector in the same order as
    /// [`ClassifierNet::params_flat`].
    pub fn flat(&self) -> Vec<f64> {
        let mut parts: Vec<&[f64]> = Vec::new();
        for (gw, gb) in &self.conv {
            parts.push(gw.data());
            parts.push(gb);
        }
        parts.push(self.fc4.0.data());
        parts.push(&self.fc4.1);
        parts.push(self.fc5.0.data());
        parts.push(&self.fc5.1);
        flatten_params(&parts)
    }
}

impl ClassifierNet {
    /// Fresh Gaussian-initialised network for square grayscale inputs of
    /// extent `input_side`.
    pub fn build(
        config: &NetworkConfig,
        input_side: usize,
        dropout_rate: f64,
        rs: &RandomState,
    ) -> Result<Self> {
        config.validate()?;
        check_dropout(dropout_rate)?;
        if input_side == 0 {
            return Err(Error::InvalidParam {
                name: "input_side",
                message: "must be >= 1".into(),
            });
        }
        let [n1, n2, n3] = config.filters;
        let [f1, f2, f3] = config.filter_sizes;
        let conv = [
            gaussian_conv_init(n1, 1, f1, &mut init_stream(rs, 0, 0))?,
            gaussian_conv_init(n2, n1, f2, &mut init_stream(rs, 0, 1))?,
            gaussian_conv_init(n3, n2, f3, &mut init_stream(rs, 0, 2))?,
        ];
        let features = n3 * input_side * input_side;
        let fc4 = gaussian_fc_init(config.fc_width, features, &mut init_stream(rs, 0, 4))?;
        let fc5 = gaussian_fc_init(config.class_count, config.fc_width, &mut init_stream(rs, 0, 5))?;
        Ok(Self {
            conv,
            fc4,
            fc5,
            dropout_rate,
            input_side,
        })
    }

    /// Assembles a network from existing parts, validating consistency.
    pub fn from_parts(
        conv: [ConvLayerParams; 3],
        fc4: FcLayerParams,
        fc5: FcLayerParams,
        dropout_rate: f64,
        input_side: usize,
    ) -> Result<Self> {
        let net = Self {
            conv,
            fc4,
            fc5,
            dropout_rate,
            input_side,
        };
        net.validate()?;
        Ok(net)
    }

    pub fn validate(&self) -> Result<()> {
        check_dropout(self.dropout_rate)?;
        for layer in &self.conv {
            layer.validate("ClassifierNet")?;
        }
        self.fc4.validate("ClassifierNet")?;
        self.fc5.validate("ClassifierNet")?;
        if self.conv[0].in_channels() != 1 {
            return Err(Error::AxisMismatch {
                context: "ClassifierNet",
                axis: "conv1.in_channels",
                expected: 1,
                got: self.conv[0].in_channels(),
            });
        }
        for i in 0..2 {
            if self.conv[i + 1].in_channels() != self.conv[i].out_channels() {
                return Err(Error::AxisMismatch {
                    context: "ClassifierNet",
                    axis: "conv.in_channels",
                    expected: self.conv[i].out_channels(),
                    got: self.conv[i + 1].in_channels(),
                });
            }
        }
        let features = self.feature_count();
        if self.fc4.in_features() != features {
            return Err(Error::AxisMismatch {
                context: "ClassifierNet",
                axis: "fc4.in_features",
                expected: features,
                got: self.fc4.in_features(),
            });
        }
        if self.fc5.in_features() != self.fc4.out_features() {
            return Err(Error::AxisMismatch {
                context: "ClassifierNet",
                axis: "fc5.in_features",
                expected: self.fc4.out_features(),
                got: self.fc5.in_features(),
            });
        }
        Ok(())
    }

    /// Flattened trunk output width: n3 * side * side.
    pub fn feature_count(&self) -> usize {
        self.conv[2].out_channels() * self.input_side * self.input_side
    }

    pub fn class_count(&self) -> usize {
        self.fc5.out_features()
    }

    /// True when every parameter tensor has the same shape (weights may
    /// differ).
    pub fn same_topology(&self, other: &ClassifierNet) -> bool {
        self.input_side == other.input_side
            && (0..3).all(|i| {
                self.conv[i].weights.shape() == other.conv[i].weights.shape()
                    && self.conv[i].bias.len() == other.conv[i].bias.len()
            })
            && self.fc4.weights.shape() == other.fc4.weights.shape()
            && self.fc5.weights.shape() == other.fc5.weights.shape()
    }

    /// Evaluation forward pass (dropout off): class probabilities.
    pub fn forward(&self, images: &Tensor) -> Result<Tensor> {
        let (probs, _) = self.forward_train(Exec::global(), images, None)?;
        Ok(probs)
    }

    /// Training forward pass. `dropout_rng` enables dropout; `None` runs the
    /// identity mask (used for evaluation and gradient checking).
    pub fn forward_train(
        &self,
        exec: &Exec,
        images: &Tensor,
        dropout_rng: Option<&mut ChaCha8Rng>,
    ) -> Result<(Tensor, ClassifierCache)> {
        check_input("ClassifierNet::forward", images, self.input_side)?;
        let conv_refs: Vec<&ConvLayerParams> = self.conv.iter().collect();
        classifier_forward(
            exec,
            &conv_refs,
            &self.fc4,
            &self.fc5,
            self.dropout_rate,
            images,
            dropout_rng,
        )
    }

    /// Backward pass from the gradient at the logits.
    pub fn backward(
        &self,
        exec: &Exec,
        cache: &ClassifierCache,
        grad_logits: &Tensor,
    ) -> Result<ClassifierGrads> {
        let conv_refs: Vec<&ConvLayerParams> = self.conv.iter().collect();
        classifier_backward(exec, &conv_refs, &self.fc4, &self.fc5, cache, grad_logits)
    }

    pub fn sgd_step(&mut self, grads: &ClassifierGrads, lr: f64) -> Result<()> {
        for (layer, (gw, gb)) in self.conv.iter_mut().zip(&grads.conv) {
            sgd_step(&mut layer.weights, gw, lr)?;
            sgd_step_slice(&mut layer.bias, gb, lr)?;
        }
        sgd_step(&mut self.fc4.weights, &grads.fc4.0, lr)?;
        sgd_step_slice(&mut self.fc4.bias, &grads.fc4.1, lr)?;
        sgd_step(&mut self.fc5.weights, &grads.fc5.0, lr)?;
        sgd_step_slice(&mut self.fc5.bias, &grads.fc5.1, lr)?;
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        self.conv.iter().map(|l| l.param_count()).sum::<usize>()
            + self.fc4.param_count()
            + self.fc5.param_count()
    }

    /// All parameters as one flat vector: conv1 w/b, conv2 w/b, conv3 w/b,
    /// fc4 w/b, fc5 w/b.
    pub fn params_flat(&self) -> Vec<f64> {
        let mut parts: Vec<&[f64]> = Vec::new();
        for layer in &self.conv {
            parts.push(layer.weights.data());
            parts.push(&layer.bias);
        }
        parts.push(self.fc4.weights.data());
        parts.push(&self.fc4.bias);
        parts.push(self.fc5.weights.data());
        parts.push(&self.fc5.bias);
        flatten_params(&parts)
    }

    pub fn set_params_flat(&mut self, flat: &[f64]) -> Result<()> {
        let mut parts: Vec<&mut [f64]> = Vec::new();
        for layer in &mut self.conv {
            parts.push(layer.weights.data_mut());
            parts.push(&mut layer.bias);
        }
        parts.push(self.fc4.weights.data_mut());
        parts.push(&mut self.fc4.bias);
        parts.push(self.fc5.weights.data_mut());
        parts.push(&mut self.fc5.bias);
        assign_params(&mut parts, flat)
    }
}

pub(crate) fn check_dropout(rate: f64) -> Result<()> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::InvalidParam {
            name: "dropout_rate",
            message: format!("must be in [0, 1), got {rate}"),
        });
    }
    Ok(())
}

pub(crate) fn check_input(context: &'static str, images: &Tensor, side: usize) -> Result<()> {
    let (_b, c, h, w) = images.dims4(context)?;
    if c != 1 {
        return Err(Error::AxisMismatch {
            context,
            axis: "channels",
            expected: 1,
            got: c,
        });
    }
    if h != side || w != side {
        return Err(Error::ShapeMismatch {
            context,
            expected: vec![side, side],
            got: vec![h, w],
        });
    }
    Ok(())
}

/// Shared head forward: trunk, flatten, fc4 + ReLU + dropout, fc5, softmax.
/// Used by the single-channel net and by each channel of the dual net.
pub(crate) fn classifier_forward(
    exec: &Exec,
    conv: &[&ConvLayerParams],
    fc4: &FcLayerParams,
    fc5: &FcLayerParams,
    dropout_rate: f64,
    images: &Tensor,
    dropout_rng: Option<&mut ChaCha8Rng>,
) -> Result<(Tensor, ClassifierCache)> {
    let stack = stack_forward(exec, conv, images)?;
    let b = images.shape()[0];
    let features = stack.output.len() / b.max(1);
    let flat = stack.output.reshape(&[b, features])?;
    let fc4_pre = fc_forward_with(exec, &flat, fc4)?;
    let fc4_act = relu(&fc4_pre);
    let mask = match dropout_rng {
        Some(rng) if dropout_rate > 0.0 => {
            crate::kernels::dropout_mask(fc4_act.shape(), dropout_rate, rng)?
        }
        _ => DropoutMask::identity(fc4_act.shape()),
    };
    let fc4_dropped = mask.apply(&fc4_act)?;
    let logits = fc_forward_with(exec, &fc4_dropped, fc5)?;
    let probs = softmax_with(exec, &logits)?;
    Ok((
        probs.clone(),
        ClassifierCache {
            stack,
            flat,
            fc4_pre,
            mask,
            fc4_dropped,
            probs,
        },
    ))
}

/// Shared head backward, mirroring [`classifier_forward`].
pub(crate) fn classifier_backward(
    exec: &Exec,
    conv: &[&ConvLayerParams],
    fc4: &FcLayerParams,
    fc5: &FcLayerParams,
    cache: &ClassifierCache,
    grad_logits: &Tensor,
) -> Result<ClassifierGrads> {
    let (g_dropped, gw5, gb5) = fc_backward_with(exec, &cache.fc4_dropped, fc5, grad_logits)?;
    let g_act = cache.mask.apply(&g_dropped)?;
    let g_fc4_pre = relu_backward(&cache.fc4_pre, &g_act)?;
    let (g_flat, gw4, gb4) = fc_backward_with(exec, &cache.flat, fc4, &g_fc4_pre)?;
    let g_stack_out = g_flat.reshape(cache.stack.output.shape())?;
    let (_, conv_grads) = stack_backward(exec, conv, &cache.stack, &g_stack_out)?;
    Ok(ClassifierGrads {
        conv: conv_grads,
        fc4: (gw4, gb4),
        fc5: (gw5, gb5),
    })
}
