//! Partially coupled dual-channel networks.
//!
//! Two channels run the same trunk geometry: the low-resolution channel maps
//! degraded inputs to high-resolution targets, the high-resolution channel
//! maps clean inputs to themselves. Layer i keeps its first k_i filters in
//! single shared storage used by both channels; the remaining n_i - k_i
//! filters are private per channel. Gradients from both channels accumulate
//! into the shared filters, so supervision transfers between resolutions
//! without forcing the channels to agree everywhere.
//!
//! At test time only the low-resolution channel matters:
//! [`DualClassifierNet::decouple`] materialises it (shared plus private
//! filters) as a plain single-channel classifier that never touches
//! high-resolution inputs.

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::kernels::{conv2d_backward_with, conv2d_forward_with, ConvLayerParams, FcLayerParams};
use crate::models::classifier::{
    check_dropout, check_input, classifier_backward, classifier_forward, ClassifierCache,
    ClassifierGrads, ClassifierNet,
};
use crate::models::sr::{SrCache, SrGrads, SrNet};
use crate::models::stack::{stack_backward, stack_forward};
use crate::models::{
    assign_params, flatten_params, gaussian_conv_init, gaussian_fc_init, init_stream,
    CouplingConfig, NetworkConfig, RECON_FILTER_SIZE,
};
use crate::optim::{sgd_step, sgd_step_slice};
use crate::rng::{ChaCha8Rng, RandomState};
use crate::tensor::Tensor;

/// The two processing channels of a coupled network.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Channel {
    /// Degraded input -> high-resolution target; survives decoupling.
    Lr,
    /// Clean input -> itself; exists only to steer the shared filters.
    Hr,
}

impl Channel {
    pub fn index(self) -> usize {
        match self {
            Channel::Lr => 0,
            Channel::Hr => 1,
        }
    }
}

/// One trunk layer with single-storage sharing: `shared` holds the first k
/// filters used by both channels, `private_lr`/`private_hr` the remaining
/// n - k per channel. A channel's effective filter bank is the
/// concatenation shared ++ private, in that order.
#[derive(Debug, Clone, PartialEq)]
pub struct CoupledConvLayer {
    pub shared: ConvLayerParams,
    pub private_lr: ConvLayerParams,
    pub private_hr: ConvLayerParams,
}

/// Gradients for one coupled layer. `shared` already accumulates both
/// channels' contributions.
pub struct CoupledLayerGrads {
    pub shared: (Tensor, Vec<f64>),
    pub lr: (Tensor, Vec<f64>),
    pub hr: (Tensor, Vec<f64>),
}

impl CoupledConvLayer {
    /// Draws both channels' full banks from their channel-keyed streams and
    /// splits at `k`: the shared slice comes from the low-resolution
    /// channel's draws, so at k = n the layer *is* that channel's bank and
    /// at k = 0 both channels keep exactly their standalone draws.
    pub fn init(
        out_channels: usize,
        in_channels: usize,
        filter_size: usize,
        k: usize,
        rs: &RandomState,
        slot: usize,
    ) -> Result<Self> {
        if k > out_channels {
            return Err(Error::InvalidParam {
                name: "k",
                message: format!("cannot share {k} of {out_channels} filters"),
            });
        }
        let lr_bank = gaussian_conv_init(
            out_channels,
            in_channels,
            filter_size,
            &mut init_stream(rs, Channel::Lr.index(), slot),
        )?;
        let hr_bank = gaussian_conv_init(
            out_channels,
            in_channels,
            filter_size,
            &mut init_stream(rs, Channel::Hr.index(), slot),
        )?;
        let (shared, private_lr) = split_bank(&lr_bank, k)?;
        let (_, private_hr) = split_bank(&hr_bank, k)?;
        Ok(Self {
            shared,
            private_lr,
            private_hr,
        })
    }

    pub fn shared_filters(&self) -> usize {
        self.shared.out_channels()
    }

    pub fn total_filters(&self) -> usize {
        self.shared.out_channels() + self.private_lr.out_channels()
    }

    pub fn in_channels(&self) -> usize {
        self.shared.weights.shape()[1]
    }

    pub fn filter_size(&self) -> usize {
        self.shared.weights.shape()[2]
    }

    pub fn validate(&self, context: &'static str) -> Result<()> {
        for part in [&self.shared, &self.private_lr, &self.private_hr] {
            part.validate(context)?;
        }
        let same_geom = |a: &ConvLayerParams| {
            a.weights.shape()[1] == self.in_channels()
                && a.weights.shape()[2] == self.filter_size()
        };
        if !same_geom(&self.private_lr) || !same_geom(&self.private_hr) {
            return Err(Error::InvalidParam {
                name: "coupled_layer",
                message: "shared and private parts disagree on geometry".into(),
            });
        }
        if self.private_lr.out_channels() != self.private_hr.out_channels() {
            return Err(Error::AxisMismatch {
                context,
                axis: "private filters",
                expected: self.private_lr.out_channels(),
                got: self.private_hr.out_channels(),
            });
        }
        Ok(())
    }

    fn private(&self, ch: Channel) -> &ConvLayerParams {
        match ch {
            Channel::Lr => &self.private_lr,
            Channel::Hr => &self.private_hr,
        }
    }

    fn private_mut(&mut self, ch: Channel) -> &mut ConvLayerParams {
        match ch {
            Channel::Lr => &mut self.private_lr,
            Channel::Hr => &mut self.private_hr,
        }
    }

    /// Materialises a channel's effective bank: shared filters first, then
    /// the channel's private filters.
    pub fn effective(&self, ch: Channel) -> ConvLayerParams {
        let private = self.private(ch);
        let k = self.shared.out_channels();
        let p = private.out_channels();
        let mut weights = Vec::with_capacity(self.shared.weights.len() + private.weights.len());
        weights.extend_from_slice(self.shared.weights.data());
        weights.extend_from_slice(private.weights.data());
        let mut bias = Vec::with_capacity(k + p);
        bias.extend_from_slice(&self.shared.bias);
        bias.extend_from_slice(&private.bias);
        let shape = [k + p, self.in_channels(), self.filter_size(), self.filter_size()];
        ConvLayerParams {
            weights: Tensor::from_vec(&shape, weights).expect("bank geometry"),
            bias,
        }
    }

    /// Splits a gradient over a channel's effective bank into (shared part,
    /// private part) at the k boundary.
    pub fn split_bank_grads(
        &self,
        grad_weights: &Tensor,
        grad_bias: &[f64],
    ) -> Result<((Tensor, Vec<f64>), (Tensor, Vec<f64>))> {
        let k = self.shared.out_channels();
        let total = self.total_filters();
        if grad_weights.shape()[0] != total || grad_bias.len() != total {
            return Err(Error::AxisMismatch {
                context: "split_bank_grads",
                axis: "filters",
                expected: total,
                got: grad_weights.shape()[0],
            });
        }
        let row = self.in_channels() * self.filter_size() * self.filter_size();
        let (sw, pw) = grad_weights.data().split_at(k * row);
        let shared = (
            Tensor::from_vec(self.shared.weights.shape(), sw.to_vec())?,
            grad_bias[..k].to_vec(),
        );
        let private = (
            Tensor::from_vec(self.private_lr.weights.shape(), pw.to_vec())?,
            grad_bias[k..].to_vec(),
        );
        Ok((shared, private))
    }
}

fn split_bank(bank: &ConvLayerParams, k: usize) -> Result<(ConvLayerParams, ConvLayerParams)> {
    let (n, in_c, f, _) = bank.weights.dims4("split_bank")?;
    let row = in_c * f * f;
    let (sw, pw) = bank.weights.data().split_at(k * row);
    let shared = ConvLayerParams {
        weights: Tensor::from_vec(&[k, in_c, f, f], sw.to_vec())?,
        bias: bank.bias[..k].to_vec(),
    };
    let private = ConvLayerParams {
        weights: Tensor::from_vec(&[n - k, in_c, f, f], pw.to_vec())?,
        bias: bank.bias[k..].to_vec(),
    };
    Ok((shared, private))
}

/// Splits both channels' effective-bank gradients at the sharing boundary
/// and accumulates the shared parts (low-resolution contribution first,
/// then high-resolution, elementwise).
pub fn coupled_backward(
    layer: &CoupledConvLayer,
    lr_bank: (&Tensor, &[f64]),
    hr_bank: (&Tensor, &[f64]),
) -> Result<CoupledLayerGrads> {
    let (lr_shared, lr_private) = layer.split_bank_grads(lr_bank.0, lr_bank.1)?;
    let (hr_shared, hr_private) = layer.split_bank_grads(hr_bank.0, hr_bank.1)?;
    let mut shared_w = lr_shared.0;
    for (a, b) in shared_w.data_mut().iter_mut().zip(hr_shared.0.data()) {
        *a += b;
    }
    let mut shared_b = lr_shared.1;
    for (a, b) in shared_b.iter_mut().zip(&hr_shared.1) {
        *a += b;
    }
    Ok(CoupledLayerGrads {
        shared: (shared_w, shared_b),
        lr: lr_private,
        hr: hr_private,
    })
}

impl CoupledConvLayer {
    /// Applies one SGD step to all three storage parts.
    pub fn sgd_step(&mut self, g: &CoupledLayerGrads, lr: f64) -> Result<()> {
        sgd_step(&mut self.shared.weights, &g.shared.0, lr)?;
        sgd_step_slice(&mut self.shared.bias, &g.shared.1, lr)?;
        sgd_step(&mut self.private_lr.weights, &g.lr.0, lr)?;
        sgd_step_slice(&mut self.private_lr.bias, &g.lr.1, lr)?;
        sgd_step(&mut self.private_hr.weights, &g.hr.0, lr)?;
        sgd_step_slice(&mut self.private_hr.bias, &g.hr.1, lr)?;
        Ok(())
    }
}

/// Partially coupled super-resolution network: a coupled trunk plus one
/// private reconstruction head per channel. This is the pre-training stage
/// of the dual-channel models.
#[derive(Debug, Clone, PartialEq)]
pub struct Pcsrn {
    pub layers: [CoupledConvLayer; 3],
    pub conv4_lr: ConvLayerParams,
    pub conv4_hr: ConvLayerParams,
}

/// Gradients for the whole coupled reconstruction network.
pub struct PcsrnGrads {
    pub layers: Vec<CoupledLayerGrads>,
    pub conv4_lr: (Tensor, Vec<f64>),
    pub conv4_hr: (Tensor, Vec<f64>),
}

impl Pcsrn {
    pub fn build(config: &NetworkConfig, coupling: &CouplingConfig, rs: &RandomState) -> Result<Self> {
        config.validate()?;
        coupling.validate(config)?;
        let [n1, n2, n3] = config.filters;
        let [f1, f2, f3] = config.filter_sizes;
        let layers = [
            CoupledConvLayer::init(n1, 1, f1, coupling.shared[0], rs, 0)?,
            CoupledConvLayer::init(n2, n1, f2, coupling.shared[1], rs, 1)?,
            CoupledConvLayer::init(n3, n2, f3, coupling.shared[2], rs, 2)?,
        ];
        let conv4_lr = gaussian_conv_init(
            1,
            n3,
            RECON_FILTER_SIZE,
            &mut init_stream(rs, Channel::Lr.index(), 3),
        )?;
        let conv4_hr = gaussian_conv_init(
            1,
            n3,
            RECON_FILTER_SIZE,
            &mut init_stream(rs, Channel::Hr.index(), 3),
        )?;
        Ok(Self {
            layers,
            conv4_lr,
            conv4_hr,
        })
    }

    pub fn validate(&self) -> Result<()> {
        for layer in &self.layers {
            layer.validate("Pcsrn")?;
        }
        for i in 0..2 {
            if self.layers[i + 1].in_channels() != self.layers[i].total_filters() {
                return Err(Error::AxisMismatch {
                    context: "Pcsrn",
                    axis: "in_channels",
                    expected: self.layers[i].total_filters(),
                    got: self.layers[i + 1].in_channels(),
                });
            }
        }
        for conv4 in [&self.conv4_lr, &self.conv4_hr] {
            conv4.validate("Pcsrn")?;
            if conv4.in_channels() != self.layers[2].total_filters() || conv4.out_channels() != 1 {
                return Err(Error::AxisMismatch {
                    context: "Pcsrn",
                    axis: "conv4.in_channels",
                    expected: self.layers[2].total_filters(),
                    got: conv4.in_channels(),
                });
            }
        }
        Ok(())
    }

    pub fn shared_counts(&self) -> [usize; 3] {
        [
            self.layers[0].shared_filters(),
            self.layers[1].shared_filters(),
            self.layers[2].shared_filters(),
        ]
    }

    pub fn conv4(&self, ch: Channel) -> &ConvLayerParams {
        match ch {
            Channel::Lr => &self.conv4_lr,
            Channel::Hr => &self.conv4_hr,
        }
    }

    /// Materialises a channel's effective trunk banks.
    pub fn channel_layers(&self, ch: Channel) -> [ConvLayerParams; 3] {
        [
            self.layers[0].effective(ch),
            self.layers[1].effective(ch),
            self.layers[2].effective(ch),
        ]
    }

    /// A standalone single-channel view of one channel (copies parameters).
    pub fn channel_sr(&self, ch: Channel) -> SrNet {
        SrNet {
            conv: self.channel_layers(ch),
            conv4: self.conv4(ch).clone(),
        }
    }

    /// Reconstruction through one channel.
    pub fn forward_train(
        &self,
        exec: &Exec,
        ch: Channel,
        images: &Tensor,
    ) -> Result<(Tensor, SrCache)> {
        let layers = self.channel_layers(ch);
        let refs: Vec<&ConvLayerParams> = layers.iter().collect();
        let stack = stack_forward(exec, &refs, images)?;
        let recon = conv2d_forward_with(exec, &stack.output, self.conv4(ch))?;
        Ok((recon, SrCache { stack }))
    }

    /// Per-channel backward over the materialised banks; the result is in
    /// effective-bank coordinates, ready for [`coupled_backward`].
    fn channel_backward(
        &self,
        exec: &Exec,
        ch: Channel,
        cache: &SrCache,
        grad_recon: &Tensor,
    ) -> Result<SrGrads> {
        let layers = self.channel_layers(ch);
        let refs: Vec<&ConvLayerParams> = layers.iter().collect();
        let (g_stack_out, gw4, gb4) =
            conv2d_backward_with(exec, &cache.stack.output, self.conv4(ch), grad_recon)?;
        let (_, conv_grads) = stack_backward(exec, &refs, &cache.stack, &g_stack_out)?;
        Ok(SrGrads {
            conv: conv_grads,
            conv4: (gw4, gb4),
        })
    }

    /// Backward pass for one step that ran both channels. Shared filters
    /// accumulate both channels' gradients.
    pub fn dual_backward(
        &self,
        exec: &Exec,
        lr_cache: &SrCache,
        hr_cache: &SrCache,
        grad_lr_recon: &Tensor,
        grad_hr_recon: &Tensor,
    ) -> Result<PcsrnGrads> {
        let lr_grads = self.channel_backward(exec, Channel::Lr, lr_cache, grad_lr_recon)?;
        let hr_grads = self.channel_backward(exec, Channel::Hr, hr_cache, grad_hr_recon)?;
        let mut layers = Vec::with_capacity(3);
        for i in 0..3 {
            layers.push(coupled_backward(
                &self.layers[i],
                (&lr_grads.conv[i].0, &lr_grads.conv[i].1),
                (&hr_grads.conv[i].0, &hr_grads.conv[i].1),
            )?);
        }
        Ok(PcsrnGrads {
            layers,
            conv4_lr: lr_grads.conv4,
            conv4_hr: hr_grads.conv4,
        })
    }

    /// Backward pass for a step that ran the low-resolution channel only
    /// (the high-resolution contribution is zero).
    pub fn lr_backward(
        &self,
        exec: &Exec,
        lr_cache: &SrCache,
        grad_lr_recon: &Tensor,
    ) -> Result<PcsrnGrads> {
        let lr_grads = self.channel_backward(exec, Channel::Lr, lr_cache, grad_lr_recon)?;
        let mut layers = Vec::with_capacity(3);
        for (i, layer) in self.layers.iter().enumerate() {
            let (shared, private) =
                layer.split_bank_grads(&lr_grads.conv[i].0, &lr_grads.conv[i].1)?;
            let hr = (
                Tensor::zeros(layer.private_hr.weights.shape()),
                vec![0.0; layer.private_hr.bias.len()],
            );
            layers.push(CoupledLayerGrads {
                shared,
                lr: private,
                hr,
            });
        }
        Ok(PcsrnGrads {
            layers,
            conv4_lr: lr_grads.conv4,
            conv4_hr: (
                Tensor::zeros(self.conv4_hr.weights.shape()),
                vec![0.0; self.conv4_hr.bias.len()],
            ),
        })
    }

    pub fn sgd_step(&mut self, grads: &PcsrnGrads, lr: f64) -> Result<()> {
        for (layer, g) in self.layers.iter_mut().zip(&grads.layers) {
            layer.sgd_step(g, lr)?;
        }
        sgd_step(&mut self.conv4_lr.weights, &grads.conv4_lr.0, lr)?;
        sgd_step_slice(&mut self.conv4_lr.bias, &grads.conv4_lr.1, lr)?;
        sgd_step(&mut self.conv4_hr.weights, &grads.conv4_hr.0, lr)?;
        sgd_step_slice(&mut self.conv4_hr.bias, &grads.conv4_hr.1, lr)?;
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| {
                l.shared.param_count() + l.private_lr.param_count() + l.private_hr.param_count()
            })
            .sum::<usize>()
            + self.conv4_lr.param_count()
            + self.conv4_hr.param_count()
    }

    /// Flat parameters with shared storage appearing once: per layer
    /// shared w/b, lr w/b, hr w/b; then conv4_lr w/b, conv4_hr w/b.
    pub fn params_flat(&self) -> Vec<f64> {
        let mut parts: Vec<&[f64]> = Vec::new();
        for layer in &self.layers {
            parts.push(layer.shared.weights.data());
            parts.push(&layer.shared.bias);
            parts.push(layer.private_lr.weights.data());
            parts.push(&layer.private_lr.bias);
            parts.push(layer.private_hr.weights.data());
            parts.push(&layer.private_hr.bias);
        }
        parts.push(self.conv4_lr.weights.data());
        parts.push(&self.conv4_lr.bias);
        parts.push(self.conv4_hr.weights.data());
        parts.push(&self.conv4_hr.bias);
        flatten_params(&parts)
    }

    pub fn set_params_flat(&mut self, flat: &[f64]) -> Result<()> {
        let mut parts: Vec<&mut [f64]> = Vec::new();
        for layer in &mut self.layers {
            parts.push(layer.shared.weights.data_mut());
            parts.push(&mut layer.shared.bias);
            parts.push(layer.private_lr.weights.data_mut());
            parts.push(&mut layer.private_lr.bias);
            parts.push(layer.private_hr.weights.data_mut());
            parts.push(&mut layer.private_hr.bias);
        }
        parts.push(self.conv4_lr.weights.data_mut());
        parts.push(&mut self.conv4_lr.bias);
        parts.push(self.conv4_hr.weights.data_mut());
        parts.push(&mut self.conv4_hr.bias);
        assign_params(&mut parts, flat)
    }

    /// Flat gradients matching [`Pcsrn::params_flat`].
    pub fn grads_flat(grads: &PcsrnGrads) -> Vec<f64> {
        let mut parts: Vec<&[f64]> = Vec::new();
        for g in &grads.layers {
            parts.push(g.shared.0.data());
            parts.push(&g.shared.1);
            parts.push(g.lr.0.data());
            parts.push(&g.lr.1);
            parts.push(g.hr.0.data());
            parts.push(&g.hr.1);
        }
        parts.push(grads.conv4_lr.0.data());
        parts.push(&grads.conv4_lr.1);
        parts.push(grads.conv4_hr.0.data());
        parts.push(&grads.conv4_hr.1);
        flatten_params(&parts)
    }
}

/// Dual-channel classifier: the coupled trunk with a private fc head per
/// channel. Produced by [`attach_dual_heads`] after coupled pre-training.
#[derive(Debug, Clone, PartialEq)]
pub struct DualClassifierNet {
    pub layers: [CoupledConvLayer; 3],
    pub fc4_lr: FcLayerParams,
    pub fc5_lr: FcLayerParams,
    pub fc4_hr: FcLayerParams,
    pub fc5_hr: FcLayerParams,
    pub dropout_rate: f64,
    pub input_side: usize,
}

/// Gradients for the dual classifier; shared trunk parts accumulate both
/// channels.
pub struct DualGrads {
    pub layers: Vec<CoupledLayerGrads>,
    pub fc4_lr: (Tensor, Vec<f64>),
    pub fc5_lr: (Tensor, Vec<f64>),
    pub fc4_hr: (Tensor, Vec<f64>),
    pub fc5_hr: (Tensor, Vec<f64>),
}

/// Replaces a coupled reconstruction network's heads with per-channel
/// classification heads, keeping the trunk (and its sharing) bit for bit.
pub fn attach_dual_heads(
    pcsrn: &Pcsrn,
    config: &NetworkConfig,
    input_side: usize,
    dropout_rate: f64,
    rs: &RandomState,
) -> Result<DualClassifierNet> {
    pcsrn.validate()?;
    config.validate()?;
    check_dropout(dropout_rate)?;
    for i in 0..3 {
        if pcsrn.layers[i].total_filters() != config.filters[i] {
            return Err(Error::AxisMismatch {
                context: "attach_dual_heads",
                axis: "filters",
                expected: config.filters[i],
                got: pcsrn.layers[i].total_filters(),
            });
        }
    }
    let features = config.filters[2] * input_side * input_side;
    let fc4_lr = gaussian_fc_init(
        config.fc_width,
        features,
        &mut init_stream(rs, Channel::Lr.index(), 4),
    )?;
    let fc5_lr = gaussian_fc_init(
        config.class_count,
        config.fc_width,
        &mut init_stream(rs, Channel::Lr.index(), 5),
    )?;
    let fc4_hr = gaussian_fc_init(
        config.fc_width,
        features,
        &mut init_stream(rs, Channel::Hr.index(), 4),
    )?;
    let fc5_hr = gaussian_fc_init(
        config.class_count,
        config.fc_width,
        &mut init_stream(rs, Channel::Hr.index(), 5),
    )?;
    Ok(DualClassifierNet {
        layers: pcsrn.layers.clone(),
        fc4_lr,
        fc5_lr,
        fc4_hr,
        fc5_hr,
        dropout_rate,
        input_side,
    })
}

impl DualClassifierNet {
    pub fn validate(&self) -> Result<()> {
        check_dropout(self.dropout_rate)?;
        for layer in &self.layers {
            layer.validate("DualClassifierNet")?;
        }
        for i in 0..2 {
            if self.layers[i + 1].in_channels() != self.layers[i].total_filters() {
                return Err(Error::AxisMismatch {
                    context: "DualClassifierNet",
                    axis: "in_channels",
                    expected: self.layers[i].total_filters(),
                    got: self.layers[i + 1].in_channels(),
                });
            }
        }
        let features = self.layers[2].total_filters() * self.input_side * self.input_side;
        for (fc4, fc5) in [(&self.fc4_lr, &self.fc5_lr), (&self.fc4_hr, &self.fc5_hr)] {
            fc4.validate("DualClassifierNet")?;
            fc5.validate("DualClassifierNet")?;
            if fc4.in_features() != features {
                return Err(Error::AxisMismatch {
                    context: "DualClassifierNet",
                    axis: "fc4.in_features",
                    expected: features,
                    got: fc4.in_features(),
                });
            }
            if fc5.in_features() != fc4.out_features() {
                return Err(Error::AxisMismatch {
                    context: "DualClassifierNet",
                    axis: "fc5.in_features",
                    expected: fc4.out_features(),
                    got: fc5.in_features(),
                });
            }
        }
        if self.fc5_lr.out_features() != self.fc5_hr.out_features() {
            return Err(Error::AxisMismatch {
                context: "DualClassifierNet",
                axis: "class_count",
                expected: self.fc5_lr.out_features(),
                got: self.fc5_hr.out_features(),
            });
        }
        Ok(())
    }

    pub fn class_count(&self) -> usize {
        self.fc5_lr.out_features()
    }

    pub fn shared_counts(&self) -> [usize; 3] {
        [
            self.layers[0].shared_filters(),
            self.layers[1].shared_filters(),
            self.layers[2].shared_filters(),
        ]
    }

    fn head(&self, ch: Channel) -> (&FcLayerParams, &FcLayerParams) {
        match ch {
            Channel::Lr => (&self.fc4_lr, &self.fc5_lr),
            Channel::Hr => (&self.fc4_hr, &self.fc5_hr),
        }
    }

    /// Materialises a channel's effective trunk banks.
    pub fn channel_layers(&self, ch: Channel) -> [ConvLayerParams; 3] {
        [
            self.layers[0].effective(ch),
            self.layers[1].effective(ch),
            self.layers[2].effective(ch),
        ]
    }

    /// Training forward pass through one channel.
    pub fn forward_channel_train(
        &self,
        exec: &Exec,
        ch: Channel,
        images: &Tensor,
        dropout_rng: Option<&mut ChaCha8Rng>,
    ) -> Result<(Tensor, ClassifierCache)> {
        check_input("DualClassifierNet::forward", images, self.input_side)?;
        let layers = self.channel_layers(ch);
        let refs: Vec<&ConvLayerParams> = layers.iter().collect();
        let (fc4, fc5) = self.head(ch);
        classifier_forward(exec, &refs, fc4, fc5, self.dropout_rate, images, dropout_rng)
    }

    /// Evaluation probabilities through one channel (dropout off).
    pub fn forward_channel(&self, ch: Channel, images: &Tensor) -> Result<Tensor> {
        let (probs, _) = self.forward_channel_train(Exec::global(), ch, images, None)?;
        Ok(probs)
    }

    fn channel_backward(
        &self,
        exec: &Exec,
        ch: Channel,
        cache: &ClassifierCache,
        grad_logits: &Tensor,
    ) -> Result<ClassifierGrads> {
        let layers = self.channel_layers(ch);
        let refs: Vec<&ConvLayerParams> = layers.iter().collect();
        let (fc4, fc5) = self.head(ch);
        classifier_backward(exec, &refs, fc4, fc5, cache, grad_logits)
    }

    /// Backward for a step that ran both channels; trunk gradients from the
    /// two channels accumulate into the shared filters.
    pub fn backward_dual(
        &self,
        exec: &Exec,
        lr_cache: &ClassifierCache,
        hr_cache: &ClassifierCache,
        grad_lr_logits: &Tensor,
        grad_hr_logits: &Tensor,
    ) -> Result<DualGrads> {
        let lr_grads = self.channel_backward(exec, Channel::Lr, lr_cache, grad_lr_logits)?;
        let hr_grads = self.channel_backward(exec, Channel::Hr, hr_cache, grad_hr_logits)?;
        let mut layers = Vec::with_capacity(3);
        for i in 0..3 {
            layers.push(coupled_backward(
                &self.layers[i],
                (&lr_grads.conv[i].0, &lr_grads.conv[i].1),
                (&hr_grads.conv[i].0, &hr_grads.conv[i].1),
            )?);
        }
        Ok(DualGrads {
            layers,
            fc4_lr: lr_grads.fc4,
            fc5_lr: lr_grads.fc5,
            fc4_hr: hr_grads.fc4,
            fc5_hr: hr_grads.fc5,
        })
    }

    pub fn sgd_step(&mut self, grads: &DualGrads, lr: f64) -> Result<()> {
        for (layer, g) in self.layers.iter_mut().zip(&grads.layers) {
            layer.sgd_step(g, lr)?;
        }
        sgd_step(&mut self.fc4_lr.weights, &grads.fc4_lr.0, lr)?;
        sgd_step_slice(&mut self.fc4_lr.bias, &grads.fc4_lr.1, lr)?;
        sgd_step(&mut self.fc5_lr.weights, &grads.fc5_lr.0, lr)?;
        sgd_step_slice(&mut self.fc5_lr.bias, &grads.fc5_lr.1, lr)?;
        sgd_step(&mut self.fc4_hr.weights, &grads.fc4_hr.0, lr)?;
        sgd_step_slice(&mut self.fc4_hr.bias, &grads.fc4_hr.1, lr)?;
        sgd_step(&mut self.fc5_hr.weights, &grads.fc5_hr.0, lr)?;
        sgd_step_slice(&mut self.fc5_hr.bias, &grads.fc5_hr.1, lr)?;
        Ok(())
    }

    /// Extracts the deployment model: the low-resolution channel's effective
    /// trunk (shared filters included) plus its fc head, as a plain
    /// single-channel classifier. High-resolution private parameters do not
    /// appear, so inference never depends on them.
    pub fn decouple(&self) -> Result<ClassifierNet> {
        ClassifierNet::from_parts(
            self.channel_layers(Channel::Lr),
            self.fc4_lr.clone(),
            self.fc5_lr.clone(),
            self.dropout_rate,
            self.input_side,
        )
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| {
                l.shared.param_count() + l.private_lr.param_count() + l.private_hr.param_count()
            })
            .sum::<usize>()
            + self.fc4_lr.param_count()
            + self.fc5_lr.param_count()
            + self.fc4_hr.param_count()
            + self.fc5_hr.param_count()
    }

    /// Flat parameters with shared storage once: per layer shared w/b,
    /// lr w/b, hr w/b; then fc4_lr, fc5_lr, fc4_hr, fc5_hr (w/b each).
    pub fn params_flat(&self) -> Vec<f64> {
        let mut parts: Vec<&[f64]> = Vec::new();
        for layer in &self.layers {
            parts.push(layer.shared.weights.data());
            parts.push(&layer.shared.bias);
            parts.push(layer.private_lr.weights.data());
            parts.push(&layer.private_lr.bias);
            parts.push(layer.private_hr.weights.data());
            parts.push(&layer.private_hr.bias);
        }
        for fc in [&self.fc4_lr, &self.fc5_lr, &self.fc4_hr, &self.fc5_hr] {
            parts.push(fc.weights.data());
            parts.push(&fc.bias);
        }
        flatten_params(&parts)
    }

    pub fn set_params_flat(&mut self, flat: &[f64]) -> Result<()> {
        let mut parts: Vec<&mut [f64]> = Vec::new();
        for layer in &mut self.layers {
            parts.push(layer.shared.weights.data_mut());
            parts.push(&mut layer.shared.bias);
            parts.push(layer.private_lr.weights.data_mut());
            parts.push(&mut layer.private_lr.bias);
            parts.push(layer.private_hr.weights.data_mut());
            parts.push(&mut layer.private_hr.bias);
        }
        for fc in [
            &mut self.fc4_lr,
            &mut self.fc5_lr,
            &mut self.fc4_hr,
            &mut self.fc5_hr,
        ] {
            parts.push(fc.weights.data_mut());
            parts.push(&mut fc.bias);
        }
        assign_params(&mut parts, flat)
    }

    /// Flat gradients matching [`DualClassifierNet::params_flat`].
    pub fn grads_flat(grads: &DualGrads) -> Vec<f64> {
        let mut parts: Vec<&[f64]> = Vec::new();
        for g in &grads.layers {
            parts.push(g.shared.0.data());
            parts.push(&g.shared.1);
            parts.push(g.lr.0.data());
            parts.push(&g.lr.1);
            parts.push(g.hr.0.data());
            parts.push(&g.hr.1);
        }
        for g in [&grads.fc4_lr, &grads.fc5_lr, &grads.fc4_hr, &grads.fc5_hr] {
            parts.push(g.0.data());
            parts.push(&g.1);
        }
        flatten_params(&parts)
    }

    /// Mutable access to one channel's private trunk parts, for tests that
    /// perturb them.
    pub fn private_part_mut(&mut self, layer: usize, ch: Channel) -> &mut ConvLayerParams {
        self.layers[layer].private_mut(ch)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_config() -> NetworkConfig {
        NetworkConfig {
            filters: [4, 4, 2],
            filter_sizes: [3, 3, 1],
            fc_width: 6,
            class_count: 3,
        }
    }

    #[test]
    fn effective_banks_concat_shared_then_private() {
        let rs = RandomState::new(1);
        let layer = CoupledConvLayer::init(4, 1, 3, 2, &rs, 0).unwrap();
        let lr = layer.effective(Channel::Lr);
        let hr = layer.effective(Channel::Hr);
        assert_eq!(lr.out_channels(), 4);
        assert_eq!(hr.out_channels(), 4);
        // First k filters identical across channels (same storage).
        let row = 9;
        assert_eq!(lr.weights.data()[..2 * row], hr.weights.data()[..2 * row]);
        assert_eq!(lr.bias[..2], hr.bias[..2]);
        // Private tails differ (independent draws).
        assert_ne!(lr.weights.data()[2 * row..], hr.weights.data()[2 * row..]);
    }

    #[test]
    fn full_coupling_makes_channels_identical() {
        let rs = RandomState::new(2);
        let layer = CoupledConvLayer::init(4, 1, 3, 4, &rs, 0).unwrap();
        assert_eq!(layer.effective(Channel::Lr), layer.effective(Channel::Hr));
        assert_eq!(layer.private_lr.out_channels(), 0);
    }

    #[test]
    fn zero_coupling_matches_standalone_draws() {
        let rs = RandomState::new(3);
        let cfg = tiny_config();
        let pcsrn = Pcsrn::build(&cfg, &CouplingConfig::none(), &rs).unwrap();
        let standalone = SrNet::build(&cfg, &rs).unwrap();
        // The LR channel of an uncoupled net is exactly the standalone
        // subnet, bit for bit.
        assert_eq!(pcsrn.channel_sr(Channel::Lr), standalone);
    }

    #[test]
    fn full_coupling_shares_bank_with_standalone_draws() {
        let rs = RandomState::new(4);
        let cfg = tiny_config();
        let pcsrn = Pcsrn::build(&cfg, &CouplingConfig::full(&cfg), &rs).unwrap();
        let standalone = SrNet::build(&cfg, &rs).unwrap();
        for i in 0..3 {
            assert_eq!(pcsrn.layers[i].shared, standalone.conv[i]);
        }
    }

    #[test]
    fn coupled_backward_splits_and_accumulates() {
        let rs = RandomState::new(5);
        let layer = CoupledConvLayer::init(3, 1, 1, 1, &rs, 0).unwrap();
        let lr_gw = Tensor::from_vec(&[3, 1, 1, 1], vec![1.0, 2.0, 3.0]).unwrap();
        let hr_gw = Tensor::from_vec(&[3, 1, 1, 1], vec![10.0, 20.0, 30.0]).unwrap();
        let g = coupled_backward(
            &layer,
            (&lr_gw, &[0.1, 0.2, 0.3]),
            (&hr_gw, &[1.0, 2.0, 3.0]),
        )
        .unwrap();
        assert_eq!(g.shared.0.data(), &[11.0]);
        assert_eq!(g.shared.1, vec![1.1]);
        assert_eq!(g.lr.0.data(), &[2.0, 3.0]);
        assert_eq!(g.hr.0.data(), &[20.0, 30.0]);
    }

    #[test]
    fn shared_step_moves_both_channels() {
        let rs = RandomState::new(6);
        let cfg = tiny_config();
        let coupling = CouplingConfig {
            shared: [2, 2, 1],
        };
        let mut pcsrn = Pcsrn::build(&cfg, &coupling, &rs).unwrap();
        let images = Tensor::filled(&[1, 1, 8, 8], 0.3);
        let exec = Exec::sequential();
        let (_, lr_cache) = pcsrn.forward_train(&exec, Channel::Lr, &images).unwrap();
        let (_, hr_cache) = pcsrn.forward_train(&exec, Channel::Hr, &images).unwrap();
        let g_lr = Tensor::filled(&[1, 1, 8, 8], 0.5);
        let g_hr = Tensor::filled(&[1, 1, 8, 8], 0.25);
        let grads = pcsrn
            .dual_backward(&exec, &lr_cache, &hr_cache, &g_lr, &g_hr)
            .unwrap();
        pcsrn.sgd_step(&grads, 0.01).unwrap();
        // The first shared filter is the same object in both views.
        let lr_view = pcsrn.layers[0].effective(Channel::Lr);
        let hr_view = pcsrn.layers[0].effective(Channel::Hr);
        let row = 9;
        assert_eq!(
            lr_view.weights.data()[..2 * row],
            hr_view.weights.data()[..2 * row]
        );
    }

    #[test]
    fn decoupled_inference_ignores_hr_private_parts() {
        let rs = RandomState::new(7);
        let cfg = tiny_config();
        let coupling = CouplingConfig {
            shared: [2, 2, 1],
        };
        let pcsrn = Pcsrn::build(&cfg, &coupling, &rs).unwrap();
        let mut dual = attach_dual_heads(&pcsrn, &cfg, 8, 0.5, &rs).unwrap();
        let images = Tensor::filled(&[2, 1, 8, 8], 0.4);
        let single = dual.decouple().unwrap();
        let before = single.forward(&images).unwrap();
        // Trash every HR-private tensor; the decoupled model must not move.
        for i in 0..3 {
            for v in dual.private_part_mut(i, Channel::Hr).weights.data_mut() {
                *v += 100.0;
            }
        }
        for v in dual.fc4_hr.weights.data_mut() {
            *v -= 3.0;
        }
        let single_after = dual.decouple().unwrap();
        let after = single_after.forward(&images).unwrap();
        assert_eq!(before, after);
    }

    #[test]
    fn dual_params_flat_round_trip() {
        let rs = RandomState::new(8);
        let cfg = tiny_config();
        let pcsrn = Pcsrn::build(&cfg, &CouplingConfig { shared: [1, 3, 2] }, &rs).unwrap();
        let mut dual = attach_dual_heads(&pcsrn, &cfg, 8, 0.5, &rs).unwrap();
        let flat = dual.params_flat();
        assert_eq!(flat.len(), dual.param_count());
        let mut bumped = flat.clone();
        bumped[3] += 0.5;
        dual.set_params_flat(&bumped).unwrap();
        assert_eq!(dual.params_flat(), bumped);
    }

    #[test]
    fn attach_dual_heads_draws_per_channel_heads() {
        let rs = RandomState::new(9);
        let cfg = tiny_config();
        let pcsrn = Pcsrn::build(&cfg, &CouplingConfig::none(), &rs).unwrap();
        let dual = attach_dual_heads(&pcsrn, &cfg, 8, 0.5, &rs).unwrap();
        assert_ne!(dual.fc4_lr, dual.fc4_hr);
        assert_ne!(dual.fc5_lr, dual.fc5_hr);
        // The LR head matches a directly built classifier's head draws.
        let baseline =
            crate::models::ClassifierNet::build(&cfg, 8, 0.5, &rs).unwrap();
        assert_eq!(dual.fc4_lr, baseline.fc4);
        assert_eq!(dual.fc5_lr, baseline.fc5);
    }
}
