//! Shared-storage semantics of the coupled networks: degenerate couplings
//! collapse to the single-channel architectures bit for bit, shared filters
//! are one storage location (not synchronized copies), and decoupling keeps
//! exactly the deployment path.

use rand::Rng;
use vlrr_core::exec::Exec;
use vlrr_core::loss::mse_loss;
use vlrr_core::models::{
    attach_dual_heads, Channel, CouplingConfig, NetworkConfig, Pcsrn, SrNet,
};
use vlrr_core::rng::{RandomState, StreamTag};
use vlrr_core::tensor::Tensor;

fn config() -> NetworkConfig {
    NetworkConfig {
        filters: [4, 3, 2],
        filter_sizes: [3, 3, 1],
        fc_width: 6,
        class_count: 3,
    }
}

fn batch(n: usize, side: usize, key: u64) -> Tensor {
    let rs = RandomState::new(0xbeef);
    let mut rng = rs.substream(StreamTag::Synth, key);
    let mut t = Tensor::zeros(&[n, 1, side, side]);
    for v in t.data_mut() {
        *v = rng.random::<f64>() - 0.5;
    }
    t
}

#[test]
fn zero_coupling_low_resolution_channel_is_the_standalone_subnet() {
    let rs = RandomState::new(5);
    let coupled = Pcsrn::build(&config(), &CouplingConfig::none(), &rs).unwrap();
    let standalone = SrNet::build(&config(), &rs).unwrap();
    assert_eq!(coupled.channel_sr(Channel::Lr), standalone);
}

#[test]
fn full_coupling_makes_both_channels_identical() {
    let rs = RandomState::new(6);
    let cfg = config();
    let coupled = Pcsrn::build(&cfg, &CouplingConfig::full(&cfg), &rs).unwrap();
    // All filters shared: the channels differ only in their reconstruction
    // heads.
    for layer in 0..3 {
        assert_eq!(
            coupled.channel_layers(Channel::Lr)[layer],
            coupled.channel_layers(Channel::Hr)[layer]
        );
    }
    let input = batch(2, 8, 1);
    let exec = Exec::sequential();
    let lr_trunk = coupled.channel_layers(Channel::Lr);
    let hr_trunk = coupled.channel_layers(Channel::Hr);
    assert_eq!(lr_trunk, hr_trunk);
    let (lr_out, _) = coupled.forward_train(&exec, Channel::Lr, &input).unwrap();
    let (hr_out, _) = coupled.forward_train(&exec, Channel::Hr, &input).unwrap();
    // Heads are drawn per channel, so outputs still differ.
    assert_ne!(lr_out, hr_out);
}

/// Shared filters live in one place: a training step through EITHER channel
/// moves the shared storage that both channels' effective layers read.
#[test]
fn shared_bank_is_single_storage_not_copies() {
    let rs = RandomState::new(7);
    let cfg = config();
    let coupling = CouplingConfig {
        shared: [2, 2, 1],
    };
    let mut net = Pcsrn::build(&cfg, &coupling, &rs).unwrap();
    let exec = Exec::sequential();
    let input = batch(2, 8, 2);
    let target = batch(2, 8, 3);

    let lr_before = net.layers[0].effective(Channel::Lr);
    let hr_before = net.layers[0].effective(Channel::Hr);

    let (lr_recon, lr_cache) = net.forward_train(&exec, Channel::Lr, &input).unwrap();
    let (_, g_lr) = mse_loss(&lr_recon, &target).unwrap();
    // Gradient flows through the low-resolution channel only.
    let grads = net.lr_backward(&exec, &lr_cache, &g_lr).unwrap();
    net.sgd_step(&grads, 0.5).unwrap();

    let lr_after = net.layers[0].effective(Channel::Lr);
    let hr_after = net.layers[0].effective(Channel::Hr);

    let k = coupling.shared[0];
    let f = cfg.filter_sizes[0];
    let filter_len = f * f; // single input channel in layer 1
    // Shared rows moved in BOTH channels' effective views, identically.
    assert_ne!(
        lr_after.weights.data()[..k * filter_len],
        lr_before.weights.data()[..k * filter_len]
    );
    assert_eq!(
        lr_after.weights.data()[..k * filter_len],
        hr_after.weights.data()[..k * filter_len]
    );
    // Private high-resolution rows saw no gradient and must be untouched.
    assert_eq!(
        hr_after.weights.data()[k * filter_len..],
        hr_before.weights.data()[k * filter_len..]
    );
    // Private low-resolution rows did train.
    assert_ne!(
        lr_after.weights.data()[k * filter_len..],
        lr_before.weights.data()[k * filter_len..]
    );
}

/// Decoupling drops the high-resolution channel: predictions of the
/// decoupled classifier equal the dual network's low-resolution channel
/// bit for bit, and mutating high-resolution private parts afterwards
/// changes nothing.
#[test]
fn decoupled_predictions_match_low_resolution_channel() {
    let rs = RandomState::new(8);
    let cfg = config();
    let coupling = CouplingConfig {
        shared: [2, 1, 1],
    };
    let pcsrn = Pcsrn::build(&cfg, &coupling, &rs).unwrap();
    let mut dual = attach_dual_heads(&pcsrn, &cfg, 8, 0.0, &rs).unwrap();
    let input = batch(3, 8, 4);

    let from_dual = dual.forward_channel(Channel::Lr, &input).unwrap();
    let decoupled = dual.decouple().unwrap();
    let from_decoupled = decoupled.forward(&input).unwrap();
    assert_eq!(from_dual, from_decoupled);

    // Poison the high-resolution private parts; the decoupled model must
    // not see it.
    for layer in 0..3 {
        for v in dual.private_part_mut(layer, Channel::Hr).weights.data_mut() {
            *v = 1e9;
        }
    }
    let decoupled_again = dual.decouple().unwrap();
    assert_eq!(decoupled_again.forward(&input).unwrap(), from_decoupled);
}

/// A gradient step on a coupled layer adds both channels' contributions to
/// the shared rows; hand-checked against scalar arithmetic.
#[test]
fn shared_gradient_accumulates_both_channels() {
    let rs = RandomState::new(9);
    let cfg = config();
    let coupling = CouplingConfig {
        shared: [2, 1, 1],
    };
    let net = Pcsrn::build(&cfg, &coupling, &rs).unwrap();
    let exec = Exec::sequential();
    let lr_in = batch(2, 8, 5);
    let hr_in = batch(2, 8, 6);
    let target = batch(2, 8, 7);

    let (lr_recon, lr_cache) = net.forward_train(&exec, Channel::Lr, &lr_in).unwrap();
    let (hr_recon, hr_cache) = net.forward_train(&exec, Channel::Hr, &hr_in).unwrap();
    let (_, g_lr) = mse_loss(&lr_recon, &target).unwrap();
    let (_, g_hr) = mse_loss(&hr_recon, &target).unwrap();

    // Dual gradients versus each channel alone: on shared rows the dual
    // gradient is exactly the sum (same accumulation order as the per-
    // channel backward passes, low-resolution part first).
    let dual = net
        .dual_backward(&exec, &lr_cache, &hr_cache, &g_lr, &g_hr)
        .unwrap();
    let zero = Tensor::zeros(g_hr.shape());
    let lr_only = net
        .dual_backward(&exec, &lr_cache, &hr_cache, &g_lr, &zero)
        .unwrap();
    let hr_only = net
        .dual_backward(&exec, &lr_cache, &hr_cache, &zero, &g_hr)
        .unwrap();
    for layer in 0..3 {
        let d = dual.layers[layer].shared.0.data();
        let a = lr_only.layers[layer].shared.0.data();
        let b = hr_only.layers[layer].shared.0.data();
        for i in 0..d.len() {
            assert!(
                (d[i] - (a[i] + b[i])).abs() < 1e-12,
                "layer {layer} index {i}: {} vs {} + {}",
                d[i],
                a[i],
                b[i]
            );
        }
    }
}
