//! Training loops, schedules, evaluation, and the coupling-ratio search.
//!
//! Every run is a pure function of (parameters, data, seed): batch order,
//! noise augmentation, and dropout masks come from named substreams keyed by
//! channel, phase, and epoch, so repeating a call reproduces it bit for bit.
//! The keying also makes the degenerate couplings collapse exactly: with no
//! shared filters the low-resolution channel of a dual run consumes the same
//! streams as a single-channel run and follows the identical trajectory.
//!
//! Stream keys: shuffling is keyed by (phase, epoch) only — both channels of
//! a dual step see the same batch order — while noise and dropout are keyed
//! by (channel, phase, epoch) so each channel owns an independent sequence.

use crate::data::{add_gaussian_noise, batch_hr, batch_lr, LrHrPair};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::kernels::{conv2d_backward_with, conv2d_forward_with, ConvLayerParams};
use crate::loss::{cross_entropy_loss, huber_loss, mse_loss, HuberParams};
use crate::models::stack::{stack_backward_tail, stack_forward};
use crate::models::{
    coupled_backward, gaussian_conv_init, init_stream, Channel, ClassifierNet, CouplingConfig,
    DualClassifierNet, NetworkConfig, Pcsrn, SrNet, RECON_FILTER_SIZE,
};
use crate::optim::{sgd_step, sgd_step_slice};
use crate::rng::{splitmix64, ChaCha8Rng, RandomState, StreamTag};
use crate::tensor::{gather_rows, Tensor};
use rand::seq::SliceRandom;

/// Phase identifiers for learning-curve rows: reconstruction pre-training
/// (train / held-out) and classifier training (train / held-out).
const STAGE_PRETRAIN: u64 = 0; // end-to-end pre-training; stagewise uses 1..=3
const STAGE_FINETUNE: u64 = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Pretrain,
    PretrainVal,
    Train,
    Val,
}

impl Phase {
    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Pretrain => "pretrain",
            Phase::PretrainVal => "pretrain_val",
            Phase::Train => "train",
            Phase::Val => "val",
        }
    }
}

/// One learning-curve row. `top1`/`top5` are error rates, present only for
/// classification phases (and `top5` only when the task has five classes or
/// more).
#[derive(Debug, Clone, PartialEq)]
pub struct CurvePoint {
    pub epoch: usize,
    pub phase: Phase,
    pub loss: f64,
    pub top1: Option<f64>,
    pub top5: Option<f64>,
    pub lr: f64,
}

/// Renders curve rows as CSV with header `epoch,phase,loss,top1,top5,lr`.
/// Absent metrics render as empty cells; numbers use the shortest exact
/// decimal form, so identical runs serialize identically.
pub fn curves_to_csv(points: &[CurvePoint]) -> String {
    let mut out = String::from("epoch,phase,loss,top1,top5,lr\n");
    for p in points {
        let cell = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            p.epoch,
            p.phase.as_str(),
            p.loss,
            cell(p.top1),
            cell(p.top5),
            p.lr
        ));
    }
    out
}

/// Learning-rate annealing on a validation plateau: when the monitored error
/// fails to improve by at least `min_improvement` for `patience` consecutive
/// epochs, the rate divides by `factor`; training stops once it would fall
/// below `floor`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlateauConfig {
    pub patience: usize,
    pub factor: f64,
    pub min_improvement: f64,
    pub floor: f64,
}

impl Default for PlateauConfig {
    fn default() -> Self {
        Self {
            patience: 5,
            factor: 10.0,
            min_improvement: 0.001,
            floor: 1e-5,
        }
    }
}

impl PlateauConfig {
    pub fn validate(&self) -> Result<()> {
        if self.patience == 0 {
            return Err(Error::InvalidParam {
                name: "patience",
                message: "must be >= 1".into(),
            });
        }
        if !(self.factor > 1.0) || !self.factor.is_finite() {
            return Err(Error::InvalidParam {
                name: "factor",
                message: format!("must be > 1, got {}", self.factor),
            });
        }
        if !(self.min_improvement >= 0.0) || !(self.floor > 0.0) {
            return Err(Error::InvalidParam {
                name: "plateau",
                message: "min_improvement must be >= 0 and floor > 0".into(),
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScheduleAction {
    Continue,
    Annealed,
    Stop,
}

/// Learning-rate state: either fixed, or annealed by [`PlateauConfig`] on
/// the observed validation error.
#[derive(Debug, Clone)]
pub struct LrSchedule {
    lr: f64,
    best: f64,
    since_improvement: usize,
    plateau: Option<PlateauConfig>,
}

impl LrSchedule {
    pub fn fixed(lr: f64) -> Self {
        Self {
            lr,
            best: f64::INFINITY,
            since_improvement: 0,
            plateau: None,
        }
    }

    pub fn plateau(lr: f64, config: PlateauConfig) -> Self {
        Self {
            lr,
            best: f64::INFINITY,
            since_improvement: 0,
            plateau: Some(config),
        }
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    /// Feeds one validation error; may anneal or stop. A strict improvement
    /// (by more than `min_improvement`) resets the patience counter.
    pub fn observe(&mut self, error: f64) -> ScheduleAction {
        let Some(cfg) = self.plateau else {
            return ScheduleAction::Continue;
        };
        if error < self.best - cfg.min_improvement {
            self.best = error;
            self.since_improvement = 0;
            return ScheduleAction::Continue;
        }
        self.since_improvement += 1;
        if self.since_improvement < cfg.patience {
            return ScheduleAction::Continue;
        }
        self.since_improvement = 0;
        let next = self.lr / cfg.factor;
        if next < cfg.floor {
            return ScheduleAction::Stop;
        }
        self.lr = next;
        ScheduleAction::Annealed
    }
}

/// Reconstruction objective for pre-training.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PretrainLoss {
    Mse,
    Huber(HuberParams),
}

impl PretrainLoss {
    pub fn eval(&self, prediction: &Tensor, target: &Tensor) -> Result<(f64, Tensor)> {
        match self {
            PretrainLoss::Mse => mse_loss(prediction, target),
            PretrainLoss::Huber(params) => huber_loss(prediction, target, params),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PretrainMode {
    /// Train the whole reconstruction network jointly.
    EndToEnd,
    /// Greedy stagewise: train layer 1 under a temporary reconstruction
    /// head, freeze it, then layer 2, then layer 3 under the real head.
    Layerwise,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PretrainConfig {
    pub loss: PretrainLoss,
    pub learning_rate: f64,
    pub batch_size: usize,
    /// Epochs for end-to-end mode; epochs per stage for layerwise mode.
    pub epochs: usize,
    pub augment_sigma: f64,
    pub mode: PretrainMode,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            loss: PretrainLoss::Mse,
            learning_rate: 0.01,
            batch_size: 128,
            epochs: 20,
            augment_sigma: 0.05,
            mode: PretrainMode::EndToEnd,
        }
    }
}

impl PretrainConfig {
    pub fn validate(&self) -> Result<()> {
        check_rate("learning_rate", self.learning_rate)?;
        check_sigma(self.augment_sigma)?;
        check_batch(self.batch_size)
    }
}

/// Held-out reconstruction loss around one stagewise training stage.
#[derive(Debug, Clone, PartialEq)]
pub struct StageReport {
    pub stage: usize,
    pub loss_before: f64,
    pub loss_after: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PretrainReport {
    pub curves: Vec<CurvePoint>,
    /// Empty for end-to-end mode.
    pub stages: Vec<StageReport>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FinetuneConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub augment_sigma: f64,
    /// `None` keeps the rate fixed for all `max_epochs`.
    pub plateau: Option<PlateauConfig>,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.1,
            batch_size: 128,
            max_epochs: 100,
            augment_sigma: 0.05,
            plateau: Some(PlateauConfig::default()),
        }
    }
}

impl FinetuneConfig {
    pub fn validate(&self) -> Result<()> {
        check_rate("learning_rate", self.learning_rate)?;
        check_sigma(self.augment_sigma)?;
        check_batch(self.batch_size)?;
        if let Some(p) = &self.plateau {
            p.validate()?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FinetuneReport {
    pub curves: Vec<CurvePoint>,
    pub epochs_run: usize,
    pub final_val_error: f64,
    pub final_lr: f64,
}

fn check_rate(name: &'static str, v: f64) -> Result<()> {
    if !(v > 0.0) || !v.is_finite() {
        return Err(Error::InvalidParam {
            name,
            message: format!("must be positive and finite, got {v}"),
        });
    }
    Ok(())
}

fn check_sigma(v: f64) -> Result<()> {
    if !(v >= 0.0) || !v.is_finite() {
        return Err(Error::InvalidParam {
            name: "augment_sigma",
            message: format!("must be >= 0 and finite, got {v}"),
        });
    }
    Ok(())
}

fn check_batch(v: usize) -> Result<()> {
    if v == 0 {
        return Err(Error::InvalidParam {
            name: "batch_size",
            message: "must be >= 1".into(),
        });
    }
    Ok(())
}

/// Aligned training inputs: degraded images, their clean targets at the same
/// extent, and labels. Both tensors are (n, 1, side, side).
#[derive(Debug, Clone, PartialEq)]
pub struct TrainData {
    pub lr: Tensor,
    pub hr: Tensor,
    pub labels: Vec<usize>,
}

impl TrainData {
    pub fn new(lr: Tensor, hr: Tensor, labels: Vec<usize>) -> Result<Self> {
        let (n, c, h, w) = lr.dims4("TrainData")?;
        if c != 1 || h != w {
            return Err(Error::InvalidParam {
                name: "lr",
                message: format!("expected square grayscale images, got ({n},{c},{h},{w})"),
            });
        }
        if hr.shape() != lr.shape() {
            return Err(Error::ShapeMismatch {
                context: "TrainData",
                expected: lr.shape().to_vec(),
                got: hr.shape().to_vec(),
            });
        }
        if labels.len() != n {
            return Err(Error::AxisMismatch {
                context: "TrainData",
                axis: "labels",
                expected: n,
                got: labels.len(),
            });
        }
        Ok(Self { lr, hr, labels })
    }

    /// Stacks degradation pairs and labels into training tensors.
    pub fn from_pairs(pairs: &[LrHrPair], labels: &[u16]) -> Result<Self> {
        let all: Vec<usize> = (0..pairs.len()).collect();
        Self::new(
            batch_lr(pairs, &all)?,
            batch_hr(pairs, &all)?,
            labels.iter().map(|&l| l as usize).collect(),
        )
    }

    pub fn count(&self) -> usize {
        self.lr.shape()[0]
    }

    pub fn side(&self) -> usize {
        self.lr.shape()[2]
    }
}

pub(crate) fn phase_key(channel: u64, stage: u64, epoch: usize) -> u64 {
    (channel << 56) | (stage << 48) | epoch as u64
}

/// Deterministic epoch shuffle, identical for both channels of a dual step.
fn epoch_shuffle(rs: &RandomState, stage: u64, epoch: usize, indices: &mut [usize]) {
    let mut rng = rs.substream(StreamTag::Shuffle, phase_key(0, stage, epoch));
    indices.shuffle(&mut rng);
}

fn augment_stream(rs: &RandomState, channel: u64, stage: u64, epoch: usize) -> ChaCha8Rng {
    rs.substream(StreamTag::Augment, phase_key(channel, stage, epoch))
}

fn dropout_stream(rs: &RandomState, channel: u64, stage: u64, epoch: usize) -> ChaCha8Rng {
    rs.substream(StreamTag::Dropout, phase_key(channel, stage, epoch))
}

/// Hash-based 90/10 split by index, stable across phases and runs. Tiny
/// inputs where either side would come out empty fall back to using every
/// index for both roles, so smoke tests on a handful of images still work.
pub fn split_train_val(count: usize) -> (Vec<usize>, Vec<usize>) {
    let mut train = Vec::new();
    let mut val = Vec::new();
    for i in 0..count {
        if splitmix64(i as u64) % 10 == 0 {
            val.push(i);
        } else {
            train.push(i);
        }
    }
    if train.is_empty() || val.is_empty() {
        let all: Vec<usize> = (0..count).collect();
        return (all.clone(), all);
    }
    (train, val)
}

fn gather_labels(labels: &[usize], indices: &[usize]) -> Vec<usize> {
    indices.iter().map(|&i| labels[i]).collect()
}

/// Per-k counts of rows whose true label ranks inside the top k. A label's
/// rank counts classes with strictly higher probability plus equal-probability
/// ties at lower class indices, so ties resolve deterministically.
fn topk_correct_counts(probs: &Tensor, labels: &[usize], ks: &[usize]) -> Result<Vec<usize>> {
    let (b, classes) = probs.dims2("topk")?;
    if labels.len() != b {
        return Err(Error::AxisMismatch {
            context: "topk",
            axis: "labels",
            expected: b,
            got: labels.len(),
        });
    }
    for &k in ks {
        if k == 0 || k > classes {
            return Err(Error::InvalidParam {
                name: "k",
                message: format!("k must be in 1..={classes}, got {k}"),
            });
        }
    }
    let mut correct = vec![0usize; ks.len()];
    for (bi, &label) in labels.iter().enumerate() {
        if label >= classes {
            return Err(Error::InvalidParam {
                name: "labels",
                message: format!("label {label} out of range for {classes} classes"),
            });
        }
        let row = &probs.data()[bi * classes..][..classes];
        let p_true = row[label];
        let mut rank = 0usize;
        for (j, &p) in row.iter().enumerate() {
            if p > p_true || (p == p_true && j < label) {
                rank += 1;
            }
        }
        for (ki, &k) in ks.iter().enumerate() {
            if rank < k {
                correct[ki] += 1;
            }
        }
    }
    Ok(correct)
}

/// Top-k error rates over a probability tensor, one per requested k.
pub fn evaluate_topk(probs: &Tensor, labels: &[usize], ks: &[usize]) -> Result<Vec<f64>> {
    let b = probs.shape()[0];
    let counts = topk_correct_counts(probs, labels, ks)?;
    Ok(counts
        .iter()
        .map(|&c| 1.0 - c as f64 / b as f64)
        .collect())
}

/// Mean cross-entropy and top-k error rates over an index subset.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub loss: f64,
    /// One error rate per requested k, in the same order.
    pub errors: Vec<f64>,
}

/// Evaluates a classifier (dropout off) over `indices` in fixed-size batches.
pub fn evaluate_classifier(
    exec: &Exec,
    net: &ClassifierNet,
    images: &Tensor,
    labels: &[usize],
    indices: &[usize],
    ks: &[usize],
    batch_size: usize,
) -> Result<EvalReport> {
    check_batch(batch_size)?;
    if indices.is_empty() {
        return Err(Error::InvalidParam {
            name: "indices",
            message: "evaluation over an empty index set".into(),
        });
    }
    let mut loss_sum = 0.0;
    let mut correct = vec![0usize; ks.len()];
    for chunk in indices.chunks(batch_size) {
        let input = gather_rows(images, chunk)?;
        let batch_labels = gather_labels(labels, chunk);
        let (probs, _) = net.forward_train(exec, &input, None)?;
        let (loss, _) = cross_entropy_loss(&probs, &batch_labels)?;
        loss_sum += loss * chunk.len() as f64;
        for (ki, c) in topk_correct_counts(&probs, &batch_labels, ks)?
            .into_iter()
            .enumerate()
        {
            correct[ki] += c;
        }
    }
    let n = indices.len() as f64;
    Ok(EvalReport {
        loss: loss_sum / n,
        errors: correct.iter().map(|&c| 1.0 - c as f64 / n).collect(),
    })
}

/// Evaluation ks for a task: top-1 always, top-5 when there are >= 5 classes.
pub fn eval_ks(class_count: usize) -> Vec<usize> {
    if class_count >= 5 {
        vec![1, 5]
    } else {
        vec![1]
    }
}

/// Reconstruction loss of a trunk + head over an index subset, on clean
/// (un-augmented) inputs.
fn stack_eval_loss(
    exec: &Exec,
    layers: &[&ConvLayerParams],
    head: &ConvLayerParams,
    inputs: &Tensor,
    targets: &Tensor,
    indices: &[usize],
    loss: &PretrainLoss,
    batch_size: usize,
) -> Result<f64> {
    let mut loss_sum = 0.0;
    for chunk in indices.chunks(batch_size) {
        let input = gather_rows(inputs, chunk)?;
        let target = gather_rows(targets, chunk)?;
        let stack = stack_forward(exec, layers, &input)?;
        let recon = conv2d_forward_with(exec, &stack.output, head)?;
        let (l, _) = loss.eval(&recon, &target)?;
        loss_sum += l * chunk.len() as f64;
    }
    Ok(loss_sum / indices.len() as f64)
}

/// Held-out reconstruction loss of a full subnet.
pub fn sr_eval_loss(
    exec: &Exec,
    net: &SrNet,
    inputs: &Tensor,
    targets: &Tensor,
    indices: &[usize],
    loss: &PretrainLoss,
    batch_size: usize,
) -> Result<f64> {
    let refs: Vec<&ConvLayerParams> = net.conv.iter().collect();
    stack_eval_loss(
        exec, &refs, &net.conv4, inputs, targets, indices, loss, batch_size,
    )
}

/// Pre-trains a reconstruction subnet on degraded -> clean pairs. The rate
/// is fixed (no annealing); curves carry per-epoch train and held-out loss.
pub fn pretrain_sr(
    exec: &Exec,
    net: &mut SrNet,
    data: &TrainData,
    config: &PretrainConfig,
    rs: &RandomState,
) -> Result<PretrainReport> {
    config.validate()?;
    net.validate()?;
    match config.mode {
        PretrainMode::EndToEnd => pretrain_sr_end_to_end(exec, net, data, config, rs),
        PretrainMode::Layerwise => pretrain_sr_layerwise(exec, net, data, config, rs),
    }
}

fn pretrain_sr_end_to_end(
    exec: &Exec,
    net: &mut SrNet,
    data: &TrainData,
    config: &PretrainConfig,
    rs: &RandomState,
) -> Result<PretrainReport> {
    let (train_idx, val_idx) = split_train_val(data.count());
    let mut curves = Vec::new();
    for epoch in 0..config.epochs {
        let mut order = train_idx.clone();
        epoch_shuffle(rs, STAGE_PRETRAIN, epoch, &mut order);
        let mut aug = augment_stream(rs, Channel::Lr.index() as u64, STAGE_PRETRAIN, epoch);
        let mut loss_sum = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let input = add_gaussian_noise(
                &gather_rows(&data.lr, chunk)?,
                config.augment_sigma,
                &mut aug,
            )?;
            let target = gather_rows(&data.hr, chunk)?;
            let (recon, cache) = net.forward_train(exec, &input)?;
            let (loss, grad) = config.loss.eval(&recon, &target)?;
            let grads = net.backward(exec, &cache, &grad)?;
            net.sgd_step(&grads, config.learning_rate)?;
            loss_sum += loss * chunk.len() as f64;
        }
        let val_loss = sr_eval_loss(
            exec,
            net,
            &data.lr,
            &data.hr,
            &val_idx,
            &config.loss,
            config.batch_size,
        )?;
        curves.push(CurvePoint {
            epoch,
            phase: Phase::Pretrain,
            loss: loss_sum / order.len() as f64,
            top1: None,
            top5: None,
            lr: config.learning_rate,
        });
        curves.push(CurvePoint {
            epoch,
            phase: Phase::PretrainVal,
            loss: val_loss,
            top1: None,
            top5: None,
            lr: config.learning_rate,
        });
    }
    Ok(PretrainReport {
        curves,
        stages: Vec::new(),
    })
}

/// Temporary reconstruction head for stagewise training of layer `stage`.
/// Stages 1 and 2 draw throwaway heads from dedicated init slots; stage 3
/// trains the network's real head.
fn stage_head(net: &SrNet, stage: usize, channel: usize, rs: &RandomState) -> Result<ConvLayerParams> {
    if stage == 3 {
        return Ok(match channel {
            0 => net.conv4.clone(),
            _ => unreachable!("single-channel stage head"),
        });
    }
    gaussian_conv_init(
        1,
        net.conv[stage - 1].out_channels(),
        RECON_FILTER_SIZE,
        &mut init_stream(rs, channel, 5 + stage),
    )
}

fn pretrain_sr_layerwise(
    exec: &Exec,
    net: &mut SrNet,
    data: &TrainData,
    config: &PretrainConfig,
    rs: &RandomState,
) -> Result<PretrainReport> {
    let (train_idx, val_idx) = split_train_val(data.count());
    let mut curves = Vec::new();
    let mut stages = Vec::new();
    for stage in 1..=3usize {
        let mut head = stage_head(net, stage, 0, rs)?;
        let eval_stage = |net: &SrNet, head: &ConvLayerParams| -> Result<f64> {
            let layers: Vec<&ConvLayerParams> = net.conv[..stage].iter().collect();
            stack_eval_loss(
                exec,
                &layers,
                head,
                &data.lr,
                &data.hr,
                &val_idx,
                &config.loss,
                config.batch_size,
            )
        };
        let loss_before = eval_stage(net, &head)?;
        for epoch in 0..config.epochs {
            let mut order = train_idx.clone();
            epoch_shuffle(rs, stage as u64, epoch, &mut order);
            let mut aug = augment_stream(rs, Channel::Lr.index() as u64, stage as u64, epoch);
            let mut loss_sum = 0.0;
            for chunk in order.chunks(config.batch_size) {
                let input = add_gaussian_noise(
                    &gather_rows(&data.lr, chunk)?,
                    config.augment_sigma,
                    &mut aug,
                )?;
                let target = gather_rows(&data.hr, chunk)?;
                let layers: Vec<&ConvLayerParams> = net.conv[..stage].iter().collect();
                let stack = stack_forward(exec, &layers, &input)?;
                let recon = conv2d_forward_with(exec, &stack.output, &head)?;
                let (loss, grad) = config.loss.eval(&recon, &target)?;
                let (g_out, gw_head, gb_head) =
                    conv2d_backward_with(exec, &stack.output, &head, &grad)?;
                // Only the newest layer trains; earlier layers stay frozen.
                let tail = stack_backward_tail(exec, &layers, &stack, &g_out, 1)?;
                let (gw, gb) = &tail[stage - 1];
                sgd_step(&mut net.conv[stage - 1].weights, gw, config.learning_rate)?;
                sgd_step_slice(&mut net.conv[stage - 1].bias, gb, config.learning_rate)?;
                sgd_step(&mut head.weights, &gw_head, config.learning_rate)?;
                sgd_step_slice(&mut head.bias, &gb_head, config.learning_rate)?;
                loss_sum += loss * chunk.len() as f64;
            }
            let global_epoch = (stage - 1) * config.epochs + epoch;
            curves.push(CurvePoint {
                epoch: global_epoch,
                phase: Phase::Pretrain,
                loss: loss_sum / order.len() as f64,
                top1: None,
                top5: None,
                lr: config.learning_rate,
            });
            curves.push(CurvePoint {
                epoch: global_epoch,
                phase: Phase::PretrainVal,
                loss: eval_stage(net, &head)?,
                top1: None,
                top5: None,
                lr: config.learning_rate,
            });
        }
        let loss_after = eval_stage(net, &head)?;
        stages.push(StageReport {
            stage,
            loss_before,
            loss_after,
        });
        if stage == 3 {
            net.conv4 = head;
        }
    }
    Ok(PretrainReport { curves, stages })
}

/// Pre-trains a coupled reconstruction network. Each step runs both
/// channels on the same batch (same shuffle, per-channel noise); shared
/// filters accumulate both channels' gradients. Curves report the
/// low-resolution channel, the one that survives decoupling.
pub fn pretrain_coupled(
    exec: &Exec,
    net: &mut Pcsrn,
    data: &TrainData,
    config: &PretrainConfig,
    rs: &RandomState,
) -> Result<PretrainReport> {
    config.validate()?;
    net.validate()?;
    match config.mode {
        PretrainMode::EndToEnd => pretrain_coupled_end_to_end(exec, net, data, config, rs),
        PretrainMode::Layerwise => pretrain_coupled_layerwise(exec, net, data, config, rs),
    }
}

fn pretrain_coupled_end_to_end(
    exec: &Exec,
    net: &mut Pcsrn,
    data: &TrainData,
    config: &PretrainConfig,
    rs: &RandomState,
) -> Result<PretrainReport> {
    let (train_idx, val_idx) = split_train_val(data.count());
    let mut curves = Vec::new();
    for epoch in 0..config.epochs {
        let mut order = train_idx.clone();
        epoch_shuffle(rs, STAGE_PRETRAIN, epoch, &mut order);
        let mut aug_lr = augment_stream(rs, Channel::Lr.index() as u64, STAGE_PRETRAIN, epoch);
        let mut aug_hr = augment_stream(rs, Channel::Hr.index() as u64, STAGE_PRETRAIN, epoch);
        let mut loss_sum = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let target = gather_rows(&data.hr, chunk)?;
            let lr_in = add_gaussian_noise(
                &gather_rows(&data.lr, chunk)?,
                config.augment_sigma,
                &mut aug_lr,
            )?;
            let hr_in = add_gaussian_noise(&target, config.augment_sigma, &mut aug_hr)?;
            let (lr_recon, lr_cache) = net.forward_train(exec, Channel::Lr, &lr_in)?;
            let (hr_recon, hr_cache) = net.forward_train(exec, Channel::Hr, &hr_in)?;
            let (lr_loss, lr_grad) = config.loss.eval(&lr_recon, &target)?;
            let (_, hr_grad) = config.loss.eval(&hr_recon, &target)?;
            let grads = net.dual_backward(exec, &lr_cache, &hr_cache, &lr_grad, &hr_grad)?;
            net.sgd_step(&grads, config.learning_rate)?;
            loss_sum += lr_loss * chunk.len() as f64;
        }
        let lr_view = net.channel_sr(Channel::Lr);
        let val_loss = sr_eval_loss(
            exec,
            &lr_view,
            &data.lr,
            &data.hr,
            &val_idx,
            &config.loss,
            config.batch_size,
        )?;
        curves.push(CurvePoint {
            epoch,
            phase: Phase::Pretrain,
            loss: loss_sum / order.len() as f64,
            top1: None,
            top5: None,
            lr: config.learning_rate,
        });
        curves.push(CurvePoint {
            epoch,
            phase: Phase::PretrainVal,
            loss: val_loss,
            top1: None,
            top5: None,
            lr: config.learning_rate,
        });
    }
    Ok(PretrainReport {
        curves,
        stages: Vec::new(),
    })
}

fn coupled_stage_head(
    net: &Pcsrn,
    stage: usize,
    ch: Channel,
    rs: &RandomState,
) -> Result<ConvLayerParams> {
    if stage == 3 {
        return Ok(net.conv4(ch).clone());
    }
    gaussian_conv_init(
        1,
        net.layers[stage - 1].total_filters(),
        RECON_FILTER_SIZE,
        &mut init_stream(rs, ch.index(), 5 + stage),
    )
}

fn pretrain_coupled_layerwise(
    exec: &Exec,
    net: &mut Pcsrn,
    data: &TrainData,
    config: &PretrainConfig,
    rs: &RandomState,
) -> Result<PretrainReport> {
    let (train_idx, val_idx) = split_train_val(data.count());
    let mut curves = Vec::new();
    let mut stages = Vec::new();
    for stage in 1..=3usize {
        let mut lr_head = coupled_stage_head(net, stage, Channel::Lr, rs)?;
        let mut hr_head = coupled_stage_head(net, stage, Channel::Hr, rs)?;
        let eval_stage = |net: &Pcsrn, head: &ConvLayerParams| -> Result<f64> {
            let layers: Vec<ConvLayerParams> = net.layers[..stage]
                .iter()
                .map(|l| l.effective(Channel::Lr))
                .collect();
            let refs: Vec<&ConvLayerParams> = layers.iter().collect();
            stack_eval_loss(
                exec,
                &refs,
                head,
                &data.lr,
                &data.hr,
                &val_idx,
                &config.loss,
                config.batch_size,
            )
        };
        let loss_before = eval_stage(net, &lr_head)?;
        for epoch in 0..config.epochs {
            let mut order = train_idx.clone();
            epoch_shuffle(rs, stage as u64, epoch, &mut order);
            let mut aug_lr = augment_stream(rs, Channel::Lr.index() as u64, stage as u64, epoch);
            let mut aug_hr = augment_stream(rs, Channel::Hr.index() as u64, stage as u64, epoch);
            let mut loss_sum = 0.0;
            for chunk in order.chunks(config.batch_size) {
                let target = gather_rows(&data.hr, chunk)?;
                let lr_in = add_gaussian_noise(
                    &gather_rows(&data.lr, chunk)?,
                    config.augment_sigma,
                    &mut aug_lr,
                )?;
                let hr_in = add_gaussian_noise(&target, config.augment_sigma, &mut aug_hr)?;

                let channel_pass = |ch: Channel,
                                        input: &Tensor,
                                        head: &ConvLayerParams|
                 -> Result<(f64, (Tensor, Vec<f64>), (Tensor, Vec<f64>))> {
                    let layers: Vec<ConvLayerParams> = net.layers[..stage]
                        .iter()
                        .map(|l| l.effective(ch))
                        .collect();
                    let refs: Vec<&ConvLayerParams> = layers.iter().collect();
                    let stack = stack_forward(exec, &refs, input)?;
                    let recon = conv2d_forward_with(exec, &stack.output, head)?;
                    let (loss, grad) = config.loss.eval(&recon, &target)?;
                    let (g_out, gw_head, gb_head) =
                        conv2d_backward_with(exec, &stack.output, head, &grad)?;
                    let tail = stack_backward_tail(exec, &refs, &stack, &g_out, 1)?;
                    let (gw, gb) = tail.into_iter().nth(stage - 1).expect("tail grads");
                    Ok((loss, (gw, gb), (gw_head, gb_head)))
                };
                let (lr_loss, lr_bank, lr_head_g) = channel_pass(Channel::Lr, &lr_in, &lr_head)?;
                let (_, hr_bank, hr_head_g) = channel_pass(Channel::Hr, &hr_in, &hr_head)?;
                let layer_grads = coupled_backward(
                    &net.layers[stage - 1],
                    (&lr_bank.0, &lr_bank.1),
                    (&hr_bank.0, &hr_bank.1),
                )?;
                net.layers[stage - 1].sgd_step(&layer_grads, config.learning_rate)?;
                sgd_step(&mut lr_head.weights, &lr_head_g.0, config.learning_rate)?;
                sgd_step_slice(&mut lr_head.bias, &lr_head_g.1, config.learning_rate)?;
                sgd_step(&mut hr_head.weights, &hr_head_g.0, config.learning_rate)?;
                sgd_step_slice(&mut hr_head.bias, &hr_head_g.1, config.learning_rate)?;
                loss_sum += lr_loss * chunk.len() as f64;
            }
            let global_epoch = (stage - 1) * config.epochs + epoch;
            curves.push(CurvePoint {
                epoch: global_epoch,
                phase: Phase::Pretrain,
                loss: loss_sum / order.len() as f64,
                top1: None,
                top5: None,
                lr: config.learning_rate,
            });
            curves.push(CurvePoint {
                epoch: global_epoch,
                phase: Phase::PretrainVal,
                loss: eval_stage(net, &lr_head)?,
                top1: None,
                top5: None,
                lr: config.learning_rate,
            });
        }
        let loss_after = eval_stage(net, &lr_head)?;
        stages.push(StageReport {
            stage,
            loss_before,
            loss_after,
        });
        if stage == 3 {
            net.conv4_lr = lr_head;
            net.conv4_hr = hr_head;
        }
    }
    Ok(PretrainReport { curves, stages })
}

/// Trains a classifier on degraded inputs with cross-entropy, annealing the
/// rate on validation-error plateaus when configured. Returns per-epoch
/// curves and the final held-out error.
pub fn finetune_classifier(
    exec: &Exec,
    net: &mut ClassifierNet,
    data: &TrainData,
    config: &FinetuneConfig,
    rs: &RandomState,
) -> Result<FinetuneReport> {
    config.validate()?;
    net.validate()?;
    let (train_idx, val_idx) = split_train_val(data.count());
    let ks = eval_ks(net.class_count());
    let mut sched = match config.plateau {
        Some(p) => LrSchedule::plateau(config.learning_rate, p),
        None => LrSchedule::fixed(config.learning_rate),
    };
    let mut curves = Vec::new();
    let mut epochs_run = 0;
    let mut last = EvalReport {
        loss: f64::INFINITY,
        errors: vec![1.0; ks.len()],
    };
    for epoch in 0..config.max_epochs {
        let lr_now = sched.lr();
        let mut order = train_idx.clone();
        epoch_shuffle(rs, STAGE_FINETUNE, epoch, &mut order);
        let mut aug = augment_stream(rs, Channel::Lr.index() as u64, STAGE_FINETUNE, epoch);
        let mut dropout = dropout_stream(rs, Channel::Lr.index() as u64, STAGE_FINETUNE, epoch);
        let mut loss_sum = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let input = add_gaussian_noise(
                &gather_rows(&data.lr, chunk)?,
                config.augment_sigma,
                &mut aug,
            )?;
            let batch_labels = gather_labels(&data.labels, chunk);
            let (probs, cache) = net.forward_train(exec, &input, Some(&mut dropout))?;
            let (loss, grad) = cross_entropy_loss(&probs, &batch_labels)?;
            let grads = net.backward(exec, &cache, &grad)?;
            net.sgd_step(&grads, lr_now)?;
            loss_sum += loss * chunk.len() as f64;
        }
        last = evaluate_classifier(
            exec,
            net,
            &data.lr,
            &data.labels,
            &val_idx,
            &ks,
            config.batch_size,
        )?;
        epochs_run = epoch + 1;
        curves.push(CurvePoint {
            epoch,
            phase: Phase::Train,
            loss: loss_sum / order.len() as f64,
            top1: None,
            top5: None,
            lr: lr_now,
        });
        curves.push(CurvePoint {
            epoch,
            phase: Phase::Val,
            loss: last.loss,
            top1: Some(last.errors[0]),
            top5: last.errors.get(1).copied(),
            lr: lr_now,
        });
        if sched.observe(last.errors[0]) == ScheduleAction::Stop {
            break;
        }
    }
    Ok(FinetuneReport {
        curves,
        epochs_run,
        final_val_error: last.errors[0],
        final_lr: sched.lr(),
    })
}

/// Trains a dual-channel classifier: both channels step on the same batch
/// order, each under its own noise and dropout streams, and the shared trunk
/// filters accumulate both channels' gradients. Annealing and the reported
/// curves follow the decoupled (low-resolution) model's validation error, so
/// the schedule depends only on the deployment path.
pub fn finetune_dual(
    exec: &Exec,
    net: &mut DualClassifierNet,
    data: &TrainData,
    config: &FinetuneConfig,
    rs: &RandomState,
) -> Result<FinetuneReport> {
    config.validate()?;
    net.validate()?;
    let (train_idx, val_idx) = split_train_val(data.count());
    let ks = eval_ks(net.class_count());
    let mut sched = match config.plateau {
        Some(p) => LrSchedule::plateau(config.learning_rate, p),
        None => LrSchedule::fixed(config.learning_rate),
    };
    let mut curves = Vec::new();
    let mut epochs_run = 0;
    let mut last = EvalReport {
        loss: f64::INFINITY,
        errors: vec![1.0; ks.len()],
    };
    for epoch in 0..config.max_epochs {
        let lr_now = sched.lr();
        let mut order = train_idx.clone();
        epoch_shuffle(rs, STAGE_FINETUNE, epoch, &mut order);
        let mut aug_lr = augment_stream(rs, Channel::Lr.index() as u64, STAGE_FINETUNE, epoch);
        let mut aug_hr = augment_stream(rs, Channel::Hr.index() as u64, STAGE_FINETUNE, epoch);
        let mut drop_lr = dropout_stream(rs, Channel::Lr.index() as u64, STAGE_FINETUNE, epoch);
        let mut drop_hr = dropout_stream(rs, Channel::Hr.index() as u64, STAGE_FINETUNE, epoch);
        let mut loss_sum = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let lr_in = add_gaussian_noise(
                &gather_rows(&data.lr, chunk)?,
                config.augment_sigma,
                &mut aug_lr,
            )?;
            let hr_in = add_gaussian_noise(
                &gather_rows(&data.hr, chunk)?,
                config.augment_sigma,
                &mut aug_hr,
            )?;
            let batch_labels = gather_labels(&data.labels, chunk);
            let (lr_probs, lr_cache) =
                net.forward_channel_train(exec, Channel::Lr, &lr_in, Some(&mut drop_lr))?;
            let (hr_probs, hr_cache) =
                net.forward_channel_train(exec, Channel::Hr, &hr_in, Some(&mut drop_hr))?;
            let (lr_loss, lr_grad) = cross_entropy_loss(&lr_probs, &batch_labels)?;
            let (_, hr_grad) = cross_entropy_loss(&hr_probs, &batch_labels)?;
            let grads = net.backward_dual(exec, &lr_cache, &hr_cache, &lr_grad, &hr_grad)?;
            net.sgd_step(&grads, lr_now)?;
            loss_sum += lr_loss * chunk.len() as f64;
        }
        let deployed = net.decouple()?;
        last = evaluate_classifier(
            exec,
            &deployed,
            &data.lr,
            &data.labels,
            &val_idx,
            &ks,
            config.batch_size,
        )?;
        epochs_run = epoch + 1;
        curves.push(CurvePoint {
            epoch,
            phase: Phase::Train,
            loss: loss_sum / order.len() as f64,
            top1: None,
            top5: None,
            lr: lr_now,
        });
        curves.push(CurvePoint {
            epoch,
            phase: Phase::Val,
            loss: last.loss,
            top1: Some(last.errors[0]),
            top5: last.errors.get(1).copied(),
            lr: lr_now,
        });
        if sched.observe(last.errors[0]) == ScheduleAction::Stop {
            break;
        }
    }
    Ok(FinetuneReport {
        curves,
        epochs_run,
        final_val_error: last.errors[0],
        final_lr: sched.lr(),
    })
}

/// One evaluated point of the coupling-ratio search.
#[derive(Debug, Clone, PartialEq)]
pub struct GridTrial {
    pub ratios: [f64; 3],
    pub shared: [usize; 3],
    pub error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridSearchResult {
    pub best: CouplingConfig,
    pub best_ratios: [f64; 3],
    pub best_error: f64,
    pub trials: Vec<GridTrial>,
}

/// Greedy search over per-layer coupling ratios {0, 0.25, 0.5, 0.75, 1}.
///
/// Starting from no sharing, the deepest layer's ratio walks upward in 0.25
/// steps while each step strictly improves the evaluated error; the first
/// non-improving step rolls back and fixes that layer for good, then the
/// next-shallower layer walks. At most 1 + 3*4 = 13 evaluations.
pub fn grid_search_coupling<F>(net: &NetworkConfig, mut eval: F) -> Result<GridSearchResult>
where
    F: FnMut(&CouplingConfig, [f64; 3]) -> Result<f64>,
{
    const STEP: f64 = 0.25;
    net.validate()?;
    let mut trials: Vec<GridTrial> = Vec::new();
    let mut run = |ratios: [f64; 3], trials: &mut Vec<GridTrial>| -> Result<f64> {
        let config = CouplingConfig::from_ratios(ratios, net)?;
        let error = eval(&config, ratios)?;
        if !error.is_finite() {
            return Err(Error::InvalidParam {
                name: "error",
                message: format!("search evaluation returned {error}"),
            });
        }
        trials.push(GridTrial {
            ratios,
            shared: config.shared,
            error,
        });
        Ok(error)
    };
    let mut ratios = [0.0; 3];
    let mut best = run(ratios, &mut trials)?;
    for layer in (0..3).rev() {
        loop {
            let next = ratios[layer] + STEP;
            if next > 1.0 {
                break;
            }
            let mut candidate = ratios;
            candidate[layer] = next;
            let error = run(candidate, &mut trials)?;
            if error < best {
                best = error;
                ratios = candidate;
            } else {
                break;
            }
        }
    }
    Ok(GridSearchResult {
        best: CouplingConfig::from_ratios(ratios, net)?,
        best_ratios: ratios,
        best_error: best,
        trials,
    })
}
