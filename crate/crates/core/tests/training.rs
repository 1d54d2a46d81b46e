//! Training behaviour on realistic (small) data: synthetic glyphs through
//! the degradation pipeline into pre-training and classifier training.
//! Covers learning progress, schedule behaviour, robust-loss training on
//! corrupted targets, and bitwise equality between execution backends.

use vlrr_core::data::{make_pairs_with, synth_dataset, DegradationSpec};
use vlrr_core::exec::Exec;
use vlrr_core::models::{ClassifierNet, NetworkConfig, SrNet};
use vlrr_core::rng::RandomState;
use vlrr_core::train::{
    evaluate_classifier, eval_ks, finetune_classifier, pretrain_sr, split_train_val, sr_eval_loss,
    FinetuneConfig, Phase, PlateauConfig, PretrainConfig, PretrainLoss, PretrainMode, TrainData,
};

fn small_config(classes: usize) -> NetworkConfig {
    NetworkConfig {
        filters: [4, 4, 3],
        filter_sizes: [5, 3, 1],
        fc_width: 12,
        class_count: classes,
    }
}

/// Glyph dataset pushed through the degradation pipeline, as the trainers
/// consume it.
fn glyph_data(classes: u16, per_class: usize, sp_fraction: f64, seed: u64) -> TrainData {
    let rs = RandomState::new(seed);
    let dataset = synth_dataset(classes, per_class, 16, &rs).unwrap();
    let spec = DegradationSpec {
        scale: 4,
        gaussian_sigma: 0.05,
        sp_fraction,
    };
    let pairs = make_pairs_with(&Exec::sequential(), &dataset, &spec, &rs).unwrap();
    TrainData::from_pairs(&pairs, &dataset.labels).unwrap()
}

#[test]
fn reconstruction_pretraining_learns_on_degraded_glyphs() {
    let data = glyph_data(4, 12, 0.0, 101);
    let rs = RandomState::new(102);
    let mut net = SrNet::build(&small_config(4), &rs).unwrap();
    let config = PretrainConfig {
        loss: PretrainLoss::Mse,
        learning_rate: 0.02,
        batch_size: 16,
        epochs: 8,
        augment_sigma: 0.05,
        mode: PretrainMode::EndToEnd,
    };
    let report = pretrain_sr(&Exec::sequential(), &mut net, &data, &config, &rs).unwrap();
    let val: Vec<f64> = report
        .curves
        .iter()
        .filter(|p| p.phase == Phase::PretrainVal)
        .map(|p| p.loss)
        .collect();
    assert_eq!(val.len(), 8);
    assert!(
        val.last().unwrap() < &val[0],
        "held-out loss went {} -> {}",
        val[0],
        val.last().unwrap()
    );
}

#[test]
fn classifier_training_beats_chance_on_glyphs() {
    let data = glyph_data(4, 12, 0.0, 103);
    let rs = RandomState::new(104);
    let mut net = ClassifierNet::build(&small_config(4), 16, 0.1, &rs).unwrap();
    let config = FinetuneConfig {
        learning_rate: 0.05,
        batch_size: 16,
        max_epochs: 25,
        augment_sigma: 0.02,
        plateau: None,
    };
    let report = finetune_classifier(&Exec::sequential(), &mut net, &data, &config, &rs).unwrap();
    // Training accuracy must clear chance (75% error) by a wide margin.
    let (train_idx, _) = split_train_val(data.count());
    let eval = evaluate_classifier(
        &Exec::sequential(),
        &net,
        &data.lr,
        &data.labels,
        &train_idx,
        &eval_ks(4),
        16,
    )
    .unwrap();
    assert!(
        eval.errors[0] < 0.375,
        "train error {} after {} epochs",
        eval.errors[0],
        report.epochs_run
    );
}

#[test]
fn plateau_schedule_anneals_and_stops_under_a_stubborn_error() {
    // Constant validation error: the schedule must divide the rate by 10
    // every `patience` epochs and stop at the floor rather than spin.
    let data = glyph_data(3, 6, 0.0, 105);
    let rs = RandomState::new(106);
    let mut net = ClassifierNet::build(&small_config(3), 16, 0.0, &rs).unwrap();
    // Zero learning rate is rejected; a tiny one with zero augmentation and
    // patience 1 anneals every epoch: 1e-1 -> 1e-5 in four steps, then stop.
    let config = FinetuneConfig {
        learning_rate: 0.1,
        batch_size: 64,
        max_epochs: 100,
        augment_sigma: 0.0,
        plateau: Some(PlateauConfig {
            patience: 1,
            factor: 10.0,
            min_improvement: 2.0, // unreachable: every epoch counts as a stall
            floor: 1e-5,
        }),
    };
    let report = finetune_classifier(&Exec::sequential(), &mut net, &data, &config, &rs).unwrap();
    assert!(
        report.epochs_run < 10,
        "ran {} epochs without stopping",
        report.epochs_run
    );
    assert!((report.final_lr - 1e-5).abs() < 1e-12);
    let rates: Vec<f64> = report
        .curves
        .iter()
        .filter(|p| p.phase == Phase::Train)
        .map(|p| p.lr)
        .collect();
    assert_eq!(rates[0], 0.1);
    assert!(rates.windows(2).all(|w| w[1] <= w[0]));
}

/// Training on targets containing impulse corruption: the bounded-gradient
/// loss must not blow up, and both losses make progress on their own
/// held-out objective. Whether the robust loss wins on *clean* data is a
/// statistical claim that only holds at scale; the acceptance checks cover
/// it with multi-seed means.
#[test]
fn robust_pretraining_survives_corrupted_targets() {
    let corrupted = glyph_data(3, 10, 0.15, 107);
    let clean = glyph_data(3, 10, 0.0, 107);
    let (_, val_idx) = split_train_val(clean.count());
    let exec = Exec::sequential();

    for loss in [PretrainLoss::Mse, PretrainLoss::Huber(Default::default())] {
        let rs = RandomState::new(108);
        let mut net = SrNet::build(&small_config(3), &rs).unwrap();
        let config = PretrainConfig {
            loss,
            learning_rate: 0.02,
            batch_size: 16,
            epochs: 6,
            augment_sigma: 0.05,
            mode: PretrainMode::EndToEnd,
        };
        let report = pretrain_sr(&exec, &mut net, &corrupted, &config, &rs).unwrap();
        let val: Vec<f64> = report
            .curves
            .iter()
            .filter(|p| p.phase == Phase::PretrainVal)
            .map(|p| p.loss)
            .collect();
        assert!(
            val.last().unwrap() < &val[0],
            "{loss:?}: held-out loss went {} -> {}",
            val[0],
            val.last().unwrap()
        );
        let on_clean = sr_eval_loss(
            &exec,
            &net,
            &clean.lr,
            &clean.hr,
            &val_idx,
            &PretrainLoss::Mse,
            16,
        )
        .unwrap();
        assert!(on_clean.is_finite());
    }
}

/// The backend guarantee: a full training run on a thread pool produces the
/// same bits as the sequential fallback — same parameters, same curves.
#[test]
fn thread_pool_training_matches_sequential_bitwise() {
    let data = glyph_data(3, 8, 0.05, 109);
    let run = |exec: &Exec| {
        let rs = RandomState::new(110);
        let mut sr = SrNet::build(&small_config(3), &rs).unwrap();
        let pre = PretrainConfig {
            loss: PretrainLoss::Huber(Default::default()),
            learning_rate: 0.02,
            batch_size: 8,
            epochs: 2,
            augment_sigma: 0.05,
            mode: PretrainMode::EndToEnd,
        };
        let pre_report = pretrain_sr(exec, &mut sr, &data, &pre, &rs).unwrap();

        let mut net = ClassifierNet::build(&small_config(3), 16, 0.2, &rs).unwrap();
        net.conv = sr.conv.clone();
        let fine = FinetuneConfig {
            learning_rate: 0.05,
            batch_size: 8,
            max_epochs: 2,
            augment_sigma: 0.05,
            plateau: Some(PlateauConfig::default()),
        };
        let fine_report = finetune_classifier(exec, &mut net, &data, &fine, &rs).unwrap();
        (sr, net, pre_report, fine_report)
    };
    let sequential = run(&Exec::sequential());
    for threads in [2, 4] {
        let pooled = run(&Exec::with_threads(threads));
        assert_eq!(sequential.0, pooled.0, "subnet diverged at {threads} threads");
        assert_eq!(sequential.1, pooled.1, "classifier diverged at {threads} threads");
        assert_eq!(sequential.2, pooled.2);
        assert_eq!(sequential.3, pooled.3);
    }
}
