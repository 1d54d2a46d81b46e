//! Plan execution: degrade the source archive into training pairs, train
//! the requested variant, and write checkpoints, curves, metrics, and the
//! resolved plan. Output bytes are a pure function of (plan, seed, data).

use crate::plan::{Plan, Variant};
use std::fmt::Write as _;
use std::path::Path;
use vlrr_core::data::{load_dataset, make_pairs_with, DegradationSpec};
use vlrr_core::exec::Exec;
use vlrr_core::models::{
    attach_classifier_head, attach_dual_heads, ClassifierNet, Pcsrn, SrNet,
};
use vlrr_core::rng::RandomState;
use vlrr_core::train::{
    curves_to_csv, eval_ks, evaluate_classifier, finetune_classifier, finetune_dual,
    pretrain_coupled, pretrain_sr, split_train_val, CurvePoint, EvalReport, FinetuneReport,
    TrainData,
};
use vlrr_core::Result;

pub struct RunOutcome {
    pub deployment: ClassifierNet,
    pub report: FinetuneReport,
    pub eval: EvalReport,
    pub ks: Vec<usize>,
}

/// Trains a plan's variant and writes every artifact into `out`:
///
/// - `plan.resolved.txt` — the canonical plan that was executed
/// - `pretrained.vlrc`   — reconstruction trunk (absent for the baseline)
/// - `checkpoint.vlrc`   — the trained model as trained (dual for coupled
///   variants)
/// - `decoupled.vlrc`    — deployment classifier (dual variants only)
/// - `curves.csv`        — per-epoch losses and validation errors
/// - `metrics.csv`       — final validation numbers
pub fn cmd_run(plan_path: &Path, seed: u64, out: &Path) -> Result<RunOutcome> {
    let plan = Plan::load(plan_path)?;
    let plan_dir = plan_path.parent().unwrap_or(Path::new("."));
    let dataset = load_dataset(&plan.data_path(plan_dir))?;

    let exec = Exec::global();
    let rs = RandomState::new(seed);
    let spec = DegradationSpec {
        scale: plan.scale,
        gaussian_sigma: plan.augment_sigma,
        sp_fraction: plan.sp_fraction,
    };
    let pairs = make_pairs_with(exec, &dataset, &spec, &rs)?;
    let data = TrainData::from_pairs(&pairs, &dataset.labels)?;
    let side = data.side();
    let cfg = plan.network_config(dataset.class_count as usize);

    std::fs::create_dir_all(out)?;
    std::fs::write(out.join("plan.resolved.txt"), plan.render())?;

    let mut curves: Vec<CurvePoint> = Vec::new();
    let (deployment, report) = match plan.variant {
        Variant::Baseline => {
            let mut net = ClassifierNet::build(&cfg, side, plan.dropout, &rs)?;
            let report = finetune_classifier(exec, &mut net, &data, &plan.finetune_config(), &rs)?;
            curves.extend_from_slice(&report.curves);
            net.save(&out.join("checkpoint.vlrc"))?;
            (net, report)
        }
        Variant::Pretrained => {
            let mut sr = SrNet::build(&cfg, &rs)?;
            let pre = pretrain_sr(exec, &mut sr, &data, &plan.pretrain_config()?, &rs)?;
            curves.extend_from_slice(&pre.curves);
            sr.save(&out.join("pretrained.vlrc"))?;
            let mut net = attach_classifier_head(&sr, &cfg, side, plan.dropout, &rs)?;
            let report = finetune_classifier(exec, &mut net, &data, &plan.finetune_config(), &rs)?;
            curves.extend_from_slice(&report.curves);
            net.save(&out.join("checkpoint.vlrc"))?;
            (net, report)
        }
        Variant::Coupled | Variant::Partial | Variant::Robust => {
            let coupling = plan.coupling_config(&cfg)?;
            let mut trunk = Pcsrn::build(&cfg, &coupling, &rs)?;
            let pre = pretrain_coupled(exec, &mut trunk, &data, &plan.pretrain_config()?, &rs)?;
            curves.extend_from_slice(&pre.curves);
            trunk.save(&out.join("pretrained.vlrc"))?;
            let mut dual = attach_dual_heads(&trunk, &cfg, side, plan.dropout, &rs)?;
            let report = finetune_dual(exec, &mut dual, &data, &plan.finetune_config(), &rs)?;
            curves.extend_from_slice(&report.curves);
            dual.save(&out.join("checkpoint.vlrc"))?;
            let net = dual.decouple()?;
            net.save(&out.join("decoupled.vlrc"))?;
            (net, report)
        }
    };
    std::fs::write(out.join("curves.csv"), curves_to_csv(&curves))?;

    // Final numbers come from the deployment path (the decoupled
    // low-resolution classifier for dual variants) on the held-out split.
    let (_, val_idx) = split_train_val(data.count());
    let ks = eval_ks(cfg.class_count);
    let eval = evaluate_classifier(
        exec,
        &deployment,
        &data.lr,
        &data.labels,
        &val_idx,
        &ks,
        plan.batch,
    )?;

    let mut metrics = String::from("metric,value\n");
    let mut kv = |k: &str, v: String| {
        let _ = writeln!(metrics, "{k},{v}");
    };
    kv("val_images", val_idx.len().to_string());
    kv("val_loss", eval.loss.to_string());
    for (i, &k) in ks.iter().enumerate() {
        kv(&format!("top{k}_error"), eval.errors[i].to_string());
    }
    kv("epochs", report.epochs_run.to_string());
    kv("final_rate", report.final_lr.to_string());
    std::fs::write(out.join("metrics.csv"), &metrics)?;

    println!(
        "{}: top-1 error {:.4} on {} held-out images after {} epochs -> {}",
        plan.variant.as_str(),
        eval.errors[0],
        val_idx.len(),
        report.epochs_run,
        out.display()
    );
    Ok(RunOutcome {
        deployment,
        report,
        eval,
        ks,
    })
}
