//! Coupling search: walks the shared-fraction grid deepest layer first,
//! training one model per candidate and keeping a step only when held-out
//! top-1 error strictly improves. Each trial trains from a seed derived
//! from the root seed and the candidate's shared-filter counts, so the
//! trial set is reproducible and independent of visit order.

use crate::plan::{Plan, Variant};
use std::fmt::Write as _;
use std::path::Path;
use vlrr_core::data::{load_dataset, make_pairs_with, DegradationSpec};
use vlrr_core::exec::Exec;
use vlrr_core::models::attach_dual_heads;
use vlrr_core::models::Pcsrn;
use vlrr_core::rng::{splitmix64, RandomState};
use vlrr_core::train::{
    eval_ks, evaluate_classifier, finetune_dual, grid_search_coupling, pretrain_coupled,
    split_train_val, TrainData,
};
use vlrr_core::{Error, Result};

fn trial_seed(root: u64, shared: &[usize; 3]) -> u64 {
    let packed = ((shared[0] as u64) << 32) | ((shared[1] as u64) << 16) | shared[2] as u64;
    splitmix64(root ^ packed)
}

pub fn cmd_search(plan_path: &Path, seed: u64, out: &Path) -> Result<()> {
    let plan = Plan::load(plan_path)?;
    if !matches!(plan.variant, Variant::Partial | Variant::Robust) {
        return Err(Error::InvalidParam {
            name: "plan",
            message: format!(
                "coupling search needs a partial or robust plan, got {}",
                plan.variant.as_str()
            ),
        });
    }
    let plan_dir = plan_path.parent().unwrap_or(Path::new("."));
    let dataset = load_dataset(&plan.data_path(plan_dir))?;

    let exec = Exec::global();
    let root = RandomState::new(seed);
    let spec = DegradationSpec {
        scale: plan.scale,
        gaussian_sigma: plan.augment_sigma,
        sp_fraction: plan.sp_fraction,
    };
    let pairs = make_pairs_with(exec, &dataset, &spec, &root)?;
    let data = TrainData::from_pairs(&pairs, &dataset.labels)?;
    let side = data.side();
    let cfg = plan.network_config(dataset.class_count as usize);
    let (_, val_idx) = split_train_val(data.count());
    let ks = eval_ks(cfg.class_count);

    let result = grid_search_coupling(&cfg, |coupling, ratios| {
        let rs = RandomState::new(trial_seed(seed, &coupling.shared));
        let mut trunk = Pcsrn::build(&cfg, coupling, &rs)?;
        pretrain_coupled(exec, &mut trunk, &data, &plan.pretrain_config()?, &rs)?;
        let mut dual = attach_dual_heads(&trunk, &cfg, side, plan.dropout, &rs)?;
        finetune_dual(exec, &mut dual, &data, &plan.finetune_config(), &rs)?;
        let net = dual.decouple()?;
        let eval =
            evaluate_classifier(exec, &net, &data.lr, &data.labels, &val_idx, &ks, plan.batch)?;
        println!(
            "trial {:.2},{:.2},{:.2} (shared {},{},{}): top-1 error {:.4}",
            ratios[0],
            ratios[1],
            ratios[2],
            coupling.shared[0],
            coupling.shared[1],
            coupling.shared[2],
            eval.errors[0]
        );
        Ok(eval.errors[0])
    })?;

    std::fs::create_dir_all(out)?;
    let mut csv = String::from("k1,k2,k3,c1,c2,c3,top1_error\n");
    for t in &result.trials {
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{},{}",
            t.shared[0], t.shared[1], t.shared[2], t.ratios[0], t.ratios[1], t.ratios[2], t.error
        );
    }
    std::fs::write(out.join("trials.csv"), &csv)?;

    let mut best_plan = plan.clone();
    best_plan.coupling = result.best_ratios;
    std::fs::write(out.join("plan.best.txt"), best_plan.render())?;

    println!(
        "best coupling {},{},{} (shared {},{},{}) with top-1 error {:.4} over {} trials -> {}",
        result.best_ratios[0],
        result.best_ratios[1],
        result.best_ratios[2],
        result.best.shared[0],
        result.best.shared[1],
        result.best.shared[2],
        result.best_error,
        result.trials.len(),
        out.display()
    );
    Ok(())
}
