//! Checkpoint evaluation on a dataset archive. Images are standardised
//! per image (the same statistics the training pairs use for their
//! low-resolution side); dual checkpoints are decoupled to their
//! low-resolution deployment path first.

use std::path::Path;
use vlrr_core::data::{load_dataset, normalize};
use vlrr_core::exec::Exec;
use vlrr_core::models::{load_model, ClassifierNet, LoadedModel};
use vlrr_core::tensor::{gather_rows, Tensor};
use vlrr_core::train::{eval_ks, evaluate_classifier};
use vlrr_core::{Error, Result};

fn parse_topk(s: &str, class_count: usize) -> Result<Vec<usize>> {
    let mut ks = Vec::new();
    for item in s.split(',') {
        let k: usize = item.trim().parse().map_err(|_| Error::InvalidParam {
            name: "topk",
            message: format!("expected comma-separated integers, got {s:?}"),
        })?;
        if k == 0 || k > class_count {
            return Err(Error::InvalidParam {
                name: "topk",
                message: format!("k = {k} outside 1..={class_count}"),
            });
        }
        ks.push(k);
    }
    if ks.is_empty() {
        return Err(Error::InvalidParam {
            name: "topk",
            message: "no k values given".into(),
        });
    }
    Ok(ks)
}

fn classifier_from(path: &Path) -> Result<ClassifierNet> {
    match load_model(path)? {
        LoadedModel::Classifier(net) => Ok(net),
        LoadedModel::Dual(dual) => dual.decouple(),
        other => Err(Error::InvalidParam {
            name: "checkpoint",
            message: format!(
                "{:?} checkpoints carry no classifier head; evaluate a trained \
                 classifier or dual checkpoint",
                other.kind()
            ),
        }),
    }
}

/// Standardises each (1, h, w) image in place of the archive's [0, 1]
/// pixels, matching how training inputs were prepared.
fn normalized_images(images: &Tensor) -> Result<Tensor> {
    let (count, _, h, w) = images.dims4("eval images")?;
    let mut out = Tensor::zeros(&[count, 1, h, w]);
    let stride = h * w;
    for i in 0..count {
        let image = gather_rows(images, &[i])?.reshape(&[1, h, w])?;
        let (normed, _, _) = normalize(&image);
        out.data_mut()[i * stride..(i + 1) * stride].copy_from_slice(normed.data());
    }
    Ok(out)
}

pub fn cmd_eval(checkpoint: &Path, data: &Path, topk: &str) -> Result<()> {
    let net = classifier_from(checkpoint)?;
    let dataset = load_dataset(data)?;
    if dataset.class_count as usize != net.class_count() {
        return Err(Error::InvalidParam {
            name: "data",
            message: format!(
                "archive has {} classes but the checkpoint classifies {}",
                dataset.class_count,
                net.class_count()
            ),
        });
    }
    let ks = if topk.is_empty() {
        eval_ks(net.class_count())
    } else {
        parse_topk(topk, net.class_count())?
    };
    let images = normalized_images(&dataset.images)?;
    let labels: Vec<usize> = dataset.labels.iter().map(|&l| l as usize).collect();
    let indices: Vec<usize> = (0..dataset.count()).collect();
    let report = evaluate_classifier(Exec::global(), &net, &images, &labels, &indices, &ks, 128)?;

    println!("images = {}", dataset.count());
    println!("loss = {}", report.loss);
    for (i, &k) in ks.iter().enumerate() {
        println!("top{k}_error = {}", report.errors[i]);
    }
    Ok(())
}
