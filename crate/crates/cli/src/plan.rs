//! Training plans: a flat `key = value` text format describing one
//! experiment. Lines starting with `#` (or blank) are skipped; a trailing
//! `# comment` after the value is allowed. Unknown keys, duplicate keys,
//! and keys that are meaningless for the chosen variant are errors, so a
//! plan that parses is a plan that runs.
//!
//! [`Plan::render`] emits a canonical form (fixed key order, variant-
//! appropriate keys only) that parses back to an identical plan; the run
//! command writes it next to its outputs so a result can always be traced
//! to the exact configuration that produced it.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use vlrr_core::models::{CouplingConfig, NetworkConfig};
use vlrr_core::train::{FinetuneConfig, PlateauConfig, PretrainConfig, PretrainLoss, PretrainMode};
use vlrr_core::{Error, Result};

/// The model ladder. Roman-numeral aliases (I..V) are accepted on input;
/// the canonical spelling names what each variant does.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    /// Classifier trained directly on degraded inputs, no pre-training.
    Baseline,
    /// Reconstruction pre-training, then the classifier head is attached
    /// and everything fine-tunes on the degraded channel.
    Pretrained,
    /// Dual-channel model with every trunk filter shared between the
    /// degraded and clean channels.
    Coupled,
    /// Dual-channel model sharing only the first k filters per layer.
    Partial,
    /// `Partial` with an outlier-robust reconstruction loss.
    Robust,
}

impl Variant {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "baseline" | "I" => Ok(Variant::Baseline),
            "pretrained" | "II" => Ok(Variant::Pretrained),
            "coupled" | "III" => Ok(Variant::Coupled),
            "partial" | "IV" => Ok(Variant::Partial),
            "robust" | "V" => Ok(Variant::Robust),
            other => Err(Error::InvalidParam {
                name: "variant",
                message: format!(
                    "unknown variant {other:?}; expected baseline, pretrained, coupled, \
                     partial, robust (or I..V)"
                ),
            }),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Baseline => "baseline",
            Variant::Pretrained => "pretrained",
            Variant::Coupled => "coupled",
            Variant::Partial => "partial",
            Variant::Robust => "robust",
        }
    }

    /// Variants that run reconstruction pre-training before classification.
    pub fn pretrains(self) -> bool {
        self != Variant::Baseline
    }

    /// Variants built around the two-channel trunk.
    pub fn is_dual(self) -> bool {
        matches!(self, Variant::Coupled | Variant::Partial | Variant::Robust)
    }
}

/// One experiment: model variant, data, architecture, and training
/// hyperparameters. Defaults depend on the variant — dual-channel training
/// runs at a fixed lower rate, single-channel training anneals on plateau.
#[derive(Debug, Clone, PartialEq)]
pub struct Plan {
    pub variant: Variant,
    /// High-resolution dataset, relative paths taken from the plan's dir.
    pub data: PathBuf,
    pub scale: usize,
    pub sp_fraction: f64,
    pub filters: [usize; 3],
    pub filter_sizes: [usize; 3],
    pub fc_width: usize,
    pub dropout: f64,
    /// Per-layer fraction of filters shared between channels (partial and
    /// robust variants; coupled is pinned to 1,1,1).
    pub coupling: [f64; 3],
    pub pretrain_epochs: usize,
    pub pretrain_rate: f64,
    pub layerwise: bool,
    pub huber_c: f64,
    pub finetune_rate: f64,
    pub finetune_epochs: usize,
    pub anneal: bool,
    pub patience: usize,
    pub min_improvement: f64,
    pub rate_floor: f64,
    pub batch: usize,
    pub augment_sigma: f64,
}

fn bad(key: &'static str, message: String) -> Error {
    Error::InvalidParam { name: key, message }
}

impl Plan {
    /// A plan with every hyperparameter at its variant default.
    pub fn defaults(variant: Variant, data: PathBuf) -> Self {
        let dual = variant.is_dual();
        Plan {
            variant,
            data,
            scale: 4,
            sp_fraction: 0.0,
            filters: [64, 64, 32],
            filter_sizes: [5, 3, 1],
            fc_width: 1024,
            dropout: 0.5,
            coupling: if variant == Variant::Partial || variant == Variant::Robust {
                [0.5, 0.75, 0.75]
            } else {
                [1.0, 1.0, 1.0]
            },
            pretrain_epochs: 20,
            pretrain_rate: 0.01,
            layerwise: false,
            huber_c: 1.345,
            finetune_rate: if dual { 0.01 } else { 0.1 },
            finetune_epochs: 100,
            anneal: !dual,
            patience: 5,
            min_improvement: 0.001,
            rate_floor: 1e-5,
            batch: 128,
            augment_sigma: 0.05,
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut pairs: BTreeMap<&str, (usize, &str)> = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = match raw.find('#') {
                Some(cut) => &raw[..cut],
                None => raw,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(bad(
                    "plan",
                    format!("line {}: expected `key = value`, got {raw:?}", lineno + 1),
                ));
            };
            let (key, value) = (key.trim(), value.trim());
            if key.is_empty() || value.is_empty() {
                return Err(bad(
                    "plan",
                    format!("line {}: empty key or value in {raw:?}", lineno + 1),
                ));
            }
            if pairs.insert(key, (lineno + 1, value)).is_some() {
                return Err(bad(
                    "plan",
                    format!("line {}: duplicate key {key}", lineno + 1),
                ));
            }
        }

        fn take<'a>(
            pairs: &mut BTreeMap<&str, (usize, &'a str)>,
            key: &str,
        ) -> Option<&'a str> {
            pairs.remove(key).map(|(_, v)| v)
        }

        let variant = Variant::parse(take(&mut pairs, "variant").ok_or_else(|| {
            bad("variant", "plan is missing the required `variant` key".into())
        })?)?;
        let data = PathBuf::from(take(&mut pairs, "data").ok_or_else(|| {
            bad("data", "plan is missing the required `data` key".into())
        })?);
        let mut plan = Plan::defaults(variant, data);

        if let Some(v) = take(&mut pairs, "scale") {
            plan.scale = parse_usize("scale", v)?;
        }
        if let Some(v) = take(&mut pairs, "sp_fraction") {
            plan.sp_fraction = parse_f64("sp_fraction", v)?;
        }
        if let Some(v) = take(&mut pairs, "filters") {
            plan.filters = parse_triple_usize("filters", v)?;
        }
        if let Some(v) = take(&mut pairs, "filter_sizes") {
            plan.filter_sizes = parse_triple_usize("filter_sizes", v)?;
        }
        if let Some(v) = take(&mut pairs, "fc_width") {
            plan.fc_width = parse_usize("fc_width", v)?;
        }
        if let Some(v) = take(&mut pairs, "dropout") {
            plan.dropout = parse_f64("dropout", v)?;
        }
        if let Some(v) = take(&mut pairs, "coupling") {
            if !matches!(variant, Variant::Partial | Variant::Robust) {
                return Err(bad(
                    "coupling",
                    format!(
                        "only partial and robust variants take a coupling key; \
                         {} does not",
                        variant.as_str()
                    ),
                ));
            }
            plan.coupling = parse_triple_f64("coupling", v)?;
        }
        for key in ["pretrain_epochs", "pretrain_rate", "layerwise"] {
            if pairs.contains_key(key) && !variant.pretrains() {
                return Err(bad(
                    "plan",
                    format!("the baseline variant has no pre-training; remove `{key}`"),
                ));
            }
        }
        if let Some(v) = take(&mut pairs, "pretrain_epochs") {
            plan.pretrain_epochs = parse_usize("pretrain_epochs", v)?;
        }
        if let Some(v) = take(&mut pairs, "pretrain_rate") {
            plan.pretrain_rate = parse_f64("pretrain_rate", v)?;
        }
        if let Some(v) = take(&mut pairs, "layerwise") {
            plan.layerwise = parse_bool("layerwise", v)?;
        }
        if let Some(v) = take(&mut pairs, "huber_c") {
            if variant != Variant::Robust {
                return Err(bad(
                    "huber_c",
                    "only the robust variant takes a huber_c key".into(),
                ));
            }
            plan.huber_c = parse_f64("huber_c", v)?;
        }
        if let Some(v) = take(&mut pairs, "finetune_rate") {
            plan.finetune_rate = parse_f64("finetune_rate", v)?;
        }
        if let Some(v) = take(&mut pairs, "finetune_epochs") {
            plan.finetune_epochs = parse_usize("finetune_epochs", v)?;
        }
        if let Some(v) = take(&mut pairs, "anneal") {
            plan.anneal = parse_bool("anneal", v)?;
        }
        if let Some(v) = take(&mut pairs, "patience") {
            plan.patience = parse_usize("patience", v)?;
        }
        if let Some(v) = take(&mut pairs, "min_improvement") {
            plan.min_improvement = parse_f64("min_improvement", v)?;
        }
        if let Some(v) = take(&mut pairs, "rate_floor") {
            plan.rate_floor = parse_f64("rate_floor", v)?;
        }
        if let Some(v) = take(&mut pairs, "batch") {
            plan.batch = parse_usize("batch", v)?;
        }
        if let Some(v) = take(&mut pairs, "augment_sigma") {
            plan.augment_sigma = parse_f64("augment_sigma", v)?;
        }

        if let Some((&key, &(lineno, _))) = pairs.iter().next() {
            return Err(bad(
                "plan",
                format!("line {lineno}: unknown key {key:?}"),
            ));
        }
        Ok(plan)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text)
    }

    /// Canonical text form; [`Plan::parse`] of the result reproduces the
    /// plan exactly.
    pub fn render(&self) -> String {
        let mut out = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(out, "{k} = {v}");
        };
        kv("variant", self.variant.as_str().into());
        kv("data", self.data.display().to_string());
        kv("scale", self.scale.to_string());
        kv("sp_fraction", self.sp_fraction.to_string());
        kv("filters", triple_usize(&self.filters));
        kv("filter_sizes", triple_usize(&self.filter_sizes));
        kv("fc_width", self.fc_width.to_string());
        kv("dropout", self.dropout.to_string());
        if matches!(self.variant, Variant::Partial | Variant::Robust) {
            kv(
                "coupling",
                format!("{},{},{}", self.coupling[0], self.coupling[1], self.coupling[2]),
            );
        }
        if self.variant.pretrains() {
            kv("pretrain_epochs", self.pretrain_epochs.to_string());
            kv("pretrain_rate", self.pretrain_rate.to_string());
            kv("layerwise", self.layerwise.to_string());
        }
        if self.variant == Variant::Robust {
            kv("huber_c", self.huber_c.to_string());
        }
        kv("finetune_rate", self.finetune_rate.to_string());
        kv("finetune_epochs", self.finetune_epochs.to_string());
        kv("anneal", self.anneal.to_string());
        kv("patience", self.patience.to_string());
        kv("min_improvement", self.min_improvement.to_string());
        kv("rate_floor", self.rate_floor.to_string());
        kv("batch", self.batch.to_string());
        kv("augment_sigma", self.augment_sigma.to_string());
        out
    }

    /// The dataset path, resolved against the directory the plan came from
    /// when it is relative.
    pub fn data_path(&self, plan_dir: &Path) -> PathBuf {
        if self.data.is_absolute() {
            self.data.clone()
        } else {
            plan_dir.join(&self.data)
        }
    }

    pub fn network_config(&self, class_count: usize) -> NetworkConfig {
        NetworkConfig {
            filters: self.filters,
            filter_sizes: self.filter_sizes,
            fc_width: self.fc_width,
            class_count,
        }
    }

    pub fn coupling_config(&self, net: &NetworkConfig) -> Result<CouplingConfig> {
        match self.variant {
            Variant::Coupled => Ok(CouplingConfig::full(net)),
            _ => CouplingConfig::from_ratios(self.coupling, net),
        }
    }

    fn pretrain_loss(&self) -> Result<PretrainLoss> {
        Ok(match self.variant {
            Variant::Robust => {
                PretrainLoss::Huber(vlrr_core::loss::HuberParams::new(self.huber_c)?)
            }
            _ => PretrainLoss::Mse,
        })
    }

    pub fn pretrain_config(&self) -> Result<PretrainConfig> {
        Ok(PretrainConfig {
            loss: self.pretrain_loss()?,
            learning_rate: self.pretrain_rate,
            batch_size: self.batch,
            epochs: self.pretrain_epochs,
            augment_sigma: self.augment_sigma,
            mode: if self.layerwise {
                PretrainMode::Layerwise
            } else {
                PretrainMode::EndToEnd
            },
        })
    }

    pub fn finetune_config(&self) -> FinetuneConfig {
        FinetuneConfig {
            learning_rate: self.finetune_rate,
            batch_size: self.batch,
            max_epochs: self.finetune_epochs,
            augment_sigma: self.augment_sigma,
            plateau: self.anneal.then_some(PlateauConfig {
                patience: self.patience,
                factor: 10.0,
                min_improvement: self.min_improvement,
                floor: self.rate_floor,
            }),
        }
    }
}

fn parse_usize(key: &'static str, v: &str) -> Result<usize> {
    v.parse()
        .map_err(|_| bad(key, format!("expected a non-negative integer, got {v:?}")))
}

fn parse_f64(key: &'static str, v: &str) -> Result<f64> {
    let x: f64 = v
        .parse()
        .map_err(|_| bad(key, format!("expected a number, got {v:?}")))?;
    if !x.is_finite() {
        return Err(bad(key, format!("expected a finite number, got {v}")));
    }
    Ok(x)
}

fn parse_bool(key: &'static str, v: &str) -> Result<bool> {
    match v {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(bad(key, format!("expected true or false, got {v:?}"))),
    }
}

fn parse_triple_usize(key: &'static str, v: &str) -> Result<[usize; 3]> {
    let items: Vec<&str> = v.split(',').map(str::trim).collect();
    if items.len() != 3 {
        return Err(bad(key, format!("expected three comma-separated values, got {v:?}")));
    }
    Ok([
        parse_usize(key, items[0])?,
        parse_usize(key, items[1])?,
        parse_usize(key, items[2])?,
    ])
}

fn parse_triple_f64(key: &'static str, v: &str) -> Result<[f64; 3]> {
    let items: Vec<&str> = v.split(',').map(str::trim).collect();
    if items.len() != 3 {
        return Err(bad(key, format!("expected three comma-separated values, got {v:?}")));
    }
    Ok([
        parse_f64(key, items[0])?,
        parse_f64(key, items[1])?,
        parse_f64(key, items[2])?,
    ])
}

fn triple_usize(v: &[usize; 3]) -> String {
    format!("{},{},{}", v[0], v[1], v[2])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_plan_gets_variant_defaults() {
        let single = Plan::parse("variant = II\ndata = hr.vlrd\n").unwrap();
        assert_eq!(single.variant, Variant::Pretrained);
        assert_eq!(single.finetune_rate, 0.1);
        assert!(single.anneal);

        let dual = Plan::parse("variant = robust\ndata = hr.vlrd\n").unwrap();
        assert_eq!(dual.variant, Variant::Robust);
        assert_eq!(dual.finetune_rate, 0.01);
        assert!(!dual.anneal);
        assert_eq!(dual.coupling, [0.5, 0.75, 0.75]);
    }

    #[test]
    fn canonical_render_round_trips_every_variant() {
        for v in ["I", "II", "III", "IV", "V"] {
            let plan = Plan::parse(&format!("variant = {v}\ndata = d/hr.vlrd\n")).unwrap();
            let text = plan.render();
            assert_eq!(Plan::parse(&text).unwrap(), plan, "variant {v}");
            assert_eq!(Plan::parse(&text).unwrap().render(), text);
        }
    }

    #[test]
    fn comments_and_spacing_are_ignored() {
        let text = "
# an experiment
variant = IV   # the partially shared one
  data =  hr.vlrd

coupling = 0.25 , 0.5,1.0
";
        let plan = Plan::parse(text).unwrap();
        assert_eq!(plan.coupling, [0.25, 0.5, 1.0]);
    }

    #[test]
    fn bad_plans_are_rejected_with_context() {
        for (text, needle) in [
            ("data = hr.vlrd\n", "variant"),
            ("variant = II\n", "data"),
            ("variant = XI\ndata = d\n", "unknown variant"),
            ("variant = II\ndata = d\nbogus = 1\n", "unknown key"),
            ("variant = II\ndata = d\nbatch = 1\nbatch = 2\n", "duplicate"),
            ("variant = II\ndata = d\nbatch\n", "key = value"),
            ("variant = II\ndata = d\ncoupling = 1,1,1\n", "coupling"),
            ("variant = I\ndata = d\npretrain_rate = 0.1\n", "pre-training"),
            ("variant = IV\ndata = d\nhuber_c = 2\n", "robust"),
            ("variant = II\ndata = d\nbatch = -3\n", "integer"),
            ("variant = II\ndata = d\ndropout = nope\n", "number"),
            ("variant = II\ndata = d\nlayerwise = yes\n", "true or false"),
            ("variant = II\ndata = d\nfilters = 1,2\n", "three"),
        ] {
            let err = Plan::parse(text).unwrap_err().to_string();
            assert!(
                err.contains(needle),
                "{text:?} should mention {needle:?}, got {err:?}"
            );
        }
    }

    #[test]
    fn coupled_variant_pins_full_sharing() {
        let plan = Plan::parse("variant = III\ndata = d\n").unwrap();
        let net = plan.network_config(10);
        assert_eq!(plan.coupling_config(&net).unwrap().shared, [64, 64, 32]);
        // And the canonical render carries no coupling key to re-interpret.
        assert!(!plan.render().contains("coupling"));
    }
}
