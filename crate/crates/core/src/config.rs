//! Line-based `key = value` run configuration.
//!
//! Blank lines and `#` comments are ignored. Unknown keys are an error so a
//! typo never silently falls back to a default.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::attention::TaylorOrder;
use crate::degrade::DegradationSpec;
use crate::error::{Error, Result};
use crate::mlfr::MlfrVariant;
use crate::model::{ModelConfig, ModelKind};
use crate::train::TrainConfig;

const KEYS: &[&str] = &[
    "model",
    "scale",
    "channels",
    "blocks",
    "modules",
    "alpha1",
    "alpha2",
    "alpha3",
    "alpha4",
    "beta1",
    "beta2",
    "beta3",
    "beta4",
    "mlfr.variant",
    "taylor.order",
    "dwc",
    "seed",
    "lr",
    "halve_every",
    "iters",
    "batch",
    "patch",
    "checkpoint_every",
    "loss.l1",
    "loss.perc",
    "loss.adv",
    "noise_sigma",
    "degradation.order",
    "data",
    "out",
];

/// Everything a `train` run needs.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub degradation: DegradationSpec,
    /// Folder with `hr/*.ppm`.
    pub data: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

/// Raw key/value pairs in file order.
pub fn parse_pairs(text: &str) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", i + 1)))?;
        let (k, v) = (k.trim(), v.trim());
        if !KEYS.contains(&k) {
            return Err(Error::Config(format!("line {}: unknown key `{k}`", i + 1)));
        }
        if map.insert(k.to_string(), v.to_string()).is_some() {
            return Err(Error::Config(format!("line {}: duplicate key `{k}`", i + 1)));
        }
    }
    Ok(map)
}

fn get<T: std::str::FromStr>(map: &BTreeMap<String, String>, key: &str) -> Result<Option<T>> {
    map.get(key)
        .map(|v| {
            v.parse()
                .map_err(|_| Error::Config(format!("invalid value `{v}` for `{key}`")))
        })
        .transpose()
}

pub fn parse(text: &str) -> Result<RunConfig> {
    let map = parse_pairs(text)?;
    let kind = match map.get("model").map(String::as_str) {
        None | Some("labnet") => ModelKind::LabNet,
        Some("realnet") => ModelKind::RealNet,
        Some(other) => return Err(Error::Config(format!("unknown model `{other}`"))),
    };
    let scale = get(&map, "scale")?.unwrap_or(2);
    let channels = get(&map, "channels")?.unwrap_or(16);
    let mut model = ModelConfig::desk(kind, channels, scale);
    if let Some(b) = map.get("blocks") {
        model.blocks = b
            .split(',')
            .map(|s| {
                s.trim()
                    .parse()
                    .map_err(|_| Error::Config(format!("invalid block count `{s}`")))
            })
            .collect::<Result<_>>()?;
    }
    if let Some(m) = get(&map, "modules")? {
        model.modules = m;
    }
    for i in 0..4 {
        if let Some(a) = get(&map, &format!("alpha{}", i + 1))? {
            model.alpha[i] = a;
        }
        if let Some(b) = get(&map, &format!("beta{}", i + 1))? {
            model.beta[i] = b;
        }
    }
    if let Some(v) = map.get("mlfr.variant") {
        model.block.mlfr = v.parse::<MlfrVariant>()?;
    }
    if let Some(o) = get::<usize>(&map, "taylor.order")? {
        model.block.order = TaylorOrder::try_from(o)?;
    }
    if let Some(d) = get(&map, "dwc")? {
        model.block.dwc = d;
    }
    if let Some(s) = get(&map, "seed")? {
        model.seed = s;
    }

    let mut train = TrainConfig::default();
    if let Some(v) = get(&map, "lr")? {
        train.lr = v;
    }
    if let Some(v) = get(&map, "halve_every")? {
        train.halve_every = v;
    }
    if let Some(v) = get(&map, "iters")? {
        train.iters = v;
    }
    if let Some(v) = get(&map, "batch")? {
        train.batch = v;
    }
    if let Some(v) = get(&map, "patch")? {
        train.patch = v;
    }
    if let Some(v) = get(&map, "checkpoint_every")? {
        train.checkpoint_every = v;
    }
    if let Some(v) = get(&map, "loss.l1")? {
        train.loss_weights.l1 = v;
    }
    if let Some(v) = get(&map, "loss.perc")? {
        train.loss_weights.perc = v;
    }
    if let Some(v) = get(&map, "loss.adv")? {
        train.loss_weights.adv = v;
    }
    train.seed = model.seed;
    model.nominal_side = (train.patch / scale.max(1)).max(1);

    let mut degradation = DegradationSpec::train(scale)?;
    if let Some(v) = get(&map, "noise_sigma")? {
        degradation.noise_sigma = v;
    }
    if let Some(v) = get(&map, "degradation.order")? {
        degradation.order = v;
    }

    let cfg = RunConfig {
        model,
        train,
        degradation,
        data: map.get("data").map(PathBuf::from),
        out: map.get("out").map(PathBuf::from),
    };
    cfg.model.validate()?;
    cfg.train.validate()?;
    cfg.degradation.validate()?;
    Ok(cfg)
}

pub fn load(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path)?;
    let mut cfg = parse(&text)?;
    // relative paths are relative to the config file
    let base = path.parent().unwrap_or(Path::new("."));
    for p in [&mut cfg.data, &mut cfg.out].into_iter().flatten() {
        if p.is_relative() {
            *p = base.join(&*p);
        }
    }
    Ok(cfg)
}
