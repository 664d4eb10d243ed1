//! Configured models and their on-disk checkpoints.
//!
//! A checkpoint directory holds `config.txt` (the model keys), and the
//! parameter `manifest.txt` + `params.tnsr` pair written by
//! [`ParamStore::save`].

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::config;
use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::networks::{labnet_forward, realnet_forward, BlockSettings, LabNet, LabNetConfig, RealNet, RealNetConfig};
use crate::param::{ParamStore, WeightSet};
use crate::rng::seeded;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModelKind {
    LabNet,
    RealNet,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub kind: ModelKind,
    pub scale: usize,
    pub channels: usize,
    /// Six module sizes for LabNet; one blocks-per-module entry for RealNet.
    pub blocks: Vec<usize>,
    /// RealNet modules per branch.
    pub modules: usize,
    pub alpha: [f64; 4],
    pub beta: [f64; 4],
    pub block: BlockSettings,
    pub nominal_side: usize,
    pub seed: u64,
}

impl ModelConfig {
    pub fn desk(kind: ModelKind, channels: usize, scale: usize) -> Self {
        Self {
            kind,
            scale,
            channels,
            blocks: match kind {
                ModelKind::LabNet => vec![1; 6],
                ModelKind::RealNet => vec![1],
            },
            modules: 2,
            alpha: [1.0; 4],
            beta: [1.0; 4],
            block: BlockSettings::default(),
            nominal_side: 16,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let want = match self.kind {
            ModelKind::LabNet => 6,
            ModelKind::RealNet => 1,
        };
        if self.blocks.len() != want {
            return Err(Error::Config(format!(
                "`blocks` needs {want} entries for this model, got {}",
                self.blocks.len()
            )));
        }
        match self.kind {
            ModelKind::LabNet => self.labnet().validate(),
            ModelKind::RealNet => self.realnet().validate(),
        }
    }

    fn labnet(&self) -> LabNetConfig {
        let mut blocks = [1; 6];
        blocks.iter_mut().zip(&self.blocks).for_each(|(d, s)| *d = *s);
        LabNetConfig {
            channels: self.channels,
            scale: self.scale,
            blocks,
            block: self.block,
            nominal_side: self.nominal_side,
        }
    }

    fn realnet(&self) -> RealNetConfig {
        RealNetConfig {
            channels: self.channels,
            scale: self.scale,
            modules: self.modules,
            blocks_per_module: self.blocks.first().copied().unwrap_or(1),
            alpha: self.alpha,
            beta: self.beta,
            block: self.block,
            nominal_side: self.nominal_side,
        }
    }

    /// The model keys in config-file syntax.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let kind = match self.kind {
            ModelKind::LabNet => "labnet",
            ModelKind::RealNet => "realnet",
        };
        let blocks: Vec<String> = self.blocks.iter().map(|b| b.to_string()).collect();
        let _ = writeln!(s, "model = {kind}");
        let _ = writeln!(s, "scale = {}", self.scale);
        let _ = writeln!(s, "channels = {}", self.channels);
        let _ = writeln!(s, "blocks = {}", blocks.join(","));
        let _ = writeln!(s, "modules = {}", self.modules);
        for i in 0..4 {
            let _ = writeln!(s, "alpha{} = {:?}", i + 1, self.alpha[i]);
            let _ = writeln!(s, "beta{} = {:?}", i + 1, self.beta[i]);
        }
        let _ = writeln!(s, "mlfr.variant = {}", self.block.mlfr);
        let _ = writeln!(s, "taylor.order = {}", self.block.order.get());
        let _ = writeln!(s, "dwc = {}", self.block.dwc);
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "patch = {}", self.nominal_side * self.scale);
        s
    }
}

#[derive(Clone, Debug)]
pub enum Model {
    LabNet(LabNet),
    RealNet(RealNet),
}

impl Model {
    /// Builds and initialises the model from `cfg.seed`.
    pub fn build(cfg: &ModelConfig) -> Result<(Self, ParamStore)> {
        cfg.validate()?;
        let mut store = ParamStore::new();
        let mut rng = seeded(cfg.seed);
        let model = match cfg.kind {
            ModelKind::LabNet => Model::LabNet(LabNet::new(&mut store, &mut rng, cfg.labnet())?),
            ModelKind::RealNet => Model::RealNet(RealNet::new(&mut store, &mut rng, cfg.realnet())?),
        };
        Ok((model, store))
    }

    pub fn scale(&self) -> usize {
        match self {
            Model::LabNet(n) => n.config.scale,
            Model::RealNet(n) => n.config.scale,
        }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, lr: &Tensor) -> Result<Var> {
        match self {
            Model::LabNet(n) => labnet_forward(g, store, n, lr),
            Model::RealNet(n) => realnet_forward(g, store, n, lr),
        }
    }

    /// Inference without keeping a tape around.
    pub fn super_resolve(&self, store: &ParamStore, lr: &Tensor) -> Result<Tensor> {
        let mut g = Graph::new();
        let y = self.forward(&mut g, store, lr)?;
        Ok(g.value(y).clone())
    }

    /// Replaces the RealNet mixing knobs.
    pub fn set_knobs(&mut self, alpha: [f64; 4], beta: [f64; 4]) -> Result<()> {
        match self {
            Model::RealNet(n) => {
                n.config.alpha = alpha;
                n.config.beta = beta;
                Ok(())
            }
            Model::LabNet(_) => Err(Error::Config("mixing knobs need a realnet checkpoint".into())),
        }
    }
}

impl WeightSet for Model {
    fn visit(&self, f: &mut dyn FnMut(crate::param::ParamId)) {
        match self {
            Model::LabNet(n) => n.visit(f),
            Model::RealNet(n) => n.visit(f),
        }
    }
}

pub fn save_checkpoint(dir: &Path, cfg: &ModelConfig, store: &ParamStore) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("config.txt"), cfg.to_text())?;
    store.save(dir)
}

/// Rebuilds the model described by `config.txt` and loads its parameters.
pub fn load_checkpoint(dir: &Path) -> Result<(ModelConfig, Model, ParamStore)> {
    let text = fs::read_to_string(dir.join("config.txt"))?;
    let cfg = config::parse(&text)?.model;
    load_checkpoint_as(dir, &cfg).map(|(m, s)| (cfg, m, s))
}

/// Loads parameters into a model built from `cfg`; the first tensor whose
/// name or shape disagrees is reported.
pub fn load_checkpoint_as(dir: &Path, cfg: &ModelConfig) -> Result<(Model, ParamStore)> {
    let (model, mut store) = Model::build(cfg)?;
    store.load(dir)?;
    Ok((model, store))
}
