use crate::conv::{Builder, PointwiseKernel};
use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::param::{ParamId, ParamStore, WeightSet};
use crate::rng::SeededRng;
use crate::tensor::Tensor;

use super::lstea::{lstea_module_forward, BlockSettings, LsteaBlockWeights};
use super::{finish_output, prepare_input};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LabNetConfig {
    pub channels: usize,
    pub scale: usize,
    /// Blocks in each of the six modules, encoder first.
    pub blocks: [usize; 6],
    pub block: BlockSettings,
    /// LR patch side the attention normalisers are initialised for.
    pub nominal_side: usize,
}

impl LabNetConfig {
    pub fn desk(channels: usize, scale: usize) -> Self {
        Self {
            channels,
            scale,
            blocks: [1; 6],
            block: BlockSettings::default(),
            nominal_side: 16,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(2..=4).contains(&self.scale) {
            return Err(Error::Config(format!("scale must be 2, 3 or 4, got {}", self.scale)));
        }
        if self.channels == 0 {
            return Err(Error::Config("channels must be positive".into()));
        }
        Ok(())
    }
}

/// Module index → resolution level (0 = full, 2 = quarter).
const LEVEL: [usize; 6] = [0, 1, 2, 2, 1, 0];

#[derive(Clone, Debug)]
pub struct LabNet {
    pub config: LabNetConfig,
    pub shallow: ParamId,
    pub modules: Vec<Vec<LsteaBlockWeights>>,
    /// Stride-2 3×3 convolutions after modules 1 and 2.
    pub down: [ParamId; 2],
    /// `4C×C` 1×1 maps feeding a ×2 pixel shuffle, before modules 5 and 6.
    pub up: [PointwiseKernel; 2],
    /// `C×2C` skip fusions.
    pub skip_fuse: [PointwiseKernel; 2],
    pub recon: ParamId,
    pub tail: ParamId,
}

impl LabNet {
    pub fn new(store: &mut ParamStore, rng: &mut SeededRng, config: LabNetConfig) -> Result<Self> {
        config.validate()?;
        let c = config.channels;
        let s = config.scale;
        let mut b = Builder::new(store, rng);
        let shallow = b.conv("shallow", c, 3, 3);
        let mut modules = Vec::with_capacity(6);
        for (m, &count) in config.blocks.iter().enumerate() {
            let side = (config.nominal_side >> LEVEL[m]).max(1);
            let blocks = (0..count)
                .map(|i| LsteaBlockWeights::new(&mut b.scope(&format!("m{m}.b{i}")), c, config.block, side * side))
                .collect();
            modules.push(blocks);
        }
        Ok(Self {
            config,
            shallow,
            modules,
            down: [b.conv("down0", c, c, 3), b.conv("down1", c, c, 3)],
            up: [b.pointwise("up0", 4 * c, c), b.pointwise("up1", 4 * c, c)],
            skip_fuse: [b.pointwise("skip0", c, 2 * c), b.pointwise("skip1", c, 2 * c)],
            recon: b.conv("recon", 3 * s * s, c, 3),
            tail: b.conv("tail", 3, 3, 3),
        })
    }
}

impl WeightSet for LabNet {
    fn visit(&self, f: &mut dyn FnMut(ParamId)) {
        f(self.shallow);
        self.modules.visit(f);
        self.down.visit(f);
        self.up.visit(f);
        self.skip_fuse.visit(f);
        f(self.recon);
        f(self.tail);
    }
}

fn conv(g: &mut Graph, store: &ParamStore, id: ParamId, x: Var, stride: usize) -> Result<Var> {
    let w = g.param(store, id);
    g.conv(x, w, stride)
}

/// `(3,H,W) → (3,sH,sW)`; any `H,W ≥ 4`.
pub fn labnet_forward(g: &mut Graph, store: &ParamStore, net: &LabNet, lr: &Tensor) -> Result<Var> {
    let s = net.config.scale;
    let (x, base, out) = prepare_input(g, lr, s)?;
    let shallow = conv(g, store, net.shallow, x, 1)?;

    let e1 = lstea_module_forward(g, store, shallow, &net.modules[0])?;
    let t = conv(g, store, net.down[0], e1, 2)?;
    let e2 = lstea_module_forward(g, store, t, &net.modules[1])?;
    let t = conv(g, store, net.down[1], e2, 2)?;
    let e3 = lstea_module_forward(g, store, t, &net.modules[2])?;
    let d4 = lstea_module_forward(g, store, e3, &net.modules[3])?;

    let mut h = d4;
    for (i, skip) in [e2, e1].into_iter().enumerate() {
        let u = net.up[i].forward(g, store, h)?;
        let u = g.pixel_shuffle(u, 2)?;
        let cat = g.concat(&[u, skip])?;
        let fused = net.skip_fuse[i].forward(g, store, cat)?;
        h = lstea_module_forward(g, store, fused, &net.modules[4 + i])?;
    }

    let feat = g.add(h, shallow)?;
    let r = conv(g, store, net.recon, feat, 1)?;
    let r = g.pixel_shuffle(r, s)?;
    let y = conv(g, store, net.tail, r, 1)?;
    finish_output(g, y, base, out)
}
