use crate::conv::{Builder, ChannelAttentionWeights, PointwiseKernel};
use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::param::{ParamId, ParamStore, WeightSet};
use crate::rng::SeededRng;
use crate::tensor::Tensor;

use super::lstea::{lstea_module_forward, BlockSettings, LsteaBlockWeights};
use super::{finish_output, prepare_input};

/// Three adapters plus one fusion, each taking one `(α, β)` pair.
pub const KNOBS: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RealNetConfig {
    pub channels: usize,
    pub scale: usize,
    /// Modules per branch, 1 to 4. An adapter follows every module but the
    /// last; adapter `i` uses `(α[i], β[i])` and the fusion uses `(α[3], β[3])`.
    pub modules: usize,
    pub blocks_per_module: usize,
    pub alpha: [f64; KNOBS],
    pub beta: [f64; KNOBS],
    pub block: BlockSettings,
    pub nominal_side: usize,
}

impl RealNetConfig {
    pub fn desk(channels: usize, scale: usize) -> Self {
        Self {
            channels,
            scale,
            modules: 2,
            blocks_per_module: 1,
            alpha: [1.0; KNOBS],
            beta: [1.0; KNOBS],
            block: BlockSettings::default(),
            nominal_side: 16,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(2..=4).contains(&self.scale) {
            return Err(Error::Config(format!("scale must be 2, 3 or 4, got {}", self.scale)));
        }
        if !(1..=KNOBS).contains(&self.modules) {
            return Err(Error::Config(format!("modules per branch must be 1 to {KNOBS}, got {}", self.modules)));
        }
        if self.channels == 0 {
            return Err(Error::Config("channels must be positive".into()));
        }
        Ok(())
    }
}

/// One side of an adapter: a 3×3 conv on the foreign branch, a `C×2C` mix,
/// and channel attention.
#[derive(Clone, Copy, Debug)]
pub struct AdapterSide {
    pub cross: ParamId,
    pub mix: PointwiseKernel,
    pub ca: ChannelAttentionWeights,
}

impl AdapterSide {
    fn new(b: &mut Builder, c: usize) -> Self {
        Self {
            cross: b.conv("cross", c, c, 3),
            mix: b.pointwise("mix", c, 2 * c),
            ca: ChannelAttentionWeights::new(&mut b.scope("ca"), c),
        }
    }

    /// `CA(1×1[own_w·own, cross_w·conv(foreign)])`
    fn forward(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        own: Var,
        foreign: Var,
        own_w: f64,
        cross_w: f64,
    ) -> Result<Var> {
        let a = g.scale(own, own_w);
        let k = g.param(store, self.cross);
        let f = g.conv(foreign, k, 1)?;
        let f = g.scale(f, cross_w);
        let cat = g.concat(&[a, f])?;
        let m = self.mix.forward(g, store, cat)?;
        self.ca.forward(g, store, m)
    }
}

impl WeightSet for AdapterSide {
    fn visit(&self, f: &mut dyn FnMut(ParamId)) {
        f(self.cross);
        self.mix.visit(f);
        self.ca.visit(f);
    }
}

#[derive(Clone, Copy, Debug)]
pub struct AdapterWeights {
    pub den: AdapterSide,
    pub deb: AdapterSide,
}

impl AdapterWeights {
    pub fn new(b: &mut Builder, c: usize) -> Self {
        Self {
            den: AdapterSide::new(&mut b.scope("den"), c),
            deb: AdapterSide::new(&mut b.scope("deb"), c),
        }
    }
}

impl WeightSet for AdapterWeights {
    fn visit(&self, f: &mut dyn FnMut(ParamId)) {
        self.den.visit(f);
        self.deb.visit(f);
    }
}

/// Cross-mixes the two branches. The scalings are applied before any weight
/// sees the other branch, so `β = 0` cuts the deblur features out of the
/// denoise side exactly.
pub fn adapter_forward(
    g: &mut Graph,
    store: &ParamStore,
    f_den: Var,
    f_deb: Var,
    alpha: f64,
    beta: f64,
    w: &AdapterWeights,
) -> Result<(Var, Var)> {
    if g.shape(f_den) != g.shape(f_deb) {
        return Err(Error::shape("adapter", g.shape(f_den), g.shape(f_deb)));
    }
    let den = w.den.forward(g, store, f_den, f_deb, alpha, beta)?;
    let deb = w.deb.forward(g, store, f_deb, f_den, beta, alpha)?;
    Ok((den, deb))
}

#[derive(Clone, Copy, Debug)]
pub struct FusionWeights {
    /// `3s²×2C`
    pub mix: PointwiseKernel,
    pub refine: ParamId,
    pub scale: usize,
}

impl FusionWeights {
    pub fn new(b: &mut Builder, c: usize, scale: usize) -> Self {
        Self {
            mix: b.pointwise("mix", 3 * scale * scale, 2 * c),
            refine: b.conv("refine", 3, 3, 3),
            scale,
        }
    }
}

impl WeightSet for FusionWeights {
    fn visit(&self, f: &mut dyn FnMut(ParamId)) {
        self.mix.visit(f);
        f(self.refine);
    }
}

/// `1×1[α·f_den, β·f_deb]`, the `3s²`-channel features before upsampling.
pub fn fusion_features(
    g: &mut Graph,
    store: &ParamStore,
    f_den: Var,
    f_deb: Var,
    alpha: f64,
    beta: f64,
    w: &FusionWeights,
) -> Result<Var> {
    if g.shape(f_den) != g.shape(f_deb) {
        return Err(Error::shape("fusion", g.shape(f_den), g.shape(f_deb)));
    }
    let a = g.scale(f_den, alpha);
    let b = g.scale(f_deb, beta);
    let cat = g.concat(&[a, b])?;
    w.mix.forward(g, store, cat)
}

/// Fusion features → pixel shuffle ×s → 3×3 refinement.
pub fn fusion_forward(
    g: &mut Graph,
    store: &ParamStore,
    f_den: Var,
    f_deb: Var,
    alpha: f64,
    beta: f64,
    w: &FusionWeights,
) -> Result<Var> {
    let feat = fusion_features(g, store, f_den, f_deb, alpha, beta, w)?;
    let up = g.pixel_shuffle(feat, w.scale)?;
    let k = g.param(store, w.refine);
    g.conv(up, k, 1)
}

#[derive(Clone, Debug)]
pub struct RealNet {
    pub config: RealNetConfig,
    pub shallow_den: ParamId,
    pub shallow_deb: ParamId,
    pub den: Vec<Vec<LsteaBlockWeights>>,
    pub deb: Vec<Vec<LsteaBlockWeights>>,
    pub adapters: Vec<AdapterWeights>,
    pub fusion: FusionWeights,
}

impl RealNet {
    pub fn new(store: &mut ParamStore, rng: &mut SeededRng, config: RealNetConfig) -> Result<Self> {
        config.validate()?;
        let c = config.channels;
        let n = config.nominal_side * config.nominal_side;
        let mut b = Builder::new(store, rng);
        let shallow_den = b.conv("den.shallow", c, 3, 3);
        let shallow_deb = b.conv("deb.shallow", c, 3, 3);
        let branch = |b: &mut Builder, name: &str| -> Vec<Vec<LsteaBlockWeights>> {
            (0..config.modules)
                .map(|m| {
                    (0..config.blocks_per_module)
                        .map(|i| LsteaBlockWeights::new(&mut b.scope(&format!("{name}.m{m}.b{i}")), c, config.block, n))
                        .collect()
                })
                .collect()
        };
        let den = branch(&mut b, "den");
        let deb = branch(&mut b, "deb");
        let adapters = (0..config.modules - 1)
            .map(|i| AdapterWeights::new(&mut b.scope(&format!("adapter{i}")), c))
            .collect();
        let fusion = FusionWeights::new(&mut b.scope("fusion"), c, config.scale);
        Ok(Self {
            config,
            shallow_den,
            shallow_deb,
            den,
            deb,
            adapters,
            fusion,
        })
    }
}

impl WeightSet for RealNet {
    fn visit(&self, f: &mut dyn FnMut(ParamId)) {
        f(self.shallow_den);
        f(self.shallow_deb);
        self.den.visit(f);
        self.deb.visit(f);
        self.adapters.visit(f);
        self.fusion.visit(f);
    }
}

/// `(3,H,W) → (3,sH,sW)` with the knobs in `net.config`.
pub fn realnet_forward(g: &mut Graph, store: &ParamStore, net: &RealNet, lr: &Tensor) -> Result<Var> {
    let cfg = &net.config;
    let (x, base, out) = prepare_input(g, lr, cfg.scale)?;
    let k = g.param(store, net.shallow_den);
    let mut den = g.conv(x, k, 1)?;
    let k = g.param(store, net.shallow_deb);
    let mut deb = g.conv(x, k, 1)?;
    for m in 0..cfg.modules {
        den = lstea_module_forward(g, store, den, &net.den[m])?;
        deb = lstea_module_forward(g, store, deb, &net.deb[m])?;
        if let Some(a) = net.adapters.get(m) {
            (den, deb) = adapter_forward(g, store, den, deb, cfg.alpha[m], cfg.beta[m], a)?;
        }
    }
    let y = fusion_forward(
        g,
        store,
        den,
        deb,
        cfg.alpha[KNOBS - 1],
        cfg.beta[KNOBS - 1],
        &net.fusion,
    )?;
    finish_output(g, y, base, out)
}
