use crate::attention::{stea_forward, SteaConfig, SteaWeights, TaylorOrder};
use crate::conv::{Builder, ChannelAttentionWeights, DepthwiseKernel, GdfnWeights, LayerNormParams, PointwiseKernel};
use crate::error::Result;
use crate::graph::{Graph, Var};
use crate::mlfr::{mlfr_forward, MlfrVariant, MlfrWeights};
use crate::param::{ParamId, ParamStore, WeightSet};

/// Per-block choices shared by every block of a model.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BlockSettings {
    pub order: TaylorOrder,
    pub dwc: bool,
    pub mlfr: MlfrVariant,
}

impl Default for BlockSettings {
    fn default() -> Self {
        Self {
            order: TaylorOrder::Second,
            dwc: true,
            mlfr: MlfrVariant::V3,
        }
    }
}

#[derive(Clone, Debug)]
pub struct LsteaBlockWeights {
    pub channels: usize,
    pub norm: LayerNormParams,
    /// 3×3 then 5×5.
    pub local: [DepthwiseKernel; 2],
    pub stea: SteaWeights,
    pub mlfr: MlfrWeights,
    /// `C×2C`
    pub merge: PointwiseKernel,
    pub ca: ChannelAttentionWeights,
    pub gdfn: GdfnWeights,
    pub second_norm: LayerNormParams,
}

impl LsteaBlockWeights {
    /// `nominal_n` is the expected number of positions at this block's
    /// resolution; it sets the initial attention normaliser.
    pub fn new(b: &mut Builder, channels: usize, settings: BlockSettings, nominal_n: usize) -> Self {
        let norm = b.layer_norm("norm", channels);
        let local = [
            b.depthwise("local3", channels, 3, 1),
            b.depthwise("local5", channels, 5, 1),
        ];
        let stea = SteaWeights::new(
            &mut b.scope("stea"),
            SteaConfig {
                channels,
                order: settings.order,
                dwc: settings.dwc,
                nominal_n,
            },
        );
        let mlfr = MlfrWeights::new(&mut b.scope("mlfr"), channels, settings.mlfr);
        let merge = b.pointwise("merge", channels, 2 * channels);
        let ca = ChannelAttentionWeights::new(&mut b.scope("ca"), channels);
        let gdfn = GdfnWeights::new(&mut b.scope("gdfn"), channels);
        let second_norm = b.layer_norm("norm2", channels);
        Self {
            channels,
            norm,
            local,
            stea,
            mlfr,
            merge,
            ca,
            gdfn,
            second_norm,
        }
    }
}

impl WeightSet for LsteaBlockWeights {
    fn visit(&self, f: &mut dyn FnMut(ParamId)) {
        self.norm.visit(f);
        self.local.visit(f);
        self.stea.visit(f);
        self.mlfr.visit(f);
        self.merge.visit(f);
        self.ca.visit(f);
        self.gdfn.visit(f);
        self.second_norm.visit(f);
    }
}

/// `y = x + CA(1×1[Local(LN x), MLFR(STEA(LN x))])`, then
/// `y + GDFN(LN₂ y)`.
pub fn lstea_block_forward(g: &mut Graph, store: &ParamStore, x: Var, w: &LsteaBlockWeights) -> Result<Var> {
    let n = w.norm.forward(g, store, x)?;
    let l = w.local[0].forward(g, store, n)?;
    let l = w.local[1].forward(g, store, l)?;
    let s = stea_forward(g, store, n, &w.stea)?;
    let m = mlfr_forward(g, store, s, &w.mlfr)?;
    let cat = g.concat(&[l, m])?;
    let merged = w.merge.forward(g, store, cat)?;
    let gated = w.ca.forward(g, store, merged)?;
    let y = g.add(x, gated)?;
    let n2 = w.second_norm.forward(g, store, y)?;
    let ff = w.gdfn.forward(g, store, n2)?;
    g.add(y, ff)
}

/// A chain of blocks.
pub fn lstea_module_forward(g: &mut Graph, store: &ParamStore, x: Var, blocks: &[LsteaBlockWeights]) -> Result<Var> {
    blocks.iter().try_fold(x, |h, b| lstea_block_forward(g, store, h, b))
}
