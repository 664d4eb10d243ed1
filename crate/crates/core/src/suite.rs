//! The finite-difference gradient suite run by `stea gradcheck`.
//!
//! Each case builds a small parameter store (inputs included as parameters
//! so their gradients are checked too), reduces the op output to a scalar
//! with a fixed weighted sum, and compares the tape against central
//! differences.

use crate::attention::{flatten_positions, stea_forward, EigenExtractor, SteaConfig, SteaWeights};
use crate::conv::{Builder, ChannelAttentionWeights, GdfnWeights};
use crate::error::Result;
use crate::gradcheck::{grad_check_with, GradCheckOptions, GradCheckReport};
use crate::graph::{Graph, Var};
use crate::mlfr::{mlfr_forward, MlfrVariant, MlfrWeights};
use crate::networks::{
    adapter_forward, fusion_forward, labnet_forward, lstea_block_forward, AdapterWeights, BlockSettings,
    FusionWeights, LabNet, LabNetConfig, LsteaBlockWeights,
};
use crate::param::{ParamId, ParamStore};
use crate::rng::{seeded, uniform_tensor, SeededRng};
use crate::tensor::Tensor;

/// Pass threshold on the maximum relative error.
pub const TOLERANCE: f64 = 1e-4;

/// Coordinate budget for the cases built from whole networks.
const NETWORK_COORDS: usize = 2000;

#[derive(Clone, Debug)]
pub struct CaseResult {
    pub name: &'static str,
    pub report: GradCheckReport,
}

impl CaseResult {
    pub fn passed(&self) -> bool {
        self.report.max_rel_err <= TOLERANCE
    }
}

type Body = fn(&mut Graph, &ParamStore, &Fixture) -> Result<Var>;
type Setup = fn(&mut ParamStore, &mut SeededRng) -> Fixture;

/// Weights and handles a case body needs beyond the store.
#[derive(Clone, Debug, Default)]
pub struct Fixture {
    ids: Vec<ParamId>,
    target: Option<Tensor>,
    stea: Option<SteaWeights>,
    mlfr: Option<MlfrWeights>,
    block: Option<Box<LsteaBlockWeights>>,
    labnet: Option<Box<LabNet>>,
    lr: Option<Tensor>,
    ca: Option<ChannelAttentionWeights>,
    gdfn: Option<GdfnWeights>,
    eig: Option<EigenExtractor>,
    adapter: Option<AdapterWeights>,
    fusion: Option<FusionWeights>,
    max_coords: Option<usize>,
}

struct Case {
    name: &'static str,
    setup: Setup,
    body: Body,
}

fn x(store: &mut ParamStore, rng: &mut SeededRng, name: &str, shape: &[usize]) -> ParamId {
    store.add(name, uniform_tensor(rng, shape, 1.0))
}

/// Deterministic weighted sum so every output coordinate matters.
fn readout(g: &mut Graph, v: Var) -> Result<Var> {
    let shape = g.shape(v).to_vec();
    let w = Tensor::from_fn(&shape, |i| (1.3 * i as f64 + 0.7).sin());
    g.dot_const(v, &w)
}

fn p(g: &mut Graph, store: &ParamStore, f: &Fixture, i: usize) -> Var {
    g.param(store, f.ids[i])
}

fn ids(store: &mut ParamStore, rng: &mut SeededRng, shapes: &[&[usize]]) -> Fixture {
    Fixture {
        ids: shapes
            .iter()
            .enumerate()
            .map(|(i, s)| x(store, rng, &format!("x{i}"), s))
            .collect(),
        ..Default::default()
    }
}

fn cases() -> Vec<Case> {
    vec![
        Case {
            name: "matmul",
            setup: |s, r| ids(s, r, &[&[3, 4], &[4, 2]]),
            body: |g, s, f| {
                let (a, b) = (p(g, s, f, 0), p(g, s, f, 1));
                let m = g.matmul(a, b)?;
                readout(g, m)
            },
        },
        Case {
            name: "transpose+add",
            setup: |s, r| ids(s, r, &[&[3, 4], &[4, 3]]),
            body: |g, s, f| {
                let (a, b) = (p(g, s, f, 0), p(g, s, f, 1));
                let t = g.transpose(a)?;
                let m = g.add(t, b)?;
                readout(g, m)
            },
        },
        Case {
            name: "mul",
            setup: |s, r| ids(s, r, &[&[2, 5], &[2, 5]]),
            body: |g, s, f| {
                let (a, b) = (p(g, s, f, 0), p(g, s, f, 1));
                let m = g.mul(a, b)?;
                readout(g, m)
            },
        },
        Case {
            name: "scale_by",
            setup: |s, r| ids(s, r, &[&[3, 3], &[1]]),
            body: |g, s, f| {
                let (a, k) = (p(g, s, f, 0), p(g, s, f, 1));
                let m = g.scale_by(a, k)?;
                readout(g, m)
            },
        },
        Case {
            name: "exp",
            setup: |s, r| ids(s, r, &[&[3, 4]]),
            body: |g, s, f| {
                let a = p(g, s, f, 0);
                let e = g.exp(a);
                readout(g, e)
            },
        },
        Case {
            name: "gelu",
            setup: |s, r| ids(s, r, &[&[3, 4]]),
            body: |g, s, f| {
                let a = p(g, s, f, 0);
                let e = g.gelu(a);
                readout(g, e)
            },
        },
        Case {
            name: "sigmoid",
            setup: |s, r| ids(s, r, &[&[3, 4]]),
            body: |g, s, f| {
                let a = p(g, s, f, 0);
                let e = g.sigmoid(a);
                readout(g, e)
            },
        },
        Case {
            name: "row_softmax",
            setup: |s, r| ids(s, r, &[&[4, 5]]),
            body: |g, s, f| {
                let a = p(g, s, f, 0);
                let e = g.row_softmax(a)?;
                readout(g, e)
            },
        },
        Case {
            name: "nla",
            setup: |s, r| ids(s, r, &[&[6, 3], &[3, 3], &[3, 3], &[3, 3]]),
            body: |g, s, f| {
                let (xv, wq, wk, wv) = (p(g, s, f, 0), p(g, s, f, 1), p(g, s, f, 2), p(g, s, f, 3));
                let q = g.matmul(xv, wq)?;
                let k = g.matmul(xv, wk)?;
                let v = g.matmul(xv, wv)?;
                let kt = g.transpose(k)?;
                let a = g.matmul(q, kt)?;
                let a = g.row_softmax(a)?;
                let o = g.matmul(a, v)?;
                readout(g, o)
            },
        },
        Case {
            name: "mean_rows+scale_columns",
            setup: |s, r| ids(s, r, &[&[5, 3], &[1, 3]]),
            body: |g, s, f| {
                let (a, v) = (p(g, s, f, 0), p(g, s, f, 1));
                let m = g.mean_rows(a)?;
                let m = g.mul(m, v)?;
                let o = g.scale_columns(a, m)?;
                readout(g, o)
            },
        },
        Case {
            name: "scale_channels",
            setup: |s, r| ids(s, r, &[&[3, 4, 4], &[3]]),
            body: |g, s, f| {
                let (a, c) = (p(g, s, f, 0), p(g, s, f, 1));
                let o = g.scale_channels(a, c)?;
                readout(g, o)
            },
        },
        Case {
            name: "layer_norm",
            setup: |s, r| ids(s, r, &[&[4, 3, 3], &[4], &[4]]),
            body: |g, s, f| {
                let (a, gain, bias) = (p(g, s, f, 0), p(g, s, f, 1), p(g, s, f, 2));
                let o = g.layer_norm(a, gain, bias)?;
                readout(g, o)
            },
        },
        Case {
            name: "depthwise_dilated",
            setup: |s, r| ids(s, r, &[&[2, 7, 7], &[2, 3, 3]]),
            body: |g, s, f| {
                let (a, w) = (p(g, s, f, 0), p(g, s, f, 1));
                let o = g.depthwise(a, w, 2)?;
                readout(g, o)
            },
        },
        Case {
            name: "conv_stride1",
            setup: |s, r| ids(s, r, &[&[2, 5, 5], &[3, 2, 3, 3]]),
            body: |g, s, f| {
                let (a, w) = (p(g, s, f, 0), p(g, s, f, 1));
                let o = g.conv(a, w, 1)?;
                readout(g, o)
            },
        },
        Case {
            name: "conv_stride2",
            setup: |s, r| ids(s, r, &[&[2, 6, 5], &[3, 2, 3, 3]]),
            body: |g, s, f| {
                let (a, w) = (p(g, s, f, 0), p(g, s, f, 1));
                let o = g.conv(a, w, 2)?;
                readout(g, o)
            },
        },
        Case {
            name: "pointwise",
            setup: |s, r| ids(s, r, &[&[3, 4, 4], &[2, 3]]),
            body: |g, s, f| {
                let (a, w) = (p(g, s, f, 0), p(g, s, f, 1));
                let o = g.pointwise(a, w)?;
                readout(g, o)
            },
        },
        Case {
            name: "pixel_shuffle",
            setup: |s, r| ids(s, r, &[&[8, 2, 3]]),
            body: |g, s, f| {
                let a = p(g, s, f, 0);
                let o = g.pixel_shuffle(a, 2)?;
                readout(g, o)
            },
        },
        Case {
            name: "concat+slice",
            setup: |s, r| ids(s, r, &[&[2, 3, 3], &[1, 3, 3]]),
            body: |g, s, f| {
                let (a, b) = (p(g, s, f, 0), p(g, s, f, 1));
                let c = g.concat(&[a, b])?;
                let o = g.slice(c, 1, 2)?;
                let e = g.exp(o);
                readout(g, e)
            },
        },
        Case {
            name: "reflect_pad+crop",
            setup: |s, r| ids(s, r, &[&[2, 5, 6]]),
            body: |g, s, f| {
                let a = p(g, s, f, 0);
                let o = g.reflect_pad(a, 3, 2)?;
                let o = g.gelu(o);
                let o = g.crop(o, 6, 7)?;
                readout(g, o)
            },
        },
        Case {
            name: "l1_loss",
            setup: |s, r| {
                let mut f = ids(s, r, &[&[3, 4, 4]]);
                // offsets keep every residual well away from a tie
                let v = s.value(f.ids[0]).clone();
                f.target = Some(v.map(|t| t + if t > 0.0 { -0.3 } else { 0.3 } - 0.05));
                f
            },
            body: |g, s, f| {
                let a = p(g, s, f, 0);
                g.l1_loss(a, f.target.as_ref().expect("target"))
            },
        },
        Case {
            name: "channel_attention",
            setup: |s, r| {
                let mut f = ids(s, r, &[&[4, 3, 3]]);
                f.ca = Some(ChannelAttentionWeights::new(&mut Builder::new(s, r), 4));
                f
            },
            body: |g, s, f| {
                let a = p(g, s, f, 0);
                let o = f.ca.as_ref().expect("ca").forward(g, s, a)?;
                readout(g, o)
            },
        },
        Case {
            name: "gdfn",
            setup: |s, r| {
                let mut f = ids(s, r, &[&[3, 4, 4]]);
                f.gdfn = Some(GdfnWeights::new(&mut Builder::new(s, r), 3));
                f
            },
            body: |g, s, f| {
                let a = p(g, s, f, 0);
                let o = f.gdfn.as_ref().expect("gdfn").forward(g, s, a)?;
                readout(g, o)
            },
        },
        Case {
            name: "extract_eigens",
            setup: |s, r| {
                let mut f = ids(s, r, &[&[6, 8]]);
                f.eig = Some(EigenExtractor::new(&mut Builder::new(s, r), "eig", 8));
                f
            },
            body: |g, s, f| {
                let a = p(g, s, f, 0);
                let o = f.eig.as_ref().expect("eig").forward(g, s, a)?;
                readout(g, o)
            },
        },
        Case {
            name: "stea",
            setup: |s, r| {
                let mut f = ids(s, r, &[&[4, 4, 4]]);
                f.stea = Some(SteaWeights::new(&mut Builder::new(s, r), SteaConfig::new(4, 16)));
                f
            },
            body: |g, s, f| {
                let a = p(g, s, f, 0);
                let o = stea_forward(g, s, a, f.stea.as_ref().expect("stea"))?;
                readout(g, o)
            },
        },
        Case {
            name: "mlfr",
            setup: |s, r| {
                let mut f = ids(s, r, &[&[2, 8, 8]]);
                f.mlfr = Some(MlfrWeights::new(&mut Builder::new(s, r), 2, MlfrVariant::V3));
                f
            },
            body: |g, s, f| {
                let a = p(g, s, f, 0);
                let o = mlfr_forward(g, s, a, f.mlfr.as_ref().expect("mlfr"))?;
                readout(g, o)
            },
        },
        Case {
            name: "lstea_block",
            setup: |s, r| {
                let mut f = ids(s, r, &[&[8, 6, 6]]);
                let w = LsteaBlockWeights::new(&mut Builder::new(s, r), 8, BlockSettings::default(), 36);
                f.block = Some(Box::new(w));
                f.max_coords = Some(NETWORK_COORDS);
                f
            },
            body: |g, s, f| {
                let a = p(g, s, f, 0);
                let o = lstea_block_forward(g, s, a, f.block.as_deref().expect("block"))?;
                readout(g, o)
            },
        },
        Case {
            name: "labnet_1block",
            setup: |s, r| {
                let mut cfg = LabNetConfig::desk(4, 2);
                cfg.nominal_side = 4;
                let net = LabNet::new(s, r, cfg).expect("valid desk config");
                Fixture {
                    lr: Some(uniform_tensor(r, &[3, 4, 4], 0.5).map(|v| v + 0.5)),
                    labnet: Some(Box::new(net)),
                    max_coords: Some(NETWORK_COORDS),
                    ..Default::default()
                }
            },
            body: |g, s, f| {
                let o = labnet_forward(g, s, f.labnet.as_deref().expect("net"), f.lr.as_ref().expect("lr"))?;
                readout(g, o)
            },
        },
        Case {
            name: "adapter",
            setup: |s, r| {
                let mut f = ids(s, r, &[&[3, 4, 4], &[3, 4, 4]]);
                f.adapter = Some(AdapterWeights::new(&mut Builder::new(s, r), 3));
                f
            },
            body: |g, s, f| {
                let (a, b) = (p(g, s, f, 0), p(g, s, f, 1));
                let (den, deb) = adapter_forward(g, s, a, b, 0.7, 1.3, f.adapter.as_ref().expect("adapter"))?;
                let c = g.concat(&[den, deb])?;
                readout(g, c)
            },
        },
        Case {
            name: "fusion",
            setup: |s, r| {
                let mut f = ids(s, r, &[&[3, 3, 3], &[3, 3, 3]]);
                f.fusion = Some(FusionWeights::new(&mut Builder::new(s, r), 3, 2));
                f
            },
            body: |g, s, f| {
                let (a, b) = (p(g, s, f, 0), p(g, s, f, 1));
                let o = fusion_forward(g, s, a, b, 0.8, 1.1, f.fusion.as_ref().expect("fusion"))?;
                readout(g, o)
            },
        },
        Case {
            name: "flatten_positions",
            setup: |s, r| ids(s, r, &[&[3, 2, 4], &[3, 3]]),
            body: |g, s, f| {
                let (a, w) = (p(g, s, f, 0), p(g, s, f, 1));
                let t = flatten_positions(g, a)?;
                let o = g.matmul(t, w)?;
                readout(g, o)
            },
        },
    ]
}

/// Names of every case, in run order.
pub fn case_names() -> Vec<&'static str> {
    cases().iter().map(|c| c.name).collect()
}

/// Runs every case. `opts.max_coords` is overridden for the network-sized
/// cases; `opts.corrupt` applies to all of them.
pub fn run_suite(opts: GradCheckOptions) -> Result<Vec<CaseResult>> {
    cases()
        .into_iter()
        .enumerate()
        .map(|(i, case)| {
            let mut store = ParamStore::new();
            let mut rng = seeded(0x5eed ^ i as u64);
            let fixture = (case.setup)(&mut store, &mut rng);
            let params: Vec<ParamId> = store.ids().collect();
            let opts = GradCheckOptions {
                max_coords: fixture.max_coords.or(opts.max_coords),
                ..opts
            };
            let body = case.body;
            let report = grad_check_with(&mut store, &params, |g, s| body(g, s, &fixture), opts)?;
            Ok(CaseResult { name: case.name, report })
        })
        .collect()
}
