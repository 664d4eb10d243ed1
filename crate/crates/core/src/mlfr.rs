//! Multi-scale large-field block: paired dilated and plain depthwise
//! branches, per-branch 1×1 fusion, a 1×1 bypass, and a final 1×1 fusion.

use std::fmt;
use std::str::FromStr;

use crate::conv::{Builder, DepthwiseKernel, PointwiseKernel};
use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::param::{ParamId, ParamStore, WeightSet};

/// Kernel size of every dilated branch.
pub const DILATED_KERNEL: usize = 9;

/// `(dilation, plain kernel size)` per branch, in concatenation order.
pub const BRANCHES: [(usize, usize); 3] = [(6, 7), (4, 5), (2, 3)];

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum MlfrVariant {
    V1,
    V2,
    V3,
}

impl MlfrVariant {
    pub const ALL: [MlfrVariant; 3] = [MlfrVariant::V1, MlfrVariant::V2, MlfrVariant::V3];

    pub fn branches(self) -> &'static [(usize, usize)] {
        match self {
            MlfrVariant::V1 => &BRANCHES[..1],
            MlfrVariant::V2 => &BRANCHES[..2],
            MlfrVariant::V3 => &BRANCHES[..],
        }
    }
}

impl FromStr for MlfrVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "v1" => Ok(MlfrVariant::V1),
            "v2" => Ok(MlfrVariant::V2),
            "v3" => Ok(MlfrVariant::V3),
            _ => Err(Error::Config(format!("unknown mlfr variant `{s}` (expected v1, v2 or v3)"))),
        }
    }
}

impl fmt::Display for MlfrVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            MlfrVariant::V1 => "v1",
            MlfrVariant::V2 => "v2",
            MlfrVariant::V3 => "v3",
        };
        f.write_str(s)
    }
}

#[derive(Clone, Copy, Debug)]
pub struct BranchPair {
    pub ddwc: DepthwiseKernel,
    pub dwc: DepthwiseKernel,
    /// `C×2C`
    pub fuse: PointwiseKernel,
}

impl WeightSet for BranchPair {
    fn visit(&self, f: &mut dyn FnMut(ParamId)) {
        self.ddwc.visit(f);
        self.dwc.visit(f);
        self.fuse.visit(f);
    }
}

#[derive(Clone, Debug)]
pub struct MlfrWeights {
    pub channels: usize,
    pub branches: Vec<BranchPair>,
    pub bypass: PointwiseKernel,
    pub final_fuse: PointwiseKernel,
}

impl MlfrWeights {
    pub fn new(b: &mut Builder, channels: usize, variant: MlfrVariant) -> Self {
        let branches = variant
            .branches()
            .iter()
            .map(|&(dr, ks)| {
                let mut s = b.scope(&format!("dr{dr}"));
                BranchPair {
                    ddwc: s.depthwise("ddwc", channels, DILATED_KERNEL, dr),
                    dwc: s.depthwise("dwc", channels, ks, 1),
                    fuse: s.pointwise("fuse", channels, 2 * channels),
                }
            })
            .collect::<Vec<_>>();
        let n = branches.len();
        Self {
            channels,
            branches,
            bypass: b.pointwise("bypass", channels, channels),
            final_fuse: b.pointwise("final_fuse", channels, (n + 1) * channels),
        }
    }
}

impl WeightSet for MlfrWeights {
    fn visit(&self, f: &mut dyn FnMut(ParamId)) {
        self.branches.visit(f);
        self.bypass.visit(f);
        self.final_fuse.visit(f);
    }
}

pub fn mlfr_forward(g: &mut Graph, store: &ParamStore, x: Var, w: &MlfrWeights) -> Result<Var> {
    let c = g.value(x).dims3()?.0;
    if c != w.channels {
        return Err(Error::shape("mlfr_forward", g.shape(x), &[w.channels]));
    }
    let mut parts = Vec::with_capacity(w.branches.len() + 1);
    for br in &w.branches {
        let dil = br.ddwc.forward(g, store, x)?;
        let plain = br.dwc.forward(g, store, x)?;
        let cat = g.concat(&[dil, plain])?;
        parts.push(br.fuse.forward(g, store, cat)?);
    }
    parts.push(w.bypass.forward(g, store, x)?);
    let cat = g.concat(&parts)?;
    w.final_fuse.forward(g, store, cat)
}

/// Span in pixels of the largest branch footprint.
pub fn mlfr_receptive_field(variant: MlfrVariant) -> usize {
    variant
        .branches()
        .iter()
        .map(|&(dr, ks)| ((DILATED_KERNEL - 1) * dr + 1).max(ks))
        .max()
        .unwrap_or(1)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn receptive_fields() {
        for v in MlfrVariant::ALL {
            assert_eq!(mlfr_receptive_field(v), 49);
        }
    }

    #[test]
    fn variant_round_trip() {
        for v in MlfrVariant::ALL {
            assert_eq!(v.to_string().parse::<MlfrVariant>().unwrap(), v);
        }
        assert!("v4".parse::<MlfrVariant>().is_err());
    }
}
