//! Spatial building blocks: weight containers plus their forward passes on a
//! [`Graph`]. Tensor-level kernels live in [`kernels`].

pub mod kernels;

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::param::{ParamId, ParamStore, WeightSet};
use crate::rng::SeededRng;
use crate::tensor::Tensor;

/// Registers named, Glorot-initialised parameters under a dotted prefix.
pub struct Builder<'a> {
    pub store: &'a mut ParamStore,
    pub rng: &'a mut SeededRng,
    prefix: String,
}

impl<'a> Builder<'a> {
    pub fn new(store: &'a mut ParamStore, rng: &'a mut SeededRng) -> Self {
        Self {
            store,
            rng,
            prefix: String::new(),
        }
    }

    /// A builder whose names are prefixed with `name.`.
    pub fn scope(&mut self, name: &str) -> Builder<'_> {
        Builder {
            store: self.store,
            rng: self.rng,
            prefix: format!("{}{}.", self.prefix, name),
        }
    }

    fn name(&self, n: &str) -> String {
        format!("{}{}", self.prefix, n)
    }

    pub fn glorot(&mut self, name: &str, shape: &[usize], fan_in: usize, fan_out: usize) -> ParamId {
        let n = self.name(name);
        self.store.glorot(self.rng, n, shape, fan_in, fan_out)
    }

    pub fn constant(&mut self, name: &str, value: Tensor) -> ParamId {
        let n = self.name(name);
        self.store.add(n, value)
    }

    /// `rows×cols` matrix used as a right factor `X·M`.
    pub fn matrix(&mut self, name: &str, rows: usize, cols: usize) -> ParamId {
        self.glorot(name, &[rows, cols], rows, cols)
    }

    pub fn depthwise(&mut self, name: &str, channels: usize, size: usize, dilation: usize) -> DepthwiseKernel {
        let weights = self.glorot(name, &[channels, size, size], size * size, size * size);
        DepthwiseKernel {
            weights,
            size,
            dilation,
        }
    }

    pub fn pointwise(&mut self, name: &str, c_out: usize, c_in: usize) -> PointwiseKernel {
        PointwiseKernel {
            weights: self.glorot(name, &[c_out, c_in], c_in, c_out),
        }
    }

    pub fn conv(&mut self, name: &str, c_out: usize, c_in: usize, size: usize) -> ParamId {
        let a = size * size;
        self.glorot(name, &[c_out, c_in, size, size], c_in * a, c_out * a)
    }

    pub fn layer_norm(&mut self, name: &str, channels: usize) -> LayerNormParams {
        LayerNormParams {
            gain: self.constant(&format!("{name}.gain"), Tensor::full(&[channels], 1.0)),
            bias: self.constant(&format!("{name}.bias"), Tensor::zeros(&[channels])),
        }
    }
}

/// `⌈c/4⌉`, the bottleneck width used throughout.
pub fn quarter(c: usize) -> usize {
    c.div_ceil(4)
}

#[derive(Clone, Copy, Debug)]
pub struct DepthwiseKernel {
    /// `C×k×k`.
    pub weights: ParamId,
    pub size: usize,
    pub dilation: usize,
}

impl DepthwiseKernel {
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let w = g.param(store, self.weights);
        g.depthwise(x, w, self.dilation)
    }
}

impl WeightSet for DepthwiseKernel {
    fn visit(&self, f: &mut dyn FnMut(ParamId)) {
        f(self.weights)
    }
}

/// Bias-free 1×1 convolution, `C_out×C_in`.
#[derive(Clone, Copy, Debug)]
pub struct PointwiseKernel {
    pub weights: ParamId,
}

impl PointwiseKernel {
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let w = g.param(store, self.weights);
        g.pointwise(x, w)
    }
}

impl WeightSet for PointwiseKernel {
    fn visit(&self, f: &mut dyn FnMut(ParamId)) {
        f(self.weights)
    }
}

#[derive(Clone, Copy, Debug)]
pub struct LayerNormParams {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl LayerNormParams {
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let gain = g.param(store, self.gain);
        let bias = g.param(store, self.bias);
        g.layer_norm(x, gain, bias)
    }
}

impl WeightSet for LayerNormParams {
    fn visit(&self, f: &mut dyn FnMut(ParamId)) {
        f(self.gain);
        f(self.bias);
    }
}

/// Squeeze-and-excitation gate: pool → reduce → ReLU → expand → sigmoid.
#[derive(Clone, Copy, Debug)]
pub struct ChannelAttentionWeights {
    /// `C×⌈C/4⌉`
    pub reduce: ParamId,
    /// `⌈C/4⌉×C`
    pub expand: ParamId,
}

impl ChannelAttentionWeights {
    pub fn new(b: &mut Builder, channels: usize) -> Self {
        let r = quarter(channels);
        Self {
            reduce: b.matrix("reduce", channels, r),
            expand: b.matrix("expand", r, channels),
        }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let (c, h, w) = g.value(x).dims3()?;
        // (C, HW) -> per-channel mean as a 1×C row
        let flat = g.reshape(x, &[c, h * w])?;
        let rows = g.transpose(flat)?;
        let pooled = g.mean_rows(rows)?;
        let reduce = g.param(store, self.reduce);
        let expand = g.param(store, self.expand);
        let z = g.matmul(pooled, reduce)?;
        let z = g.relu(z);
        let z = g.matmul(z, expand)?;
        let gate = g.sigmoid(z);
        g.scale_channels(x, gate)
    }
}

impl WeightSet for ChannelAttentionWeights {
    fn visit(&self, f: &mut dyn FnMut(ParamId)) {
        f(self.reduce);
        f(self.expand);
    }
}

pub const GDFN_EXPANSION: usize = 2;

/// Gated depthwise feed-forward network.
#[derive(Clone, Copy, Debug)]
pub struct GdfnWeights {
    pub expand: PointwiseKernel,
    pub dwc_a: DepthwiseKernel,
    pub dwc_b: DepthwiseKernel,
    pub project: PointwiseKernel,
}

impl GdfnWeights {
    pub fn new(b: &mut Builder, channels: usize) -> Self {
        let hidden = GDFN_EXPANSION * channels;
        Self {
            expand: b.pointwise("expand", 2 * hidden, channels),
            dwc_a: b.depthwise("dwc_a", hidden, 3, 1),
            dwc_b: b.depthwise("dwc_b", hidden, 3, 1),
            project: b.pointwise("project", channels, hidden),
        }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let e = self.expand.forward(g, store, x)?;
        let width = g.shape(e)[0];
        if width % 2 != 0 {
            return Err(Error::Config(format!("gdfn expanded width {width} is odd")));
        }
        let half = width / 2;
        let a = g.slice(e, 0, half)?;
        let b = g.slice(e, half, half)?;
        let a = self.dwc_a.forward(g, store, a)?;
        let a = g.gelu(a);
        let b = self.dwc_b.forward(g, store, b)?;
        let gated = g.mul(a, b)?;
        self.project.forward(g, store, gated)
    }
}

impl WeightSet for GdfnWeights {
    fn visit(&self, f: &mut dyn FnMut(ParamId)) {
        self.expand.visit(f);
        self.dwc_a.visit(f);
        self.dwc_b.visit(f);
        self.project.visit(f);
    }
}
