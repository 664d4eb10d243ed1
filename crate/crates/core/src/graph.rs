//! Reverse-mode differentiation over a tape of tensor operations.
//!
//! Every operation has a forward kernel and an explicit vector-Jacobian
//! product. A [`Graph`] records one forward pass of a fixed block structure;
//! [`Graph::backward`] replays it in reverse.

use std::collections::HashMap;

use crate::conv::kernels::{self as k, LayerNormCache};
use crate::error::{Error, Result};
use crate::flops;
use crate::linalg;
use crate::param::{ParamId, ParamStore};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Operation kinds, used for reporting and fault injection.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum OpKind {
    Leaf,
    MatMul,
    Add,
    Mul,
    Scale,
    ScaleBy,
    Exp,
    Relu,
    Gelu,
    Sigmoid,
    Softmax,
    Transpose,
    Reshape,
    MeanRows,
    ScaleColumns,
    ScaleChannels,
    Depthwise,
    Conv,
    PixelShuffle,
    Concat,
    Slice,
    LayerNorm,
    ReflectPad,
    Crop,
    L1,
    Sum,
    Dot,
}

enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    ScaleBy(Var, Var),
    Exp(Var),
    Relu(Var),
    Gelu(Var),
    Sigmoid(Var),
    Softmax(Var),
    Transpose(Var),
    Reshape(Var),
    MeanRows(Var),
    ScaleColumns(Var, Var),
    ScaleChannels(Var, Var),
    Depthwise { x: Var, w: Var, dilation: usize },
    Conv { x: Var, w: Var, stride: usize },
    PixelShuffle(Var, usize),
    Concat(Vec<Var>),
    Slice { x: Var, start: usize },
    LayerNorm { x: Var, gain: Var, bias: Var, cache: LayerNormCache },
    ReflectPad(Var),
    Crop(Var),
    L1 { pred: Var, target: Tensor },
    Sum(Var),
    Dot(Var, Tensor),
}

impl Op {
    fn kind(&self) -> OpKind {
        match self {
            Op::Leaf => OpKind::Leaf,
            Op::MatMul(..) => OpKind::MatMul,
            Op::Add(..) => OpKind::Add,
            Op::Mul(..) => OpKind::Mul,
            Op::Scale(..) => OpKind::Scale,
            Op::ScaleBy(..) => OpKind::ScaleBy,
            Op::Exp(_) => OpKind::Exp,
            Op::Relu(_) => OpKind::Relu,
            Op::Gelu(_) => OpKind::Gelu,
            Op::Sigmoid(_) => OpKind::Sigmoid,
            Op::Softmax(_) => OpKind::Softmax,
            Op::Transpose(_) => OpKind::Transpose,
            Op::Reshape(_) => OpKind::Reshape,
            Op::MeanRows(_) => OpKind::MeanRows,
            Op::ScaleColumns(..) => OpKind::ScaleColumns,
            Op::ScaleChannels(..) => OpKind::ScaleChannels,
            Op::Depthwise { .. } => OpKind::Depthwise,
            Op::Conv { .. } => OpKind::Conv,
            Op::PixelShuffle(..) => OpKind::PixelShuffle,
            Op::Concat(_) => OpKind::Concat,
            Op::Slice { .. } => OpKind::Slice,
            Op::LayerNorm { .. } => OpKind::LayerNorm,
            Op::ReflectPad(_) => OpKind::ReflectPad,
            Op::Crop(_) => OpKind::Crop,
            Op::L1 { .. } => OpKind::L1,
            Op::Sum(_) => OpKind::Sum,
            Op::Dot(..) => OpKind::Dot,
        }
    }
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// A recorded forward pass.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    params: HashMap<ParamId, Var>,
    leaves: Vec<(ParamId, Var)>,
    corrupt: Option<OpKind>,
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + GELU_A * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    /// Test hook: every VJP of `kind` is scaled by 1.01, simulating a faulty
    /// backward implementation.
    pub fn with_corrupted_backward(kind: OpKind) -> Self {
        Self {
            corrupt: Some(kind),
            ..Self::default()
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// A constant input; no gradient flows into it.
    pub fn input(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// The leaf for a stored parameter, created once per graph.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let v = self.push(store.value(id).clone(), Op::Leaf, true);
        self.params.insert(id, v);
        self.leaves.push((id, v));
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = linalg::matmul(self.value(a), self.value(b))?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(out, Op::MatMul(a, b), ng))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).add(self.value(b))?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(out, Op::Add(a, b), ng))
    }

    /// Sum of several same-shaped values.
    pub fn add_all(&mut self, vars: &[Var]) -> Result<Var> {
        let (&first, rest) = vars.split_first().ok_or(Error::EmptyInput)?;
        rest.iter().try_fold(first, |acc, &v| self.add(acc, v))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).zip_map(self.value(b), |x, y| x * y)?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(out, Op::Mul(a, b), ng))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let out = self.value(a).scale(c);
        let ng = self.ng(a);
        self.push(out, Op::Scale(a, c), ng)
    }

    /// `a · s` for a one-element `s`.
    pub fn scale_by(&mut self, a: Var, s: Var) -> Result<Var> {
        if self.value(s).len() != 1 {
            return Err(Error::shape("scale_by", self.shape(a), self.shape(s)));
        }
        let c = self.value(s).data()[0];
        let out = self.value(a).map(|v| v * c);
        let ng = self.ng(a) || self.ng(s);
        Ok(self.push(out, Op::ScaleBy(a, s), ng))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::exp);
        let ng = self.ng(a);
        self.push(out, Op::Exp(a), ng)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|v| v.max(0.0));
        let ng = self.ng(a);
        self.push(out, Op::Relu(a), ng)
    }

    /// Tanh-approximated GELU.
    pub fn gelu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(gelu);
        let ng = self.ng(a);
        self.push(out, Op::Gelu(a), ng)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).map(sigmoid);
        let ng = self.ng(a);
        self.push(out, Op::Sigmoid(a), ng)
    }

    pub fn row_softmax(&mut self, a: Var) -> Result<Var> {
        let out = linalg::row_softmax(self.value(a))?;
        let ng = self.ng(a);
        Ok(self.push(out, Op::Softmax(a), ng))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).transpose()?;
        let ng = self.ng(a);
        Ok(self.push(out, Op::Transpose(a), ng))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(a).clone().reshape(shape)?;
        let ng = self.ng(a);
        Ok(self.push(out, Op::Reshape(a), ng))
    }

    /// `(m×n) -> (1×n)` column means. Records `m·n`.
    pub fn mean_rows(&mut self, a: Var) -> Result<Var> {
        let (m, n) = self.value(a).dims2()?;
        flops::record((m * n) as u64);
        let d = self.value(a).data();
        let out = Tensor::from_fn(&[1, n], |j| (0..m).map(|i| d[i * n + j]).sum::<f64>() / m as f64);
        let ng = self.ng(a);
        Ok(self.push(out, Op::MeanRows(a), ng))
    }

    /// `x (m×n) · diag(v)` for `v` with `n` elements. Records `m·n`.
    pub fn scale_columns(&mut self, x: Var, v: Var) -> Result<Var> {
        let (m, n) = self.value(x).dims2()?;
        if self.value(v).len() != n {
            return Err(Error::shape("scale_columns", self.shape(x), self.shape(v)));
        }
        flops::record((m * n) as u64);
        let vd = self.value(v).data().to_vec();
        let xd = self.value(x).data();
        let out = Tensor::from_fn(&[m, n], |i| xd[i] * vd[i % n]);
        let ng = self.ng(x) || self.ng(v);
        Ok(self.push(out, Op::ScaleColumns(x, v), ng))
    }

    /// Scales each leading-axis slab of `x` by the matching entry of `g`.
    pub fn scale_channels(&mut self, x: Var, g: Var) -> Result<Var> {
        let c = self.shape(x)[0];
        if self.value(g).len() != c {
            return Err(Error::shape("scale_channels", self.shape(x), self.shape(g)));
        }
        let slab = self.value(x).len() / c;
        let gd = self.value(g).data().to_vec();
        let xv = self.value(x);
        let out = Tensor::from_fn(xv.shape(), |i| xv.data()[i] * gd[i / slab]);
        let ng = self.ng(x) || self.ng(g);
        Ok(self.push(out, Op::ScaleChannels(x, g), ng))
    }

    pub fn depthwise(&mut self, x: Var, w: Var, dilation: usize) -> Result<Var> {
        let out = k::depthwise_conv2d(self.value(x), self.value(w), dilation)?;
        let ng = self.ng(x) || self.ng(w);
        Ok(self.push(out, Op::Depthwise { x, w, dilation }, ng))
    }

    pub fn conv(&mut self, x: Var, w: Var, stride: usize) -> Result<Var> {
        let out = k::conv2d(self.value(x), self.value(w), stride)?;
        let ng = self.ng(x) || self.ng(w);
        Ok(self.push(out, Op::Conv { x, w, stride }, ng))
    }

    /// 1×1 convolution `w (C_out×C_in)` over `x (C_in,H,W)`.
    pub fn pointwise(&mut self, x: Var, w: Var) -> Result<Var> {
        let (c, h, wd) = self.value(x).dims3()?;
        let co = self.shape(w)[0];
        let flat = self.reshape(x, &[c, h * wd])?;
        let y = self.matmul(w, flat)?;
        self.reshape(y, &[co, h, wd])
    }

    pub fn pixel_shuffle(&mut self, x: Var, s: usize) -> Result<Var> {
        let out = k::pixel_shuffle(self.value(x), s)?;
        let ng = self.ng(x);
        Ok(self.push(out, Op::PixelShuffle(x, s), ng))
    }

    /// Concatenation along the leading axis.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts.first().ok_or(Error::EmptyInput)?;
        let rest_shape = self.shape(first)[1..].to_vec();
        let mut lead = 0;
        let mut data = Vec::new();
        for &p in parts {
            let v = self.value(p);
            if v.shape()[1..] != rest_shape[..] {
                return Err(Error::shape("concat", self.shape(first), v.shape()));
            }
            lead += v.shape()[0];
            data.extend_from_slice(v.data());
        }
        let mut shape = vec![lead];
        shape.extend_from_slice(&rest_shape);
        let ng = parts.iter().any(|&p| self.ng(p));
        Ok(self.push(Tensor::from_parts(shape, data), Op::Concat(parts.to_vec()), ng))
    }

    /// `x[start..start+len]` along the leading axis.
    pub fn slice(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if len == 0 || start + len > shape[0] {
            return Err(Error::shape("slice", &shape, &[start, len]));
        }
        let slab: usize = shape[1..].iter().product();
        let data = self.value(x).data()[start * slab..(start + len) * slab].to_vec();
        let mut out_shape = shape;
        out_shape[0] = len;
        let ng = self.ng(x);
        Ok(self.push(Tensor::from_parts(out_shape, data), Op::Slice { x, start }, ng))
    }

    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var> {
        let (out, cache) = k::channel_layer_norm(self.value(x), self.value(gain), self.value(bias))?;
        let ng = self.ng(x) || self.ng(gain) || self.ng(bias);
        Ok(self.push(out, Op::LayerNorm { x, gain, bias, cache }, ng))
    }

    pub fn reflect_pad(&mut self, x: Var, bottom: usize, right: usize) -> Result<Var> {
        let out = k::reflect_pad(self.value(x), bottom, right)?;
        let ng = self.ng(x);
        Ok(self.push(out, Op::ReflectPad(x), ng))
    }

    pub fn crop(&mut self, x: Var, h: usize, w: usize) -> Result<Var> {
        let out = k::crop(self.value(x), h, w)?;
        let ng = self.ng(x);
        Ok(self.push(out, Op::Crop(x), ng))
    }

    /// Mean absolute error against a constant target.
    pub fn l1_loss(&mut self, pred: Var, target: &Tensor) -> Result<Var> {
        let p = self.value(pred);
        if p.shape() != target.shape() {
            return Err(Error::shape("l1_loss", p.shape(), target.shape()));
        }
        let loss = p
            .data()
            .iter()
            .zip(target.data())
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>()
            / p.len() as f64;
        let ng = self.ng(pred);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::L1 {
                pred,
                target: target.clone(),
            },
            ng,
        ))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).sum();
        let ng = self.ng(a);
        self.push(Tensor::scalar(s), Op::Sum(a), ng)
    }

    /// `Σ a ⊙ w` for a constant `w`; a generic smooth scalar read-out.
    pub fn dot_const(&mut self, a: Var, w: &Tensor) -> Result<Var> {
        let v = self.value(a);
        if v.len() != w.len() {
            return Err(Error::shape("dot_const", v.shape(), w.shape()));
        }
        let s = v.data().iter().zip(w.data()).map(|(x, y)| x * y).sum();
        let ng = self.ng(a);
        Ok(self.push(Tensor::scalar(s), Op::Dot(a, w.clone()), ng))
    }

    /// Reverse pass from `out`, seeded with ones.
    pub fn backward(&self, out: Var) -> Result<Gradients> {
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[out.0] = Some(Tensor::full(self.shape(out), 1.0));
        for i in (0..=out.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            let mut contribs = self.vjp(node, &g)?;
            if self.corrupt == Some(node.op.kind()) {
                for (_, t) in contribs.iter_mut() {
                    *t = t.scale(1.01);
                }
            }
            for (v, t) in contribs {
                if !self.ng(v) {
                    continue;
                }
                match &mut grads[v.0] {
                    Some(acc) => acc.add_assign(&t)?,
                    slot => *slot = Some(t),
                }
            }
            // keep the output gradient for inspection
            if i == out.0 {
                grads[i] = Some(g);
            }
        }
        let params = self
            .leaves
            .iter()
            .map(|&(id, v)| (id, grads[v.0].clone()))
            .collect();
        Ok(Gradients { grads, params })
    }

    fn vjp(&self, node: &Node, g: &Tensor) -> Result<Vec<(Var, Tensor)>> {
        let val = |v: Var| self.value(v);
        Ok(match &node.op {
            Op::Leaf => vec![],
            Op::MatMul(a, b) => {
                let mut out = Vec::with_capacity(2);
                if self.ng(*a) {
                    out.push((*a, linalg::matmul(g, &val(*b).transpose()?)?));
                }
                if self.ng(*b) {
                    out.push((*b, linalg::matmul(&val(*a).transpose()?, g)?));
                }
                out
            }
            Op::Add(a, b) => vec![(*a, g.clone()), (*b, g.clone())],
            Op::Mul(a, b) => vec![
                (*a, g.zip_map(val(*b), |x, y| x * y)?),
                (*b, g.zip_map(val(*a), |x, y| x * y)?),
            ],
            Op::Scale(a, c) => vec![(*a, g.scale(*c))],
            Op::ScaleBy(a, s) => {
                let c = val(*s).data()[0];
                let ds: f64 = g.data().iter().zip(val(*a).data()).map(|(x, y)| x * y).sum();
                vec![
                    (*a, g.map(|x| x * c)),
                    (*s, Tensor::from_parts(val(*s).shape().to_vec(), vec![ds])),
                ]
            }
            Op::Exp(a) => vec![(*a, g.zip_map(&node.value, |x, y| x * y)?)],
            Op::Relu(a) => vec![(*a, g.zip_map(val(*a), |x, y| if y > 0.0 { x } else { 0.0 })?)],
            Op::Gelu(a) => vec![(*a, g.zip_map(val(*a), |x, y| x * gelu_grad(y))?)],
            Op::Sigmoid(a) => vec![(*a, g.zip_map(&node.value, |x, y| x * y * (1.0 - y))?)],
            Op::Softmax(a) => vec![(*a, linalg::row_softmax_backward(&node.value, g)?)],
            Op::Transpose(a) => vec![(*a, g.transpose()?)],
            Op::Reshape(a) => vec![(*a, g.clone().reshape(val(*a).shape())?)],
            Op::MeanRows(a) => {
                let (m, n) = val(*a).dims2()?;
                let gd = g.data();
                vec![(*a, Tensor::from_fn(&[m, n], |i| gd[i % n] / m as f64))]
            }
            Op::ScaleColumns(x, v) => {
                let (m, n) = val(*x).dims2()?;
                let (xd, vd, gd) = (val(*x).data(), val(*v).data(), g.data());
                let dx = Tensor::from_fn(&[m, n], |i| gd[i] * vd[i % n]);
                let mut dv = vec![0.0; n];
                for i in 0..m * n {
                    dv[i % n] += gd[i] * xd[i];
                }
                vec![(*x, dx), (*v, Tensor::from_parts(val(*v).shape().to_vec(), dv))]
            }
            Op::ScaleChannels(x, s) => {
                let c = val(*s).len();
                let slab = val(*x).len() / c;
                let (xd, sd, gd) = (val(*x).data(), val(*s).data(), g.data());
                let dx = Tensor::from_fn(val(*x).shape(), |i| gd[i] * sd[i / slab]);
                let ds = (0..c)
                    .map(|ch| (ch * slab..(ch + 1) * slab).map(|i| gd[i] * xd[i]).sum())
                    .collect();
                vec![(*x, dx), (*s, Tensor::from_parts(val(*s).shape().to_vec(), ds))]
            }
            Op::Depthwise { x, w, dilation } => {
                let (dx, dw) = k::depthwise_conv2d_backward(val(*x), val(*w), *dilation, g)?;
                vec![(*x, dx), (*w, dw)]
            }
            Op::Conv { x, w, stride } => {
                let (dx, dw) = k::conv2d_backward(val(*x), val(*w), *stride, g)?;
                vec![(*x, dx), (*w, dw)]
            }
            Op::PixelShuffle(x, s) => vec![(*x, k::pixel_unshuffle(g, *s)?)],
            Op::Concat(parts) => {
                let slab: usize = g.shape()[1..].iter().product();
                let mut off = 0;
                let mut out = Vec::with_capacity(parts.len());
                for &p in parts {
                    let n = val(p).len();
                    let t = Tensor::from_parts(
                        val(p).shape().to_vec(),
                        g.data()[off..off + n].to_vec(),
                    );
                    debug_assert_eq!(n % slab, 0);
                    off += n;
                    out.push((p, t));
                }
                out
            }
            Op::Slice { x, start } => {
                let xs = val(*x).shape();
                let slab: usize = xs[1..].iter().product();
                let mut d = Tensor::zeros(xs);
                d.data_mut()[start * slab..start * slab + g.len()].copy_from_slice(g.data());
                vec![(*x, d)]
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                cache,
            } => {
                let (dx, dg, db) = k::channel_layer_norm_backward(cache, val(*gain), g)?;
                vec![(*x, dx), (*gain, dg), (*bias, db)]
            }
            Op::ReflectPad(x) => {
                let (_, h, w) = val(*x).dims3()?;
                vec![(*x, k::reflect_pad_backward(g, h, w)?)]
            }
            Op::Crop(x) => {
                let (_, h, w) = val(*x).dims3()?;
                vec![(*x, k::crop_backward(g, h, w)?)]
            }
            Op::L1 { pred, target } => {
                let n = target.len() as f64;
                let gs = g.data()[0] / n;
                let d = val(*pred).zip_map(target, |p, t| {
                    if p > t {
                        gs
                    } else if p < t {
                        -gs
                    } else {
                        0.0
                    }
                })?;
                vec![(*pred, d)]
            }
            Op::Sum(a) => vec![(*a, Tensor::full(val(*a).shape(), g.data()[0]))],
            Op::Dot(a, w) => {
                let gs = g.data()[0];
                vec![(*a, Tensor::from_parts(val(*a).shape().to_vec(), w.data().iter().map(|x| x * gs).collect()))]
            }
        })
    }
}

/// Result of [`Graph::backward`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    params: Vec<(ParamId, Option<Tensor>)>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads[v.0].as_ref()
    }

    /// Gradients of every parameter touched by the forward pass.
    pub fn params(&self) -> impl Iterator<Item = (ParamId, &Tensor)> {
        self.params
            .iter()
            .filter_map(|(id, g)| g.as_ref().map(|g| (*id, g)))
    }

    /// Adds the parameter gradients into the store's `grad` fields.
    pub fn accumulate_into(&self, store: &mut ParamStore) -> Result<()> {
        for (id, g) in self.params() {
            store.get_mut(id).grad.add_assign(g)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_grad_is_dc_bt() {
        let mut store = ParamStore::new();
        let a = store.add("a", Tensor::from_rows(&[&[1.0, 2.0], &[3.0, 4.0]]).unwrap());
        let mut g = Graph::new();
        let av = g.param(&store, a);
        let b = g.input(Tensor::from_rows(&[&[5.0], &[6.0]]).unwrap());
        let c = g.matmul(av, b).unwrap();
        let s = g.sum(c);
        let grads = g.backward(s).unwrap();
        // dA = 1·Bᵀ per row
        assert_eq!(grads.get(av).unwrap().data(), &[5.0, 6.0, 5.0, 6.0]);
        assert!(grads.get(b).is_none());
    }

    #[test]
    fn shared_param_grads_accumulate() {
        let mut store = ParamStore::new();
        let p = store.add("p", Tensor::new(&[2], vec![1.0, -2.0]).unwrap());
        let mut g = Graph::new();
        let a = g.param(&store, p);
        let b = g.param(&store, p);
        assert_eq!(a, b);
        let m = g.mul(a, b).unwrap();
        let s = g.sum(m);
        g.backward(s).unwrap().accumulate_into(&mut store).unwrap();
        assert_eq!(store.get(p).grad.data(), &[2.0, -4.0]);
    }

    #[test]
    fn l1_subgradient_is_zero_at_ties() {
        let mut store = ParamStore::new();
        let p = store.add("p", Tensor::new(&[3], vec![1.0, 2.0, 3.0]).unwrap());
        let mut g = Graph::new();
        let v = g.param(&store, p);
        let t = Tensor::new(&[3], vec![0.0, 2.0, 5.0]).unwrap();
        let l = g.l1_loss(v, &t).unwrap();
        assert!((g.value(l).data()[0] - 1.0).abs() < 1e-15);
        let grads = g.backward(l).unwrap();
        let d = grads.get(v).unwrap().data();
        assert_eq!(d, &[1.0 / 3.0, 0.0, -1.0 / 3.0]);
    }

    #[test]
    fn gelu_derivative_matches_difference() {
        for &x in &[-3.0, -0.5, 0.0, 0.7, 2.5] {
            let h = 1e-6;
            let fd = (gelu(x + h) - gelu(x - h)) / (2.0 * h);
            assert!((fd - gelu_grad(x)).abs() < 1e-8);
        }
    }
}
