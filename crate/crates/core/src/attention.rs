//! Softmax attention, its exponential-kernel relaxation, Taylor truncations
//! in quadratic and linear form, and the learnable linear-cost unit.
//!
//! Shapes follow the flattened convention: `X` is `N×d` (positions by
//! channels), and every projection is a right factor `X·W`.

use rand::Rng;

use crate::conv::{quarter, Builder, DepthwiseKernel};
use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::linalg::{matmul, row_softmax, symmetric_eigendecompose};
use crate::param::{ParamId, ParamStore, WeightSet};
use crate::rng::{glorot_bound, uniform_tensor};
use crate::tensor::Tensor;

/// Largest `|QKᵀ|` entry accepted by [`exp_kernel_forward`].
pub const EXP_GUARD: f64 = 30.0;

/// The three 1×1 projections of softmax attention.
#[derive(Clone, Debug)]
pub struct QkvWeights {
    pub w_q: Tensor,
    pub w_k: Tensor,
    pub w_v: Tensor,
}

impl QkvWeights {
    pub fn new(w_q: Tensor, w_k: Tensor, w_v: Tensor) -> Result<Self> {
        let (d, d2) = w_q.dims2()?;
        for w in [&w_q, &w_k, &w_v] {
            if w.shape() != [d, d] || d != d2 {
                return Err(Error::shape("qkv", w_q.shape(), w.shape()));
            }
        }
        Ok(Self { w_q, w_k, w_v })
    }

    /// Glorot-uniform projections of width `d`.
    pub fn random<R: Rng + ?Sized>(rng: &mut R, d: usize) -> Self {
        let b = glorot_bound(d, d);
        Self {
            w_q: uniform_tensor(rng, &[d, d], b),
            w_k: uniform_tensor(rng, &[d, d], b),
            w_v: uniform_tensor(rng, &[d, d], b),
        }
    }

    pub fn identity(d: usize) -> Self {
        Self {
            w_q: Tensor::identity(d),
            w_k: Tensor::identity(d),
            w_v: Tensor::identity(d),
        }
    }

    pub fn dim(&self) -> usize {
        self.w_q.shape()[0]
    }

    /// `W_q·W_kᵀ`, formed on demand.
    pub fn w_qk(&self) -> Result<Tensor> {
        matmul(&self.w_q, &self.w_k.transpose()?)
    }

    pub fn num_params(&self) -> usize {
        self.w_q.len() + self.w_k.len() + self.w_v.len()
    }

    fn check(&self, x: &Tensor) -> Result<(usize, usize)> {
        let (n, d) = x.dims2()?;
        if d != self.dim() {
            return Err(Error::shape("attention", x.shape(), self.w_q.shape()));
        }
        Ok((n, d))
    }
}

/// Truncation order of the exponential series.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum TaylorOrder {
    First = 1,
    Second = 2,
    Third = 3,
}

impl TaylorOrder {
    pub const ALL: [TaylorOrder; 3] = [TaylorOrder::First, TaylorOrder::Second, TaylorOrder::Third];

    pub fn get(self) -> usize {
        self as usize
    }
}

impl TryFrom<usize> for TaylorOrder {
    type Error = Error;

    fn try_from(v: usize) -> Result<Self> {
        match v {
            1 => Ok(TaylorOrder::First),
            2 => Ok(TaylorOrder::Second),
            3 => Ok(TaylorOrder::Third),
            _ => Err(Error::Config(format!("taylor order must be 1, 2 or 3, got {v}"))),
        }
    }
}

fn check_k(k: f64) -> Result<()> {
    if k > 0.0 && k.is_finite() {
        Ok(())
    } else {
        Err(Error::Config(format!("normaliser k must be positive, got {k}")))
    }
}

/// Exact softmax attention `softmax((XW_q)(XW_k)ᵀ)·(XW_v)`.
pub fn nla_forward(x: &Tensor, w: &QkvWeights) -> Result<Tensor> {
    w.check(x)?;
    let q = matmul(x, &w.w_q)?;
    let k = matmul(x, &w.w_k)?;
    let v = matmul(x, &w.w_v)?;
    let att = row_softmax(&matmul(&q, &k.transpose()?)?)?;
    matmul(&att, &v)
}

/// `exp(QKᵀ)` with the overflow guard applied, plus `V`.
fn exp_scores(x: &Tensor, w: &QkvWeights) -> Result<(Tensor, Tensor)> {
    w.check(x)?;
    let q = matmul(x, &w.w_q)?;
    let k = matmul(x, &w.w_k)?;
    let v = matmul(x, &w.w_v)?;
    let s = matmul(&q, &k.transpose()?)?;
    if let Some(&bad) = s.data().iter().find(|v| !(v.abs() <= EXP_GUARD)) {
        return Err(Error::Overflow(bad, EXP_GUARD));
    }
    Ok((s.map(f64::exp), v))
}

/// `(1/k)·exp(QKᵀ)·V` with an elementwise exponential and no max shift.
pub fn exp_kernel_forward(x: &Tensor, w: &QkvWeights, k: f64) -> Result<Tensor> {
    check_k(k)?;
    let (e, v) = exp_scores(x, w)?;
    Ok(matmul(&e, &v)?.scale(1.0 / k))
}

/// Like [`exp_kernel_forward`] with one normaliser per output row.
pub fn exp_kernel_forward_per_row(x: &Tensor, w: &QkvWeights, k: &[f64]) -> Result<Tensor> {
    let (n, d) = w.check(x)?;
    if k.len() != n {
        return Err(Error::shape("exp_kernel_forward_per_row", x.shape(), &[k.len()]));
    }
    k.iter().try_for_each(|&v| check_k(v))?;
    let (e, v) = exp_scores(x, w)?;
    let out = matmul(&e, &v)?;
    Ok(Tensor::from_fn(&[n, d], |i| out.data()[i] / k[i / d]))
}

/// Row sums of `exp(QKᵀ)`, the per-row normalisers that recover softmax.
pub fn exp_row_sums(x: &Tensor, w: &QkvWeights) -> Result<Vec<f64>> {
    let (e, _) = exp_scores(x, w)?;
    let (n, m) = e.dims2()?;
    Ok((0..n).map(|i| e.data()[i * m..(i + 1) * m].iter().sum()).collect())
}

/// `A = X·W_qk·Xᵀ`, the `N×N` score matrix of the Taylor forms.
pub fn taylor_scores(x: &Tensor, w: &QkvWeights) -> Result<Tensor> {
    w.check(x)?;
    matmul(&matmul(x, &w.w_qk()?)?, &x.transpose()?)
}

/// Quadratic-cost truncation `(1/k)·(I + A + A²/2! [+ A³/3!])·V`, evaluated
/// as nested `A·(A·V)` products so no `N×N` power is formed.
pub fn taylor_attention_reference(x: &Tensor, w: &QkvWeights, order: TaylorOrder, k: f64) -> Result<Tensor> {
    check_k(k)?;
    let a = taylor_scores(x, w)?;
    let v = matmul(x, &w.w_v)?;
    let mut out = v.clone();
    let mut term = v;
    for p in 1..=order.get() {
        term = matmul(&a, &term)?.scale(1.0 / p as f64);
        out.add_assign(&term)?;
    }
    Ok(out.scale(1.0 / k))
}

/// Linear-cost rearrangement of [`taylor_attention_reference`]. The Gram
/// matrix `G = XᵀX` is formed first, every remaining product is `N×d·d×d` or
/// `d×d·d×d`, and the `N`-side work is four `N×d·d×d` products regardless of
/// order.
pub fn taylor_attention_linear(x: &Tensor, w: &QkvWeights, order: TaylorOrder, k: f64) -> Result<Tensor> {
    check_k(k)?;
    w.check(x)?;
    let w_qk = w.w_qk()?;
    let gram = matmul(&x.transpose()?, x)?;
    let g_v = matmul(&gram, &w.w_v)?;
    let g_qk = matmul(&gram, &w_qk)?;
    // M = GW_v + (GW_qk)(GW_v)/2! + (GW_qk)²(GW_v)/3!
    let mut m = g_v.clone();
    let mut chain = g_v;
    for p in 2..=order.get() {
        chain = matmul(&g_qk, &chain)?.scale(1.0 / p as f64);
        m.add_assign(&chain)?;
    }
    let xv = matmul(x, &w.w_v)?;
    let xqk = matmul(x, &w_qk)?;
    let mut out = matmul(&xqk, &m)?;
    out.add_assign(&xv)?;
    Ok(out.scale(1.0 / k))
}

/// The three pieces of the diagonalised second-order form, before `1/k`.
#[derive(Clone, Debug)]
pub struct DiagonalizedTerms {
    /// `XW_v`
    pub value: Tensor,
    /// `XW_qk·ZBZᵀ·W_v`
    pub first: Tensor,
    /// `XW_qk·ZBZᵀ·W_qk·ZBZᵀ·W_v`, without any factorial
    pub second: Tensor,
    pub z: Tensor,
    pub b: Vec<f64>,
}

pub fn diagonalized_terms(x: &Tensor, w: &QkvWeights) -> Result<DiagonalizedTerms> {
    w.check(x)?;
    let gram = matmul(&x.transpose()?, x)?;
    let eig = symmetric_eigendecompose(&gram)?;
    let zbz = eig.reconstruct();
    let w_qk = w.w_qk()?;
    let xqk = matmul(x, &w_qk)?;
    let first_r = matmul(&zbz, &w.w_v)?;
    let second_r = matmul(&matmul(&zbz, &w_qk)?, &first_r)?;
    Ok(DiagonalizedTerms {
        value: matmul(x, &w.w_v)?,
        first: matmul(&xqk, &first_r)?,
        second: matmul(&xqk, &second_r)?,
        z: eig.z,
        b: eig.values,
    })
}

/// Second-order form with `XᵀX` replaced by its eigendecomposition `ZBZᵀ`:
/// `(1/k)(XW_v + XW_qk ZBZᵀ W_v + XW_qk ZBZᵀ W_qk ZBZᵀ W_v)`. The last term
/// carries no `1/2`; that constant is assumed absorbed into learned weights.
pub fn diagonalized_form(x: &Tensor, w: &QkvWeights, k: f64) -> Result<Tensor> {
    check_k(k)?;
    let t = diagonalized_terms(x, w)?;
    Ok(t.value.add(&t.first)?.add(&t.second)?.scale(1.0 / k))
}

/// Two successive right factors `d→r→d` with nothing in between.
#[derive(Clone, Copy, Debug)]
pub struct FactorizedBlock {
    /// `d×r`
    pub down: ParamId,
    /// `r×d`
    pub up: ParamId,
}

impl FactorizedBlock {
    pub fn new(b: &mut Builder, name: &str, d: usize) -> Self {
        let r = quarter(d);
        let mut s = b.scope(name);
        Self {
            down: s.matrix("down", d, r),
            up: s.matrix("up", r, d),
        }
    }

    /// `x·down·up`, left to right.
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let a = g.param(store, self.down);
        let b = g.param(store, self.up);
        let t = g.matmul(x, a)?;
        g.matmul(t, b)
    }
}

impl WeightSet for FactorizedBlock {
    fn visit(&self, f: &mut dyn FnMut(ParamId)) {
        f(self.down);
        f(self.up);
    }
}

/// Learned stand-in for an eigenvalue vector: mean over positions, then
/// `m1`, ReLU, `m2`.
#[derive(Clone, Copy, Debug)]
pub struct EigenExtractor {
    /// `d×r`
    pub m1: ParamId,
    /// `r×d`
    pub m2: ParamId,
}

impl EigenExtractor {
    pub fn new(b: &mut Builder, name: &str, d: usize) -> Self {
        let r = quarter(d);
        let mut s = b.scope(name);
        Self {
            m1: s.matrix("m1", d, r),
            m2: s.matrix("m2", r, d),
        }
    }

    /// `x` is `N×d`; returns a `1×d` row.
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let pooled = g.mean_rows(x)?;
        let m1 = g.param(store, self.m1);
        let m2 = g.param(store, self.m2);
        let h = g.matmul(pooled, m1)?;
        let h = g.relu(h);
        g.matmul(h, m2)
    }
}

impl WeightSet for EigenExtractor {
    fn visit(&self, f: &mut dyn FnMut(ParamId)) {
        f(self.m1);
        f(self.m2);
    }
}

/// Length-`d` diagonal extracted from `x (N×d)`.
pub fn extract_eigens(x: &Tensor, e: &EigenExtractor, store: &ParamStore) -> Result<Tensor> {
    let mut g = Graph::new();
    let xv = g.input(x.clone());
    let out = e.forward(&mut g, store, xv)?;
    let d = g.value(out).len();
    g.value(out).clone().reshape(&[d])
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SteaConfig {
    pub channels: usize,
    pub order: TaylorOrder,
    /// Depthwise 3×3 compensation on the value path.
    pub dwc: bool,
    /// `k` starts at this value (the expected number of positions).
    pub nominal_n: usize,
}

impl SteaConfig {
    pub fn new(channels: usize, nominal_n: usize) -> Self {
        Self {
            channels,
            order: TaylorOrder::Second,
            dwc: true,
            nominal_n,
        }
    }
}

/// Parameters of one learnable linear-attention unit.
///
/// Output is `(1/k)[DWC(XW_v) + Σ_p X·W1·B1·W2·B2…·W3]`, one term per order
/// `p`: first order uses `W1 B1 W3`, second adds `W1 B1 W2 B2 W3`, third adds
/// `W1 B1 W2 B2 W4 B3 W3`.
#[derive(Clone, Debug)]
pub struct SteaWeights {
    pub config: SteaConfig,
    pub w_v: ParamId,
    pub w1: FactorizedBlock,
    pub w2: Option<FactorizedBlock>,
    pub w3: FactorizedBlock,
    pub w4: Option<FactorizedBlock>,
    pub eig1: EigenExtractor,
    pub eig2: Option<EigenExtractor>,
    pub eig3: Option<EigenExtractor>,
    /// `log k`, shape `[1]`.
    pub log_k: ParamId,
    pub dwc_kernel: Option<DepthwiseKernel>,
}

impl SteaWeights {
    pub fn new(b: &mut Builder, cfg: SteaConfig) -> Self {
        let d = cfg.channels;
        let order = cfg.order.get();
        let w_v = b.matrix("w_v", d, d);
        let w1 = FactorizedBlock::new(b, "w1", d);
        let w2 = (order >= 2).then(|| FactorizedBlock::new(b, "w2", d));
        let w3 = FactorizedBlock::new(b, "w3", d);
        let w4 = (order >= 3).then(|| FactorizedBlock::new(b, "w4", d));
        let eig1 = EigenExtractor::new(b, "eig1", d);
        let eig2 = (order >= 2).then(|| EigenExtractor::new(b, "eig2", d));
        let eig3 = (order >= 3).then(|| EigenExtractor::new(b, "eig3", d));
        let log_k = b.constant("log_k", Tensor::full(&[1], (cfg.nominal_n.max(1) as f64).ln()));
        let dwc_kernel = cfg.dwc.then(|| b.depthwise("dwc", d, 3, 1));
        Self {
            config: cfg,
            w_v,
            w1,
            w2,
            w3,
            w4,
            eig1,
            eig2,
            eig3,
            log_k,
            dwc_kernel,
        }
    }

    pub fn k(&self, store: &ParamStore) -> f64 {
        store.value(self.log_k).data()[0].exp()
    }
}

impl WeightSet for SteaWeights {
    fn visit(&self, f: &mut dyn FnMut(ParamId)) {
        f(self.w_v);
        self.w1.visit(f);
        self.w2.visit(f);
        self.w3.visit(f);
        self.w4.visit(f);
        self.eig1.visit(f);
        self.eig2.visit(f);
        self.eig3.visit(f);
        f(self.log_k);
        self.dwc_kernel.visit(f);
    }
}

/// `(C,H,W) -> (N×C)`.
pub fn flatten_positions(g: &mut Graph, x: Var) -> Result<Var> {
    let (c, h, w) = g.value(x).dims3()?;
    let flat = g.reshape(x, &[c, h * w])?;
    g.transpose(flat)
}

/// `(N×C) -> (C,H,W)`.
pub fn unflatten_positions(g: &mut Graph, x: Var, h: usize, w: usize) -> Result<Var> {
    let t = g.transpose(x)?;
    let c = g.shape(t)[0];
    g.reshape(t, &[c, h, w])
}

/// The learnable unit on a `(d,H,W)` feature map. Every factor chain is
/// evaluated left to right from `X`, so the cost is linear in `H·W`.
pub fn stea_forward(g: &mut Graph, store: &ParamStore, x: Var, w: &SteaWeights) -> Result<Var> {
    let (d, h, wd) = g.value(x).dims3()?;
    if d * h * wd == 0 {
        return Err(Error::EmptyInput);
    }
    if d != w.config.channels {
        return Err(Error::shape("stea_forward", g.shape(x), &[w.config.channels]));
    }
    let xf = flatten_positions(g, x)?;
    let w_v = g.param(store, w.w_v);
    let v = g.matmul(xf, w_v)?;
    let value = match &w.dwc_kernel {
        Some(kern) => {
            let vm = unflatten_positions(g, v, h, wd)?;
            let c = kern.forward(g, store, vm)?;
            flatten_positions(g, c)?
        }
        None => v,
    };

    // P1 = X·W1·B1, P2 = P1·W2·B2, P3 = P2·W4·B3; all share the trailing W3
    let b1 = w.eig1.forward(g, store, xf)?;
    let t = w.w1.forward(g, store, xf)?;
    let mut p = g.scale_columns(t, b1)?;
    let mut acc = p;
    for (blk, eig) in [(&w.w2, &w.eig2), (&w.w4, &w.eig3)] {
        let (Some(blk), Some(eig)) = (blk, eig) else { break };
        let b = eig.forward(g, store, xf)?;
        let t = blk.forward(g, store, p)?;
        p = g.scale_columns(t, b)?;
        acc = g.add(acc, p)?;
    }
    let dynamic = w.w3.forward(g, store, acc)?;
    let sum = g.add(value, dynamic)?;

    let log_k = g.param(store, w.log_k);
    let neg = g.scale(log_k, -1.0);
    let inv_k = g.exp(neg);
    let out = g.scale_by(sum, inv_k)?;
    unflatten_positions(g, out, h, wd)
}
