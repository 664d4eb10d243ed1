//! Tensor-level spatial kernels and their vector-Jacobian products.
//!
//! All convolutions are correlations (no kernel flip) with zero same-padding
//! unless stated otherwise.

use crate::error::{Error, Result};
use crate::flops;
use crate::linalg::matmul;
use crate::par;
use crate::tensor::Tensor;

/// Valid output range `[lo, hi)` for a tap offset `off` on an axis of `n`.
fn valid_range(n: usize, off: isize) -> (usize, usize) {
    let lo = (-off).clamp(0, n as isize) as usize;
    let hi = (n as isize - off).clamp(0, n as isize) as usize;
    (lo, hi.max(lo))
}

fn depthwise_dims(x: &Tensor, w: &Tensor, dilation: usize) -> Result<(usize, usize, usize, usize)> {
    let (c, h, wd) = x.dims3()?;
    let ws = w.shape();
    if ws.len() != 3 || ws[0] != c || ws[1] != ws[2] {
        return Err(Error::shape("depthwise_conv2d", x.shape(), ws));
    }
    let k = ws[1];
    if k % 2 == 0 {
        return Err(Error::Config(format!("depthwise kernel size {k} is even")));
    }
    if dilation == 0 {
        return Err(Error::Config("dilation must be at least 1".into()));
    }
    Ok((c, h, wd, k))
}

/// Per-channel 2-D correlation with dilation and zero same-padding of
/// `(k-1)·dilation/2` per side. Records `C·H·W·k²` multiply-adds.
pub fn depthwise_conv2d(x: &Tensor, w: &Tensor, dilation: usize) -> Result<Tensor> {
    let (c, h, wd, k) = depthwise_dims(x, w, dilation)?;
    flops::record((c * h * wd * k * k) as u64);
    let r = (k / 2) as isize;
    let hw = h * wd;
    let (xd, wdat) = (x.data(), w.data());
    let mut out = vec![0.0; c * hw];
    par::for_each_chunk(&mut out, hw, c * hw * k * k, |ch, slab| {
        let src = &xd[ch * hw..(ch + 1) * hw];
        let taps = &wdat[ch * k * k..(ch + 1) * k * k];
        for ky in 0..k {
            let dy = (ky as isize - r) * dilation as isize;
            let (y0, y1) = valid_range(h, dy);
            for kx in 0..k {
                let wv = taps[ky * k + kx];
                if wv == 0.0 {
                    continue;
                }
                let dx = (kx as isize - r) * dilation as isize;
                let (x0, x1) = valid_range(wd, dx);
                if x0 == x1 {
                    continue;
                }
                for y in y0..y1 {
                    let sy = (y as isize + dy) as usize;
                    let orow = &mut slab[y * wd + x0..y * wd + x1];
                    let s0 = (sy * wd) as isize + x0 as isize + dx;
                    let irow = &src[s0 as usize..s0 as usize + (x1 - x0)];
                    for (o, &v) in orow.iter_mut().zip(irow) {
                        *o += wv * v;
                    }
                }
            }
        }
    });
    Ok(Tensor::from_parts(vec![c, h, wd], out))
}

/// Returns `(dx, dw)` for [`depthwise_conv2d`].
pub fn depthwise_conv2d_backward(
    x: &Tensor,
    w: &Tensor,
    dilation: usize,
    grad: &Tensor,
) -> Result<(Tensor, Tensor)> {
    let (c, h, wd, k) = depthwise_dims(x, w, dilation)?;
    flops::record(2 * (c * h * wd * k * k) as u64);
    let r = (k / 2) as isize;
    let hw = h * wd;
    let (xd, wdat, gd) = (x.data(), w.data(), grad.data());
    let mut dx = vec![0.0; c * hw];
    par::for_each_chunk(&mut dx, hw, c * hw * k * k, |ch, slab| {
        let g = &gd[ch * hw..(ch + 1) * hw];
        let taps = &wdat[ch * k * k..(ch + 1) * k * k];
        for ky in 0..k {
            let dy = (ky as isize - r) * dilation as isize;
            let (y0, y1) = valid_range(h, dy);
            for kx in 0..k {
                let wv = taps[ky * k + kx];
                if wv == 0.0 {
                    continue;
                }
                let dxo = (kx as isize - r) * dilation as isize;
                let (x0, x1) = valid_range(wd, dxo);
                if x0 == x1 {
                    continue;
                }
                for y in y0..y1 {
                    let sy = (y as isize + dy) as usize;
                    let s0 = ((sy * wd) as isize + x0 as isize + dxo) as usize;
                    let drow = &mut slab[s0..s0 + (x1 - x0)];
                    for (d, &gv) in drow.iter_mut().zip(&g[y * wd + x0..y * wd + x1]) {
                        *d += wv * gv;
                    }
                }
            }
        }
    });
    let mut dw = vec![0.0; c * k * k];
    par::for_each_chunk(&mut dw, k * k, c * hw * k * k, |ch, taps| {
        let g = &gd[ch * hw..(ch + 1) * hw];
        let src = &xd[ch * hw..(ch + 1) * hw];
        for ky in 0..k {
            let dy = (ky as isize - r) * dilation as isize;
            let (y0, y1) = valid_range(h, dy);
            for kx in 0..k {
                let dxo = (kx as isize - r) * dilation as isize;
                let (x0, x1) = valid_range(wd, dxo);
                if x0 == x1 {
                    continue;
                }
                let mut acc = 0.0;
                for y in y0..y1 {
                    let sy = (y as isize + dy) as usize;
                    let s0 = ((sy * wd) as isize + x0 as isize + dxo) as usize;
                    acc += g[y * wd + x0..y * wd + x1]
                        .iter()
                        .zip(&src[s0..s0 + (x1 - x0)])
                        .map(|(a, b)| a * b)
                        .sum::<f64>();
                }
                taps[ky * k + kx] = acc;
            }
        }
    });
    Ok((
        Tensor::from_parts(vec![c, h, wd], dx),
        Tensor::from_parts(vec![c, k, k], dw),
    ))
}

struct ConvGeom {
    cin: usize,
    cout: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    ho: usize,
    wo: usize,
}

impl ConvGeom {
    fn new(x: &Tensor, w: &Tensor, stride: usize) -> Result<Self> {
        let (cin, h, wd) = x.dims3()?;
        let ws = w.shape();
        if ws.len() != 4 || ws[1] != cin || ws[2] != ws[3] {
            return Err(Error::shape("conv2d", x.shape(), ws));
        }
        let k = ws[2];
        if k % 2 == 0 {
            return Err(Error::Config(format!("conv kernel size {k} is even")));
        }
        if stride == 0 {
            return Err(Error::Config("stride must be at least 1".into()));
        }
        let p = k / 2;
        let ho = (h + 2 * p - k) / stride + 1;
        let wo = (wd + 2 * p - k) / stride + 1;
        Ok(Self {
            cin,
            cout: ws[0],
            h,
            w: wd,
            k,
            stride,
            ho,
            wo,
        })
    }

    /// Output index range along an axis for tap `t` such that the input index
    /// `o·stride + t - pad` lies in `[0, n)`.
    fn out_range(&self, n: usize, nout: usize, t: usize) -> (usize, usize) {
        let p = (self.k / 2) as isize;
        let off = t as isize - p;
        let s = self.stride as isize;
        // o·s + off >= 0  =>  o >= ceil(-off / s)
        let lo = if off >= 0 { 0 } else { (((-off) + s - 1) / s).min(nout as isize) };
        // o·s + off <= n-1  =>  o <= floor((n-1-off)/s)
        let top = n as isize - 1 - off;
        let hi = if top < 0 { 0 } else { (top / s + 1).min(nout as isize) };
        (lo as usize, (hi.max(lo)) as usize)
    }
}

/// Dense 2-D correlation, `x (C_in,H,W)` with `w (C_out,C_in,k,k)`, zero
/// padding `k/2` and the given stride.
pub fn conv2d(x: &Tensor, w: &Tensor, stride: usize) -> Result<Tensor> {
    let g = ConvGeom::new(x, w, stride)?;
    let (k, s) = (g.k, g.stride);
    let p = k / 2;
    let plane = g.ho * g.wo;
    flops::record((g.cout * g.cin * plane * k * k) as u64);
    let (xd, wdat) = (x.data(), w.data());
    let mut out = vec![0.0; g.cout * plane];
    par::for_each_chunk(&mut out, plane, g.cout * g.cin * plane * k * k, |co, slab| {
        for ci in 0..g.cin {
            let src = &xd[ci * g.h * g.w..(ci + 1) * g.h * g.w];
            let taps = &wdat[(co * g.cin + ci) * k * k..(co * g.cin + ci + 1) * k * k];
            for ky in 0..k {
                let (oy0, oy1) = g.out_range(g.h, g.ho, ky);
                for kx in 0..k {
                    let wv = taps[ky * k + kx];
                    if wv == 0.0 {
                        continue;
                    }
                    let (ox0, ox1) = g.out_range(g.w, g.wo, kx);
                    if ox0 >= ox1 {
                        continue;
                    }
                    for oy in oy0..oy1 {
                        let iy = oy * s + ky - p;
                        let orow = &mut slab[oy * g.wo..(oy + 1) * g.wo];
                        if s == 1 {
                            let i0 = iy * g.w + ox0 + kx - p;
                            for (o, &v) in orow[ox0..ox1].iter_mut().zip(&src[i0..i0 + (ox1 - ox0)]) {
                                *o += wv * v;
                            }
                        } else {
                            for ox in ox0..ox1 {
                                orow[ox] += wv * src[iy * g.w + ox * s + kx - p];
                            }
                        }
                    }
                }
            }
        }
    });
    Ok(Tensor::from_parts(vec![g.cout, g.ho, g.wo], out))
}

/// Returns `(dx, dw)` for [`conv2d`].
pub fn conv2d_backward(x: &Tensor, w: &Tensor, stride: usize, grad: &Tensor) -> Result<(Tensor, Tensor)> {
    let g = ConvGeom::new(x, w, stride)?;
    if grad.shape() != [g.cout, g.ho, g.wo] {
        return Err(Error::shape("conv2d_backward", grad.shape(), &[g.cout, g.ho, g.wo]));
    }
    let (k, s) = (g.k, g.stride);
    let p = k / 2;
    let plane = g.ho * g.wo;
    let work = g.cout * g.cin * plane * k * k;
    flops::record(2 * work as u64);
    let (xd, wdat, gd) = (x.data(), w.data(), grad.data());

    let mut dx = vec![0.0; g.cin * g.h * g.w];
    par::for_each_chunk(&mut dx, g.h * g.w, work, |ci, slab| {
        for co in 0..g.cout {
            let go = &gd[co * plane..(co + 1) * plane];
            let taps = &wdat[(co * g.cin + ci) * k * k..(co * g.cin + ci + 1) * k * k];
            for ky in 0..k {
                let (oy0, oy1) = g.out_range(g.h, g.ho, ky);
                for kx in 0..k {
                    let wv = taps[ky * k + kx];
                    if wv == 0.0 {
                        continue;
                    }
                    let (ox0, ox1) = g.out_range(g.w, g.wo, kx);
                    if ox0 >= ox1 {
                        continue;
                    }
                    for oy in oy0..oy1 {
                        let iy = oy * s + ky - p;
                        for ox in ox0..ox1 {
                            slab[iy * g.w + ox * s + kx - p] += wv * go[oy * g.wo + ox];
                        }
                    }
                }
            }
        }
    });

    let mut dw = vec![0.0; g.cout * g.cin * k * k];
    par::for_each_chunk(&mut dw, g.cin * k * k, work, |co, block| {
        let go = &gd[co * plane..(co + 1) * plane];
        for ci in 0..g.cin {
            let src = &xd[ci * g.h * g.w..(ci + 1) * g.h * g.w];
            for ky in 0..k {
                let (oy0, oy1) = g.out_range(g.h, g.ho, ky);
                for kx in 0..k {
                    let (ox0, ox1) = g.out_range(g.w, g.wo, kx);
                    let mut acc = 0.0;
                    for oy in oy0..oy1 {
                        let iy = oy * s + ky - p;
                        for ox in ox0..ox1 {
                            acc += go[oy * g.wo + ox] * src[iy * g.w + ox * s + kx - p];
                        }
                    }
                    block[(ci * k + ky) * k + kx] = acc;
                }
            }
        }
    });
    Ok((
        Tensor::from_parts(vec![g.cin, g.h, g.w], dx),
        Tensor::from_parts(vec![g.cout, g.cin, k, k], dw),
    ))
}

/// Per-position linear map across channels: `w (C_out×C_in)` applied to
/// `x (C_in,H,W)`.
pub fn pointwise_conv(x: &Tensor, w: &Tensor) -> Result<Tensor> {
    let (c, h, wd) = x.dims3()?;
    let (co, ci) = w.dims2()?;
    if ci != c {
        return Err(Error::shape("pointwise_conv", x.shape(), w.shape()));
    }
    let flat = x.clone().reshape(&[c, h * wd])?;
    matmul(w, &flat)?.reshape(&[co, h, wd])
}

/// Depth-to-space: `(C·s², H, W) -> (C, sH, sW)`, sub-pixel order row-major
/// within each `s×s` cell.
pub fn pixel_shuffle(x: &Tensor, s: usize) -> Result<Tensor> {
    let (cs, h, w) = x.dims3()?;
    if s == 0 || cs % (s * s) != 0 {
        return Err(Error::Size(format!(
            "pixel_shuffle: {cs} channels not divisible by {s}²"
        )));
    }
    let c = cs / (s * s);
    let (oh, ow) = (h * s, w * s);
    let xd = x.data();
    let mut out = vec![0.0; c * oh * ow];
    for ch in 0..c {
        for i in 0..s {
            for j in 0..s {
                let src = &xd[(ch * s * s + i * s + j) * h * w..][..h * w];
                for y in 0..h {
                    for xx in 0..w {
                        out[ch * oh * ow + (y * s + i) * ow + xx * s + j] = src[y * w + xx];
                    }
                }
            }
        }
    }
    Ok(Tensor::from_parts(vec![c, oh, ow], out))
}

/// Space-to-depth, the inverse of [`pixel_shuffle`].
pub fn pixel_unshuffle(x: &Tensor, s: usize) -> Result<Tensor> {
    let (c, oh, ow) = x.dims3()?;
    if s == 0 || oh % s != 0 || ow % s != 0 {
        return Err(Error::Size(format!(
            "pixel_unshuffle: {oh}x{ow} not divisible by {s}"
        )));
    }
    let (h, w) = (oh / s, ow / s);
    let xd = x.data();
    let mut out = vec![0.0; c * s * s * h * w];
    for ch in 0..c {
        for i in 0..s {
            for j in 0..s {
                let dst = &mut out[(ch * s * s + i * s + j) * h * w..][..h * w];
                for y in 0..h {
                    for xx in 0..w {
                        dst[y * w + xx] = xd[ch * oh * ow + (y * s + i) * ow + xx * s + j];
                    }
                }
            }
        }
    }
    Ok(Tensor::from_parts(vec![c * s * s, h, w], out))
}

pub const LAYER_NORM_EPS: f64 = 1e-6;

/// Forward cache of [`channel_layer_norm`].
#[derive(Clone, Debug)]
pub struct LayerNormCache {
    pub xhat: Tensor,
    pub inv_std: Vec<f64>,
}

/// Normalises the channel vector at every position, then applies
/// per-channel gain and bias.
pub fn channel_layer_norm(x: &Tensor, gain: &Tensor, bias: &Tensor) -> Result<(Tensor, LayerNormCache)> {
    let (c, h, w) = x.dims3()?;
    if gain.len() != c || bias.len() != c {
        return Err(Error::shape("channel_layer_norm", x.shape(), gain.shape()));
    }
    let n = h * w;
    let xd = x.data();
    let mut xhat = vec![0.0; c * n];
    let mut inv_std = vec![0.0; n];
    for p in 0..n {
        let mean = (0..c).map(|ch| xd[ch * n + p]).sum::<f64>() / c as f64;
        let var = (0..c).map(|ch| (xd[ch * n + p] - mean).powi(2)).sum::<f64>() / c as f64;
        let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
        inv_std[p] = inv;
        for ch in 0..c {
            xhat[ch * n + p] = (xd[ch * n + p] - mean) * inv;
        }
    }
    let (gd, bd) = (gain.data(), bias.data());
    let y = (0..c * n).map(|i| gd[i / n] * xhat[i] + bd[i / n]).collect();
    Ok((
        Tensor::from_parts(vec![c, h, w], y),
        LayerNormCache {
            xhat: Tensor::from_parts(vec![c, h, w], xhat),
            inv_std,
        },
    ))
}

/// Returns `(dx, dgain, dbias)`.
pub fn channel_layer_norm_backward(
    cache: &LayerNormCache,
    gain: &Tensor,
    grad: &Tensor,
) -> Result<(Tensor, Tensor, Tensor)> {
    let (c, h, w) = cache.xhat.dims3()?;
    let n = h * w;
    let (xh, gd, gn) = (cache.xhat.data(), grad.data(), gain.data());
    let mut dgain = vec![0.0; c];
    let mut dbias = vec![0.0; c];
    for ch in 0..c {
        for p in 0..n {
            dgain[ch] += gd[ch * n + p] * xh[ch * n + p];
            dbias[ch] += gd[ch * n + p];
        }
    }
    let mut dx = vec![0.0; c * n];
    let cf = c as f64;
    for p in 0..n {
        let mut sum = 0.0;
        let mut sum_x = 0.0;
        for ch in 0..c {
            let dxh = gd[ch * n + p] * gn[ch];
            sum += dxh;
            sum_x += dxh * xh[ch * n + p];
        }
        for ch in 0..c {
            let dxh = gd[ch * n + p] * gn[ch];
            dx[ch * n + p] = cache.inv_std[p] / cf * (cf * dxh - sum - xh[ch * n + p] * sum_x);
        }
    }
    Ok((
        Tensor::from_parts(vec![c, h, w], dx),
        Tensor::from_parts(gain.shape().to_vec(), dgain),
        Tensor::from_parts(gain.shape().to_vec(), dbias),
    ))
}

/// Half-sample symmetric reflection of index `i` into `[0, n)`:
/// `-1 -> 0`, `n -> n-1`, repeating for larger offsets.
pub fn reflect_index(i: isize, n: usize) -> usize {
    let n = n as isize;
    let period = 2 * n;
    let m = i.rem_euclid(period);
    (if m < n { m } else { period - 1 - m }) as usize
}

/// Extends a feature map by reflection on the bottom and right edges.
pub fn reflect_pad(x: &Tensor, bottom: usize, right: usize) -> Result<Tensor> {
    let (c, h, w) = x.dims3()?;
    let (oh, ow) = (h + bottom, w + right);
    let xd = x.data();
    let out = Tensor::from_fn(&[c, oh, ow], |i| {
        let ch = i / (oh * ow);
        let y = reflect_index(((i / ow) % oh) as isize, h);
        let xx = reflect_index((i % ow) as isize, w);
        xd[ch * h * w + y * w + xx]
    });
    Ok(out)
}

pub fn reflect_pad_backward(grad: &Tensor, h: usize, w: usize) -> Result<Tensor> {
    let (c, oh, ow) = grad.dims3()?;
    let mut dx = Tensor::zeros(&[c, h, w]);
    let d = dx.data_mut();
    for ch in 0..c {
        for y in 0..oh {
            let sy = reflect_index(y as isize, h);
            for xx in 0..ow {
                let sx = reflect_index(xx as isize, w);
                d[ch * h * w + sy * w + sx] += grad.data()[ch * oh * ow + y * ow + xx];
            }
        }
    }
    Ok(dx)
}

/// Top-left `h×w` window of a feature map.
pub fn crop(x: &Tensor, h: usize, w: usize) -> Result<Tensor> {
    let (c, ih, iw) = x.dims3()?;
    if h > ih || w > iw || h == 0 || w == 0 {
        return Err(Error::Size(format!("cannot crop {ih}x{iw} to {h}x{w}")));
    }
    let xd = x.data();
    Ok(Tensor::from_fn(&[c, h, w], |i| {
        let ch = i / (h * w);
        let y = (i / w) % h;
        let xx = i % w;
        xd[ch * ih * iw + y * iw + xx]
    }))
}

pub fn crop_backward(grad: &Tensor, ih: usize, iw: usize) -> Result<Tensor> {
    let (c, h, w) = grad.dims3()?;
    let mut dx = Tensor::zeros(&[c, ih, iw]);
    for ch in 0..c {
        for y in 0..h {
            let src = &grad.data()[ch * h * w + y * w..][..w];
            dx.data_mut()[ch * ih * iw + y * iw..][..w].copy_from_slice(src);
        }
    }
    Ok(dx)
}
