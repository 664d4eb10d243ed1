//! Synthetic low-resolution data: Gaussian blur, bicubic resampling and
//! additive noise on `(3,H,W)` images with values in `[0,1]`.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::conv::kernels::reflect_index;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const DEFAULT_KERNEL_SIZE: usize = 21;

/// Isotropic, normalised Gaussian blur kernel.
#[derive(Clone, Debug)]
pub struct GaussianBlurKernel {
    pub size: usize,
    pub sigma: f64,
    /// `size×size`, sums to one.
    pub weights: Tensor,
}

pub fn gaussian_kernel(sigma: f64, size: usize) -> Result<GaussianBlurKernel> {
    if size % 2 == 0 {
        return Err(Error::Config(format!("blur kernel size {size} is even")));
    }
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::Config(format!("blur sigma must be positive, got {sigma}")));
    }
    let r = (size / 2) as f64;
    let raw = Tensor::from_fn(&[size, size], |i| {
        let y = (i / size) as f64 - r;
        let x = (i % size) as f64 - r;
        (-(x * x + y * y) / (2.0 * sigma * sigma)).exp()
    });
    let total = raw.sum();
    Ok(GaussianBlurKernel {
        size,
        sigma,
        weights: raw.map(|v| v / total),
    })
}

/// Per-channel correlation with symmetric reflection at the borders.
pub fn blur(img: &Tensor, kernel: &GaussianBlurKernel) -> Result<Tensor> {
    let (c, h, w) = img.dims3()?;
    let k = kernel.size;
    let r = (k / 2) as isize;
    let kw = kernel.weights.data();
    let src = img.data();
    let rows: Vec<Vec<usize>> = (0..h)
        .map(|y| (0..k).map(|t| reflect_index(y as isize + t as isize - r, h)).collect())
        .collect();
    let cols: Vec<Vec<usize>> = (0..w)
        .map(|x| (0..k).map(|t| reflect_index(x as isize + t as isize - r, w)).collect())
        .collect();
    let mut out = vec![0.0; c * h * w];
    for ch in 0..c {
        let plane = &src[ch * h * w..(ch + 1) * h * w];
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0;
                for (ky, &sy) in rows[y].iter().enumerate() {
                    let krow = &kw[ky * k..(ky + 1) * k];
                    let irow = &plane[sy * w..(sy + 1) * w];
                    for (kx, &sx) in cols[x].iter().enumerate() {
                        acc += krow[kx] * irow[sx];
                    }
                }
                out[(ch * h + y) * w + x] = acc;
            }
        }
    }
    Tensor::new(&[c, h, w], out)
}

/// Keys cubic convolution kernel with `a = -0.5`.
pub fn cubic(x: f64) -> f64 {
    let a = -0.5;
    let t = x.abs();
    if t <= 1.0 {
        ((a + 2.0) * t - (a + 3.0)) * t * t + 1.0
    } else if t < 2.0 {
        ((a * t - 5.0 * a) * t + 8.0 * a) * t - 4.0 * a
    } else {
        0.0
    }
}

/// Taps for one output coordinate: source indices and normalised weights.
struct Taps {
    idx: Vec<usize>,
    w: Vec<f64>,
    anchor: usize,
}

fn resample_taps(n_in: usize, n_out: usize) -> Vec<Taps> {
    let scale = n_out as f64 / n_in as f64;
    // shrink: widen the kernel by 1/scale to antialias
    let stretch = if scale < 1.0 { scale } else { 1.0 };
    let support = 2.0 / stretch;
    (0..n_out)
        .map(|o| {
            let center = (o as f64 + 0.5) / scale - 0.5;
            let lo = (center - support).floor() as isize;
            let hi = (center + support).ceil() as isize;
            let mut idx = Vec::new();
            let mut w = Vec::new();
            for i in lo..=hi {
                let v = cubic((i as f64 - center) * stretch);
                if v != 0.0 {
                    idx.push(reflect_index(i, n_in));
                    w.push(v);
                }
            }
            let total: f64 = w.iter().sum();
            w.iter_mut().for_each(|v| *v /= total);
            let anchor = reflect_index(center.round() as isize, n_in);
            Taps { idx, w, anchor }
        })
        .collect()
}

/// Weighted sum written as `a + Σ w (x − a)`, so constant regions are
/// reproduced exactly regardless of rounding in the weights.
fn apply(taps: &Taps, get: impl Fn(usize) -> f64) -> f64 {
    let a = get(taps.anchor);
    a + taps.idx.iter().zip(&taps.w).map(|(&i, &w)| w * (get(i) - a)).sum::<f64>()
}

/// Separable bicubic resize of a `(C,H,W)` tensor.
pub fn bicubic_resize(img: &Tensor, out_h: usize, out_w: usize) -> Result<Tensor> {
    let (c, h, w) = img.dims3()?;
    if out_h == 0 || out_w == 0 {
        return Err(Error::Size(format!("cannot resize to {out_h}x{out_w}")));
    }
    let ty = resample_taps(h, out_h);
    let tx = resample_taps(w, out_w);
    let src = img.data();
    let mut mid = vec![0.0; c * h * out_w];
    for ch in 0..c {
        for y in 0..h {
            let row = &src[(ch * h + y) * w..(ch * h + y + 1) * w];
            for (x, t) in tx.iter().enumerate() {
                mid[(ch * h + y) * out_w + x] = apply(t, |i| row[i]);
            }
        }
    }
    let mut out = vec![0.0; c * out_h * out_w];
    for ch in 0..c {
        for (y, t) in ty.iter().enumerate() {
            for x in 0..out_w {
                out[(ch * out_h + y) * out_w + x] = apply(t, |i| mid[(ch * h + i) * out_w + x]);
            }
        }
    }
    Tensor::new(&[c, out_h, out_w], out)
}

pub fn bicubic_downsample(img: &Tensor, s: usize) -> Result<Tensor> {
    let (_, h, w) = img.dims3()?;
    if s == 0 || h % s != 0 || w % s != 0 {
        return Err(Error::Size(format!("{h}x{w} is not divisible by scale {s}")));
    }
    bicubic_resize(img, h / s, w / s)
}

pub fn bicubic_upsample(img: &Tensor, s: usize) -> Result<Tensor> {
    let (_, h, w) = img.dims3()?;
    bicubic_resize(img, h * s, w * s)
}

pub fn clamp_unit(img: &Tensor) -> Tensor {
    img.map(|v| v.clamp(0.0, 1.0))
}

/// Adds `N(0, (noise_sigma/255)²)` per element, then clamps.
pub fn add_noise<R: Rng + ?Sized>(img: &Tensor, noise_sigma: f64, rng: &mut R) -> Result<Tensor> {
    if noise_sigma == 0.0 {
        return Ok(img.clone());
    }
    let normal = Normal::new(0.0, noise_sigma / 255.0)
        .map_err(|e| Error::Config(format!("noise sigma {noise_sigma}: {e}")))?;
    Ok(Tensor::from_fn(img.shape(), |i| {
        (img.data()[i] + normal.sample(rng)).clamp(0.0, 1.0)
    }))
}

/// Blur training range per scale.
pub fn train_sigma_range(scale: usize) -> Result<(f64, f64)> {
    match scale {
        2 => Ok((0.2, 2.0)),
        3 => Ok((0.2, 3.0)),
        4 => Ok((0.2, 4.0)),
        _ => Err(Error::Config(format!("scale must be 2, 3 or 4, got {scale}"))),
    }
}

/// Eight evenly spaced test sigmas, endpoints included.
pub fn test_sigmas(scale: usize) -> Result<[f64; 8]> {
    let (lo, hi) = match scale {
        2 => (0.80, 1.60),
        3 => (1.35, 2.40),
        4 => (1.8, 3.2),
        _ => return Err(Error::Config(format!("scale must be 2, 3 or 4, got {scale}"))),
    };
    Ok(std::array::from_fn(|i| lo + (hi - lo) * i as f64 / 7.0))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DegradationSpec {
    pub scale: usize,
    pub sigma_range: (f64, f64),
    /// On the 0–255 scale.
    pub noise_sigma: f64,
    /// 1 or 2.
    pub order: usize,
    pub kernel_size: usize,
}

impl DegradationSpec {
    /// Training defaults for `scale`: its sigma range, no noise, first order.
    pub fn train(scale: usize) -> Result<Self> {
        Ok(Self {
            scale,
            sigma_range: train_sigma_range(scale)?,
            noise_sigma: 0.0,
            order: 1,
            kernel_size: DEFAULT_KERNEL_SIZE,
        })
    }

    /// A spec whose blur is pinned at `sigma`.
    pub fn fixed(scale: usize, sigma: f64) -> Self {
        Self {
            scale,
            sigma_range: (sigma, sigma),
            noise_sigma: 0.0,
            order: 1,
            kernel_size: DEFAULT_KERNEL_SIZE,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.sigma_range;
        if !(lo > 0.0 && lo <= hi) {
            return Err(Error::Config(format!("bad sigma range [{lo}, {hi}]")));
        }
        if self.scale == 0 || self.scale > 4 {
            return Err(Error::Config(format!("scale must be 1 to 4, got {}", self.scale)));
        }
        if !(self.noise_sigma >= 0.0) {
            return Err(Error::Config(format!("noise sigma {} is negative", self.noise_sigma)));
        }
        if self.order != 1 && self.order != 2 {
            return Err(Error::Config(format!("degradation order must be 1 or 2, got {}", self.order)));
        }
        Ok(())
    }

    fn sample_sigma<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let (lo, hi) = self.sigma_range;
        if lo == hi {
            lo
        } else {
            rng.random_range(lo..=hi)
        }
    }
}

/// `clamp(((hr ⊗ kernel)↓s) + noise)`; the second order repeats blur and
/// noise at the low resolution with fresh samples.
pub fn degrade<R: Rng + ?Sized>(hr: &Tensor, spec: &DegradationSpec, rng: &mut R) -> Result<Tensor> {
    spec.validate()?;
    let (_, h, w) = hr.dims3()?;
    if h % spec.scale != 0 || w % spec.scale != 0 {
        return Err(Error::Size(format!("{h}x{w} is not divisible by scale {}", spec.scale)));
    }
    let k = gaussian_kernel(spec.sample_sigma(rng), spec.kernel_size)?;
    let mut img = clamp_unit(&blur(hr, &k)?);
    if spec.scale > 1 {
        img = clamp_unit(&bicubic_downsample(&img, spec.scale)?);
    }
    img = add_noise(&img, spec.noise_sigma, rng)?;
    if spec.order == 2 {
        let k = gaussian_kernel(spec.sample_sigma(rng), spec.kernel_size)?;
        img = clamp_unit(&blur(&img, &k)?);
        img = add_noise(&img, spec.noise_sigma, rng)?;
    }
    Ok(img)
}
