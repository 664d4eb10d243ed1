//! Image quality metrics on `[0,1]`-scaled `(3,H,W)` images.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_C1: f64 = 1e-4;
pub const SSIM_C2: f64 = 9e-4;

pub fn mse(a: &Tensor, b: &Tensor) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(Error::shape("mse", a.shape(), b.shape()));
    }
    if a.is_empty() {
        return Err(Error::EmptyInput);
    }
    let s: f64 = a.data().iter().zip(b.data()).map(|(x, y)| (x - y) * (x - y)).sum();
    Ok(s / a.len() as f64)
}

/// `10·log10(1/MSE)`; identical images give `+∞`.
pub fn psnr(a: &Tensor, b: &Tensor) -> Result<f64> {
    let m = mse(a, b)?;
    Ok(if m == 0.0 { f64::INFINITY } else { -10.0 * m.log10() })
}

/// BT.601 luma of a 3-channel image, as an `H×W` tensor.
pub fn luma(img: &Tensor) -> Result<Tensor> {
    let (c, h, w) = img.dims3()?;
    if c != 3 {
        return Err(Error::shape("luma", img.shape(), &[3, h, w]));
    }
    let d = img.data();
    let n = h * w;
    Ok(Tensor::from_fn(&[h, w], |i| {
        0.299 * d[i] + 0.587 * d[n + i] + 0.114 * d[2 * n + i]
    }))
}

fn gaussian_window() -> Vec<f64> {
    let r = (SSIM_WINDOW / 2) as f64;
    let g: Vec<f64> = (0..SSIM_WINDOW)
        .map(|i| (-((i as f64 - r).powi(2)) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp())
        .collect();
    let s: f64 = g.iter().sum();
    let g: Vec<f64> = g.iter().map(|v| v / s).collect();
    (0..SSIM_WINDOW * SSIM_WINDOW)
        .map(|i| g[i / SSIM_WINDOW] * g[i % SSIM_WINDOW])
        .collect()
}

/// Mean structural similarity of the luma channels, over every position
/// where the 11×11 window fits.
pub fn ssim(a: &Tensor, b: &Tensor) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(Error::shape("ssim", a.shape(), b.shape()));
    }
    let (_, h, w) = a.dims3()?;
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::Size(format!("ssim needs at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {h}x{w}")));
    }
    let (ya, yb) = (luma(a)?, luma(b)?);
    let (pa, pb) = (ya.data(), yb.data());
    let win = gaussian_window();
    let k = SSIM_WINDOW;
    let (oh, ow) = (h - k + 1, w - k + 1);
    let mut total = 0.0;
    for y in 0..oh {
        for x in 0..ow {
            let (mut ma, mut mb) = (0.0, 0.0);
            for i in 0..k {
                for j in 0..k {
                    let wv = win[i * k + j];
                    let p = (y + i) * w + x + j;
                    ma += wv * pa[p];
                    mb += wv * pb[p];
                }
            }
            // central moments, so that a == b gives identical var and cov
            let (mut va, mut vb, mut cov) = (0.0, 0.0, 0.0);
            for i in 0..k {
                for j in 0..k {
                    let wv = win[i * k + j];
                    let p = (y + i) * w + x + j;
                    let (da, db) = (pa[p] - ma, pb[p] - mb);
                    va += wv * da * da;
                    vb += wv * db * db;
                    cov += wv * da * db;
                }
            }
            total += ((2.0 * ma * mb + SSIM_C1) * (2.0 * cov + SSIM_C2))
                / ((ma * ma + mb * mb + SSIM_C1) * (va + vb + SSIM_C2));
        }
    }
    Ok(total / (oh * ow) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{seeded, uniform_tensor};

    #[test]
    fn constant_offset_closed_form() {
        let a = Tensor::full(&[3, 4, 4], 0.25);
        let b = a.map(|v| v + 16.0 / 255.0);
        let p = psnr(&a, &b).unwrap();
        assert!((p - 20.0 * (255.0f64 / 16.0).log10()).abs() < 1e-9);
        assert!((p - 24.0484).abs() < 1e-3);
    }

    #[test]
    fn identical_images() {
        let a = uniform_tensor(&mut seeded(1), &[3, 12, 13], 0.5).map(|v| v + 0.5);
        assert_eq!(psnr(&a, &a).unwrap(), f64::INFINITY);
        assert_eq!(ssim(&a, &a).unwrap(), 1.0);
    }

    #[test]
    fn small_image_rejected() {
        let a = Tensor::zeros(&[3, 10, 20]);
        assert!(matches!(ssim(&a, &a), Err(Error::Size(_))));
    }
}
