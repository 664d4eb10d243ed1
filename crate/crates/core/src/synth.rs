//! Procedural HR images for toy corpora: smooth backgrounds overlaid with
//! hard-edged shapes and stripes, quantised to 8 bits.

use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;

use crate::error::Result;
use crate::image::{quantize, read_ppm, write_ppm};
use crate::rng::{item_seed, seeded};
use crate::tensor::Tensor;

fn colour<R: Rng + ?Sized>(rng: &mut R) -> [f64; 3] {
    std::array::from_fn(|_| rng.random_range(0.05..0.95))
}

/// One `(3,h,w)` image determined entirely by `seed`.
pub fn generate_image(seed: u64, h: usize, w: usize) -> Tensor {
    let mut rng = seeded(seed);
    let (c0, c1) = (colour(&mut rng), colour(&mut rng));
    let angle: f64 = rng.random_range(0.0..std::f64::consts::TAU);
    let (ca, sa) = (angle.cos(), angle.sin());
    let n = h * w;
    let mut img = vec![0.0; 3 * n];
    for y in 0..h {
        for x in 0..w {
            let t = ((x as f64 / w as f64 - 0.5) * ca + (y as f64 / h as f64 - 0.5) * sa + 0.5).clamp(0.0, 1.0);
            for ch in 0..3 {
                img[ch * n + y * w + x] = c0[ch] * (1.0 - t) + c1[ch] * t;
            }
        }
    }
    let shapes = rng.random_range(3..7);
    for _ in 0..shapes {
        let col = colour(&mut rng);
        let kind = rng.random_range(0..3);
        let cy = rng.random_range(0.0..h as f64);
        let cx = rng.random_range(0.0..w as f64);
        let r = rng.random_range(2.0..(h.min(w) as f64 / 2.5).max(2.5));
        let period = rng.random_range(2.0..6.0);
        let dir: f64 = rng.random_range(0.0..std::f64::consts::PI);
        for y in 0..h {
            for x in 0..w {
                let (dy, dx) = (y as f64 - cy, x as f64 - cx);
                let inside = match kind {
                    0 => dy * dy + dx * dx <= r * r,
                    1 => dy.abs() <= r * 0.8 && dx.abs() <= r,
                    _ => {
                        let u = dx * dir.cos() + dy * dir.sin();
                        dy * dy + dx * dx <= 2.0 * r * r && (u / period).rem_euclid(2.0) < 1.0
                    }
                };
                if inside {
                    for ch in 0..3 {
                        img[ch * n + y * w + x] = col[ch];
                    }
                }
            }
        }
    }
    Tensor::from_fn(&[3, h, w], |i| quantize(img[i]) as f64 / 255.0)
}

/// `count` images with per-item seeds derived from `seed`.
pub fn generate_corpus(seed: u64, count: usize, size: usize) -> Vec<Tensor> {
    (0..count)
        .map(|i| generate_image(item_seed(seed, i as u64), size, size))
        .collect()
}

/// Writes `dir/hr/img_NNNN.ppm`.
pub fn write_corpus(dir: &Path, seed: u64, count: usize, size: usize) -> Result<Vec<PathBuf>> {
    let hr = dir.join("hr");
    fs::create_dir_all(&hr)?;
    generate_corpus(seed, count, size)
        .iter()
        .enumerate()
        .map(|(i, img)| {
            let p = hr.join(format!("img_{i:04}.ppm"));
            write_ppm(&p, img)?;
            Ok(p)
        })
        .collect()
}

/// Reads every `*.ppm` of `dir` in file-name order.
pub fn read_folder(dir: &Path) -> Result<Vec<(String, Tensor)>> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "ppm"))
        .collect();
    paths.sort();
    paths
        .into_iter()
        .map(|p| {
            let name = p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            Ok((name, read_ppm(&p)?))
        })
        .collect()
}
