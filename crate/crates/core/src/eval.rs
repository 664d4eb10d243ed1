//! PSNR/SSIM evaluation of a model against the bicubic baseline.

use std::io::Write;

use crate::degrade::{bicubic_upsample, degrade, DegradationSpec};
use crate::error::Result;
use crate::metrics::{psnr, ssim};
use crate::model::Model;
use crate::param::ParamStore;
use crate::rng::{item_seed, seeded};
use crate::tensor::Tensor;

/// Prefix marking bicubic baseline rows.
pub const BASELINE: &str = "bicubic:";

#[derive(Clone, Debug, PartialEq)]
pub struct EvalRow {
    pub image: String,
    pub sigma: f64,
    pub psnr: f64,
    pub ssim: f64,
}

/// Top-left crop to a multiple of `s`.
pub fn crop_to_multiple(img: &Tensor, s: usize) -> Result<Tensor> {
    let (c, h, w) = img.dims3()?;
    let (h2, w2) = (h - h % s, w - w % s);
    if (h2, w2) == (h, w) {
        return Ok(img.clone());
    }
    Ok(Tensor::from_fn(&[c, h2, w2], |i| {
        let (ch, r) = (i / (h2 * w2), i % (h2 * w2));
        img.data()[(ch * h + r / w2) * w + r % w2]
    }))
}

/// For every image and blur sigma: degrade, super-resolve, score. Each
/// model row is followed by its bicubic baseline row; per-sigma and overall
/// means close the table.
pub fn evaluate(
    model: &Model,
    store: &ParamStore,
    images: &[(String, Tensor)],
    sigmas: &[f64],
    noise_sigma: f64,
    seed: u64,
) -> Result<Vec<EvalRow>> {
    let s = model.scale();
    let mut rows = Vec::new();
    for (ii, (name, hr)) in images.iter().enumerate() {
        let hr = crop_to_multiple(hr, s)?;
        for (si, &sigma) in sigmas.iter().enumerate() {
            let spec = DegradationSpec {
                noise_sigma,
                ..DegradationSpec::fixed(s, sigma)
            };
            let mut rng = seeded(item_seed(seed, (ii * sigmas.len() + si) as u64));
            let lr = degrade(&hr, &spec, &mut rng)?;
            let sr = model.super_resolve(store, &lr)?.map(|v| v.clamp(0.0, 1.0));
            let base = bicubic_upsample(&lr, s)?.map(|v| v.clamp(0.0, 1.0));
            rows.push(EvalRow {
                image: name.clone(),
                sigma,
                psnr: psnr(&sr, &hr)?,
                ssim: ssim(&sr, &hr)?,
            });
            rows.push(EvalRow {
                image: format!("{BASELINE}{name}"),
                sigma,
                psnr: psnr(&base, &hr)?,
                ssim: ssim(&base, &hr)?,
            });
        }
    }
    let mut means = Vec::new();
    for baseline in [false, true] {
        let pick = |r: &&EvalRow| r.image.starts_with(BASELINE) == baseline;
        let label = if baseline { format!("{BASELINE}mean") } else { "mean".to_string() };
        for &sigma in sigmas {
            let sel: Vec<&EvalRow> = rows.iter().filter(pick).filter(|r| r.sigma == sigma).collect();
            means.push(mean_row(&label, sigma, &sel));
        }
        let sel: Vec<&EvalRow> = rows.iter().filter(pick).collect();
        means.push(mean_row(&label, f64::NAN, &sel));
    }
    rows.extend(means);
    Ok(rows)
}

fn mean_row(label: &str, sigma: f64, sel: &[&EvalRow]) -> EvalRow {
    let n = sel.len().max(1) as f64;
    EvalRow {
        image: label.to_string(),
        sigma,
        psnr: sel.iter().map(|r| r.psnr).sum::<f64>() / n,
        ssim: sel.iter().map(|r| r.ssim).sum::<f64>() / n,
    }
}

/// Overall `(model, baseline)` mean PSNR from an [`evaluate`] table.
pub fn mean_psnr(rows: &[EvalRow]) -> (f64, f64) {
    let find = |label: &str| {
        rows.iter()
            .find(|r| r.image == label && r.sigma.is_nan())
            .map_or(f64::NAN, |r| r.psnr)
    };
    (find("mean"), find(&format!("{BASELINE}mean")))
}

/// `image,sigma,psnr,ssim`; the overall means print `all` as their sigma.
pub fn write_eval_csv<W: Write>(mut w: W, rows: &[EvalRow]) -> Result<()> {
    writeln!(w, "image,sigma,psnr,ssim")?;
    for r in rows {
        let sigma = if r.sigma.is_nan() { "all".to_string() } else { format!("{:.4}", r.sigma) };
        let p = if r.psnr.is_infinite() { "inf".to_string() } else { format!("{:.6}", r.psnr) };
        writeln!(w, "{},{},{},{:.6}", r.image, sigma, p, r.ssim)?;
    }
    Ok(())
}
