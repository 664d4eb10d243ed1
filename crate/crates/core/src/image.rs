//! Binary PPM (P6, 8-bit) I/O for `(3,H,W)` tensors in `[0,1]`.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// 8-bit code of a unit-range value.
pub fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn encode_ppm(img: &Tensor) -> Result<Vec<u8>> {
    let (c, h, w) = img.dims3()?;
    if c != 3 {
        return Err(Error::shape("encode_ppm", img.shape(), &[3, h, w]));
    }
    let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
    let d = img.data();
    out.reserve(3 * h * w);
    for p in 0..h * w {
        for ch in 0..3 {
            out.push(quantize(d[ch * h * w + p]));
        }
    }
    Ok(out)
}

fn header_fields(bytes: &[u8]) -> Result<([usize; 3], usize)> {
    let mut fields = [0usize; 3];
    let mut pos = 2;
    for f in fields.iter_mut() {
        loop {
            match bytes.get(pos) {
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                _ => break,
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        *f = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Format("malformed PPM header".into()))?;
    }
    // exactly one whitespace byte separates the header from the raster
    if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(Error::Format("malformed PPM header".into()));
    }
    Ok((fields, pos + 1))
}

pub fn decode_ppm(bytes: &[u8]) -> Result<Tensor> {
    if !bytes.starts_with(b"P6") {
        return Err(Error::Format("not a binary PPM (P6) file".into()));
    }
    let ([w, h, maxval], start) = header_fields(bytes)?;
    if maxval != 255 {
        return Err(Error::Format(format!("only 8-bit PPM is supported, maxval {maxval}")));
    }
    if w == 0 || h == 0 {
        return Err(Error::Format("PPM has zero size".into()));
    }
    let raster = bytes
        .get(start..start + 3 * w * h)
        .ok_or_else(|| Error::Format("truncated PPM raster".into()))?;
    let n = w * h;
    Tensor::new(
        &[3, h, w],
        (0..3 * n)
            .map(|i| raster[(i % n) * 3 + i / n] as f64 / 255.0)
            .collect(),
    )
}

pub fn read_ppm(path: &Path) -> Result<Tensor> {
    decode_ppm(&fs::read(path)?)
}

pub fn write_ppm(path: &Path, img: &Tensor) -> Result<()> {
    Ok(fs::write(path, encode_ppm(img)?)?)
}
