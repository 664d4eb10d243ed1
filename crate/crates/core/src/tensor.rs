//! Dense row-major `f64` tensors and the `TNSR` binary format.

use std::io::{Read, Write};

use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"TNSR";

/// Dense n-dimensional array of `f64`, row-major.
///
/// Every dimension is at least one and `data.len()` equals the product of
/// the shape. Feature maps use the `(C, H, W)` layout; attention math views
/// them as an `(N, d)` matrix with `N = H * W` and `d = C`.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        check_shape(shape)?;
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::InvalidTensor(format!(
                "shape {shape:?} needs {numel} elements, got {}",
                data.len()
            )));
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    /// Panics on an invalid shape; for internal construction from shapes
    /// that have already been validated.
    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<f64>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Self { shape, data }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        check_shape(shape).expect("invalid shape");
        Self {
            shape: shape.to_vec(),
            data: vec![value; shape.iter().product()],
        }
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> f64) -> Self {
        check_shape(shape).expect("invalid shape");
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: (0..n).map(&mut f).collect(),
        }
    }

    pub fn scalar(value: f64) -> Self {
        Self::from_parts(vec![1], vec![value])
    }

    pub fn identity(n: usize) -> Self {
        Self::from_fn(&[n, n], |i| if i / n == i % n { 1.0 } else { 0.0 })
    }

    /// 2-D tensor from nested rows.
    pub fn from_rows(rows: &[&[f64]]) -> Result<Self> {
        let m = rows.len();
        let n = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != n) {
            return Err(Error::InvalidTensor("ragged rows".into()));
        }
        Self::new(&[m, n], rows.iter().flat_map(|r| r.iter().copied()).collect())
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// Rows and columns of a rank-2 tensor.
    pub fn dims2(&self) -> Result<(usize, usize)> {
        match self.shape[..] {
            [m, n] => Ok((m, n)),
            _ => Err(Error::InvalidTensor(format!(
                "expected a matrix, got shape {:?}",
                self.shape
            ))),
        }
    }

    /// Channels, height and width of a rank-3 feature map.
    pub fn dims3(&self) -> Result<(usize, usize, usize)> {
        match self.shape[..] {
            [c, h, w] => Ok((c, h, w)),
            _ => Err(Error::InvalidTensor(format!(
                "expected a (C, H, W) feature map, got shape {:?}",
                self.shape
            ))),
        }
    }

    pub fn at2(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.shape[1] + j]
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        check_shape(shape)?;
        if shape.iter().product::<usize>() != self.data.len() {
            return Err(Error::shape("reshape", &self.shape, shape));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self::from_parts(self.shape.clone(), self.data.iter().map(|&v| f(v)).collect())
    }

    pub fn zip_map(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        if self.shape != other.shape {
            return Err(Error::shape("elementwise", &self.shape, &other.shape));
        }
        Ok(Self::from_parts(
            self.shape.clone(),
            self.data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        ))
    }

    pub fn add(&self, other: &Tensor) -> Result<Self> {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Self> {
        self.zip_map(other, |a, b| a - b)
    }

    /// Multiplies every element by `c`. Scaling by exactly zero yields
    /// `+0.0` everywhere, never `-0.0`.
    pub fn scale(&self, c: f64) -> Self {
        if c == 0.0 {
            return Self::zeros(&self.shape);
        }
        self.map(|v| v * c)
    }

    pub fn add_assign(&mut self, other: &Tensor) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::shape("add_assign", &self.shape, &other.shape));
        }
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn mean(&self) -> f64 {
        self.sum() / self.data.len() as f64
    }

    pub fn frobenius(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// `||self - other||_F / max(||other||_F, tiny)`.
    pub fn rel_frobenius_err(&self, reference: &Tensor) -> Result<f64> {
        let diff = self.sub(reference)?.frobenius();
        let norm = reference.frobenius();
        Ok(if norm > 0.0 { diff / norm } else { diff })
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Transpose of a rank-2 tensor.
    pub fn transpose(&self) -> Result<Self> {
        let (m, n) = self.dims2()?;
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = self.data[i * n + j];
            }
        }
        Ok(Self::from_parts(vec![n, m], out))
    }

    pub fn write_tnsr<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&(self.shape.len() as u32).to_le_bytes())?;
        for &d in &self.shape {
            let d = u32::try_from(d)
                .map_err(|_| Error::Format(format!("dimension {d} exceeds u32")))?;
            w.write_all(&d.to_le_bytes())?;
        }
        let mut buf = Vec::with_capacity(self.data.len() * 8);
        for v in &self.data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)?;
        Ok(())
    }

    pub fn read_tnsr<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Format(format!("bad magic {magic:?}")));
        }
        let rank = read_u32(&mut r)? as usize;
        if rank == 0 || rank > 16 {
            return Err(Error::Format(format!("unsupported rank {rank}")));
        }
        let shape = (0..rank)
            .map(|_| read_u32(&mut r).map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        check_shape(&shape).map_err(|e| Error::Format(e.to_string()))?;
        let n: usize = shape.iter().product();
        let mut bytes = vec![0u8; n * 8];
        r.read_exact(&mut bytes)?;
        let data = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok(Self { shape, data })
    }

    pub fn to_tnsr_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.write_tnsr(&mut out).expect("writing to a Vec cannot fail");
        out
    }
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn check_shape(shape: &[usize]) -> Result<()> {
    if shape.is_empty() {
        return Err(Error::InvalidTensor("rank-0 tensors are not supported".into()));
    }
    if shape.contains(&0) {
        return Err(Error::InvalidTensor(format!(
            "shape {shape:?} has a zero dimension"
        )));
    }
    Ok(())
}
