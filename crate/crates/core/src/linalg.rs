//! Matrix kernels: products, row softmax, symmetric eigendecomposition and
//! singular values.

use crate::error::{Error, Result};
use crate::flops;
use crate::par;
use crate::tensor::Tensor;

/// `a (m×p) · b (p×n)`. Records `m·n·p` multiply-adds.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, p) = a.dims2()?;
    let (p2, n) = b.dims2()?;
    if p != p2 {
        return Err(Error::shape("matmul", a.shape(), b.shape()));
    }
    flops::record((m * n * p) as u64);
    let mut out = vec![0.0; m * n];
    let (ad, bd) = (a.data(), b.data());
    par::for_each_chunk(&mut out, n, m * n * p, |i, row| {
        let arow = &ad[i * p..(i + 1) * p];
        for (k, &aik) in arow.iter().enumerate() {
            if aik == 0.0 {
                continue;
            }
            let brow = &bd[k * n..(k + 1) * n];
            for (o, &bkj) in row.iter_mut().zip(brow) {
                *o += aik * bkj;
            }
        }
    });
    Ok(Tensor::from_parts(vec![m, n], out))
}

/// Vector-Jacobian product of [`matmul`]: returns `(dC·Bᵀ, Aᵀ·dC)`.
pub fn matmul_backward(a: &Tensor, b: &Tensor, grad: &Tensor) -> Result<(Tensor, Tensor)> {
    let da = matmul(grad, &b.transpose()?)?;
    let db = matmul(&a.transpose()?, grad)?;
    Ok((da, db))
}

/// Numerically stable softmax along each row. Records one multiply-add per
/// element.
pub fn row_softmax(a: &Tensor) -> Result<Tensor> {
    let (m, n) = a.dims2()?;
    if !a.all_finite() {
        return Err(Error::Numeric("row_softmax input is not finite".into()));
    }
    flops::record((m * n) as u64);
    let mut out = a.data().to_vec();
    par::for_each_chunk(&mut out, n, m * n * 8, |_, row| {
        let max = row.iter().fold(f64::NEG_INFINITY, |x, &v| x.max(v));
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    });
    Ok(Tensor::from_parts(vec![m, n], out))
}

/// Softmax VJP given the forward output `y`: `y ⊙ (g − rowsum(g ⊙ y))`.
pub fn row_softmax_backward(y: &Tensor, grad: &Tensor) -> Result<Tensor> {
    let (m, n) = y.dims2()?;
    if grad.shape() != y.shape() {
        return Err(Error::shape("row_softmax_backward", y.shape(), grad.shape()));
    }
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let yr = &y.data()[i * n..(i + 1) * n];
        let gr = &grad.data()[i * n..(i + 1) * n];
        let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
        for j in 0..n {
            out[i * n + j] = yr[j] * (gr[j] - dot);
        }
    }
    Ok(Tensor::from_parts(vec![m, n], out))
}

/// Eigenpairs of a symmetric matrix: `s = z · diag(values) · zᵀ`.
#[derive(Clone, Debug)]
pub struct SymmetricEigen {
    /// Orthogonal matrix whose columns are eigenvectors.
    pub z: Tensor,
    /// Eigenvalues, sorted descending.
    pub values: Vec<f64>,
}

impl SymmetricEigen {
    pub fn reconstruct(&self) -> Tensor {
        let d = self.values.len();
        let zd = self.z.data();
        Tensor::from_fn(&[d, d], |idx| {
            let (i, j) = (idx / d, idx % d);
            (0..d).map(|k| zd[i * d + k] * self.values[k] * zd[j * d + k]).sum()
        })
    }
}

const MAX_SWEEPS: usize = 100;
const SYMMETRY_TOL: f64 = 1e-9;

/// Cyclic Jacobi eigendecomposition of a symmetric matrix.
///
/// Eigenvalues come back sorted descending; equal eigenvalues keep the order
/// in which the rotations left them.
pub fn symmetric_eigendecompose(s: &Tensor) -> Result<SymmetricEigen> {
    let (d, d2) = s.dims2()?;
    if d != d2 {
        return Err(Error::shape("symmetric_eigendecompose", s.shape(), &[d, d]));
    }
    let mut a = s.data().to_vec();
    let mut asym = 0.0f64;
    for i in 0..d {
        for j in 0..i {
            asym = asym.max((a[i * d + j] - a[j * d + i]).abs());
        }
    }
    if asym > SYMMETRY_TOL {
        return Err(Error::Symmetry(asym));
    }
    // work on the exactly symmetrized matrix
    for i in 0..d {
        for j in 0..i {
            let m = 0.5 * (a[i * d + j] + a[j * d + i]);
            a[i * d + j] = m;
            a[j * d + i] = m;
        }
    }
    let mut v = Tensor::identity(d).into_data();
    let norm: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let tol = f64::EPSILON * norm.max(f64::MIN_POSITIVE);

    let mut converged = false;
    for _ in 0..MAX_SWEEPS {
        let off: f64 = (0..d)
            .flat_map(|i| (0..d).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[i * d + j] * a[i * d + j])
            .sum::<f64>()
            .sqrt();
        if off <= tol {
            converged = true;
            break;
        }
        for p in 0..d {
            for q in p + 1..d {
                let apq = a[p * d + q];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[q * d + q] - a[p * d + p]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let sn = t * c;
                // A <- Jᵀ A J on rows/cols p, q
                for k in 0..d {
                    let akp = a[k * d + p];
                    let akq = a[k * d + q];
                    a[k * d + p] = c * akp - sn * akq;
                    a[k * d + q] = sn * akp + c * akq;
                }
                for k in 0..d {
                    let apk = a[p * d + k];
                    let aqk = a[q * d + k];
                    a[p * d + k] = c * apk - sn * aqk;
                    a[q * d + k] = sn * apk + c * aqk;
                }
                for k in 0..d {
                    let vkp = v[k * d + p];
                    let vkq = v[k * d + q];
                    v[k * d + p] = c * vkp - sn * vkq;
                    v[k * d + q] = sn * vkp + c * vkq;
                }
            }
        }
    }
    if !converged {
        return Err(Error::Convergence(MAX_SWEEPS));
    }

    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&i, &j| a[j * d + j].total_cmp(&a[i * d + i]));
    let values = order.iter().map(|&i| a[i * d + i]).collect();
    let z = Tensor::from_fn(&[d, d], |idx| v[(idx / d) * d + order[idx % d]]);
    Ok(SymmetricEigen { z, values })
}

/// Singular values of an `m×n` matrix by one-sided (Hestenes) Jacobi
/// rotations, sorted descending. Accurate to roughly `ε·σ_max` even for
/// rank-deficient inputs.
pub fn singular_values(a: &Tensor) -> Result<Vec<f64>> {
    let (m, n) = a.dims2()?;
    // columns as contiguous vectors
    let mut cols: Vec<Vec<f64>> = (0..n)
        .map(|j| (0..m).map(|i| a.at2(i, j)).collect())
        .collect();
    let dot = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(a, b)| a * b).sum::<f64>();
    let mut converged = false;
    for _ in 0..MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..n {
            for q in p + 1..n {
                let alpha = dot(&cols[p], &cols[p]);
                let beta = dot(&cols[q], &cols[q]);
                let gamma = dot(&cols[p], &cols[q]);
                if gamma == 0.0 || gamma.abs() <= f64::EPSILON * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                let (lo, hi) = cols.split_at_mut(q);
                for (x, y) in lo[p].iter_mut().zip(hi[0].iter_mut()) {
                    let (xp, yq) = (*x, *y);
                    *x = c * xp - s * yq;
                    *y = s * xp + c * yq;
                }
            }
        }
        if !rotated {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::Convergence(MAX_SWEEPS));
    }
    let mut sv: Vec<f64> = cols.iter().map(|c| dot(c, c).sqrt()).collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    Ok(sv)
}
