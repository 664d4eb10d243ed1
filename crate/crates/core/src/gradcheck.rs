//! Finite-difference verification of the tape's backward passes.

use crate::error::{Error, Result};
use crate::graph::{Graph, OpKind, Var};
use crate::param::{ParamId, ParamStore};

pub const DEFAULT_EPS: f64 = 1e-6;

/// Options for [`grad_check_with`].
#[derive(Clone, Copy, Debug)]
pub struct GradCheckOptions {
    pub eps: f64,
    /// Upper bound on checked coordinates; larger parameter sets are
    /// subsampled with a fixed stride so every tensor is still visited.
    pub max_coords: Option<usize>,
    /// Corrupts the backward of one op kind (used to prove the check bites).
    pub corrupt: Option<OpKind>,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            eps: DEFAULT_EPS,
            max_coords: None,
            corrupt: None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub coords: usize,
    /// `(parameter name, flat index)` of the worst coordinate.
    pub worst: Option<(String, usize)>,
}

fn eval<F>(f: &F, store: &ParamStore) -> Result<f64>
where
    F: Fn(&mut Graph, &ParamStore) -> Result<Var>,
{
    let mut g = Graph::new();
    let out = f(&mut g, store)?;
    let v = g.value(out);
    if v.len() != 1 {
        return Err(Error::shape("grad_check", v.shape(), &[1]));
    }
    Ok(v.data()[0])
}

/// Compares the analytic gradient of the scalar built by `f` against central
/// differences with the default step. Returns the maximum of
/// `|analytic − numeric| / max(1, |numeric|)`.
pub fn grad_check<F>(store: &mut ParamStore, params: &[ParamId], f: F) -> Result<f64>
where
    F: Fn(&mut Graph, &ParamStore) -> Result<Var>,
{
    grad_check_with(store, params, f, GradCheckOptions::default()).map(|r| r.max_rel_err)
}

pub fn grad_check_with<F>(
    store: &mut ParamStore,
    params: &[ParamId],
    f: F,
    opts: GradCheckOptions,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &ParamStore) -> Result<Var>,
{
    if opts.eps <= 0.0 || !opts.eps.is_finite() {
        return Err(Error::Config(format!("gradient check step {} must be positive", opts.eps)));
    }
    let a = eval(&f, store)?;
    let b = eval(&f, store)?;
    if a.to_bits() != b.to_bits() {
        return Err(Error::Determinism(a, b));
    }

    let mut g = match opts.corrupt {
        Some(kind) => Graph::with_corrupted_backward(kind),
        None => Graph::new(),
    };
    let out = f(&mut g, store)?;
    let grads = g.backward(out)?;
    let analytic: Vec<Vec<f64>> = params
        .iter()
        .map(|&id| {
            grads
                .params()
                .find(|(pid, _)| *pid == id)
                .map(|(_, t)| t.data().to_vec())
                .unwrap_or_else(|| vec![0.0; store.value(id).len()])
        })
        .collect();

    let total: usize = params.iter().map(|&id| store.value(id).len()).sum();
    let stride = match opts.max_coords {
        Some(m) if m > 0 && total > m => total.div_ceil(m),
        _ => 1,
    };

    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        coords: 0,
        worst: None,
    };
    let mut flat = 0usize;
    for (pi, &id) in params.iter().enumerate() {
        let n = store.value(id).len();
        // offset keeps short tensors from being skipped entirely
        let first = if n < stride { 0 } else { (stride - flat % stride) % stride };
        let mut i = first;
        while i < n {
            let orig = store.value(id).data()[i];
            store.get_mut(id).value.data_mut()[i] = orig + opts.eps;
            let plus = eval(&f, store);
            store.get_mut(id).value.data_mut()[i] = orig - opts.eps;
            let minus = eval(&f, store);
            store.get_mut(id).value.data_mut()[i] = orig;
            let numeric = (plus? - minus?) / (2.0 * opts.eps);
            let err = (analytic[pi][i] - numeric).abs() / numeric.abs().max(1.0);
            report.coords += 1;
            if err > report.max_rel_err || report.worst.is_none() {
                report.max_rel_err = report.max_rel_err.max(err);
                report.worst = Some((store.get(id).name.clone(), i));
            }
            i += stride;
        }
        flat += n;
    }
    Ok(report)
}
