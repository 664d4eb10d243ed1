//! FLOP-instrumented kernel sweeps and log-log slope fitting.

use std::fmt;
use std::io::Write;
use std::str::FromStr;
use std::time::Instant;

use crate::attention::{
    exp_kernel_forward, nla_forward, stea_forward, taylor_attention_linear, QkvWeights, SteaConfig, SteaWeights,
    TaylorOrder,
};
use crate::conv::Builder;
use crate::error::{Error, Result};
use crate::flops;
use crate::graph::Graph;
use crate::mlfr::{mlfr_forward, MlfrVariant, MlfrWeights};
use crate::param::ParamStore;
use crate::rng::{seeded, uniform_tensor};
use crate::tensor::Tensor;

pub const CSV_HEADER: &str = "kernel,n,d,flops,wall_ns,seed";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Kernel {
    Nla,
    Exp,
    TaylorLinear,
    Stea,
    Mlfr,
}

impl Kernel {
    pub const ALL: [Kernel; 5] = [Kernel::Nla, Kernel::Exp, Kernel::TaylorLinear, Kernel::Stea, Kernel::Mlfr];

    pub fn name(self) -> &'static str {
        match self {
            Kernel::Nla => "nla",
            Kernel::Exp => "exp",
            Kernel::TaylorLinear => "taylor-linear",
            Kernel::Stea => "stea",
            Kernel::Mlfr => "mlfr",
        }
    }
}

impl fmt::Display for Kernel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Kernel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Kernel::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown kernel `{s}`")))
    }
}

/// One benchmark measurement.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BenchRecord {
    pub kernel: Kernel,
    pub n: usize,
    pub d: usize,
    pub flops: u64,
    pub wall_ns: u64,
    pub seed: u64,
}

impl BenchRecord {
    pub fn csv_row(&self) -> String {
        format!("{},{},{},{},{},{}", self.kernel, self.n, self.d, self.flops, self.wall_ns, self.seed)
    }
}

/// `(h, w)` with `h·w = n` and `h` the largest divisor not above `√n`.
pub fn spatial_dims(n: usize) -> (usize, usize) {
    let h = (1..=n.isqrt().max(1)).rev().find(|h| n % h == 0).unwrap_or(1);
    (h, n / h)
}

/// Parses `a..bxf` (geometric, inclusive) or a comma list.
pub fn parse_sweep(s: &str) -> Result<Vec<usize>> {
    let bad = || Error::Config(format!("bad sweep `{s}` (expected e.g. 256..4096x2 or 256,512)"));
    if let Some((range, factor)) = s.split_once('x') {
        let (a, b) = range.split_once("..").ok_or_else(bad)?;
        let (a, b, f): (usize, usize, usize) = (
            a.parse().map_err(|_| bad())?,
            b.parse().map_err(|_| bad())?,
            factor.parse().map_err(|_| bad())?,
        );
        if a == 0 || f < 2 || a > b {
            return Err(bad());
        }
        let mut v = vec![a];
        while let Some(next) = v.last().unwrap().checked_mul(f).filter(|&n| n <= b) {
            v.push(next);
        }
        Ok(v)
    } else {
        s.split(',')
            .map(|t| t.trim().parse().ok().filter(|&n: &usize| n > 0).ok_or_else(bad))
            .collect()
    }
}

/// Runs one seeded forward pass of `kernel` at `n` positions and `d`
/// channels. The FLOP count covers only the forward computation.
pub fn run_kernel(kernel: Kernel, n: usize, d: usize, seed: u64) -> Result<BenchRecord> {
    if n == 0 || d == 0 {
        return Err(Error::EmptyInput);
    }
    let mut rng = seeded(seed);
    let (h, w) = spatial_dims(n);
    let flat = || -> Result<(Tensor, QkvWeights)> {
        let mut rng = seeded(seed);
        let x = uniform_tensor(&mut rng, &[n, d], 0.5);
        Ok((x, QkvWeights::random(&mut rng, d)))
    };
    let k = n as f64;
    let start = Instant::now();
    let flops = match kernel {
        Kernel::Nla => {
            let (x, wq) = flat()?;
            flops::count(|| nla_forward(&x, &wq)).1
        }
        Kernel::Exp => {
            let (x, wq) = flat()?;
            let (r, f) = flops::count(|| exp_kernel_forward(&x, &wq, k));
            r?;
            f
        }
        Kernel::TaylorLinear => {
            let (x, wq) = flat()?;
            flops::count(|| taylor_attention_linear(&x, &wq, TaylorOrder::Second, k)).1
        }
        Kernel::Stea => {
            let mut store = ParamStore::new();
            let sw = SteaWeights::new(&mut Builder::new(&mut store, &mut rng), SteaConfig::new(d, n));
            let x = uniform_tensor(&mut rng, &[d, h, w], 0.5);
            let (r, f) = flops::count(|| {
                let mut g = Graph::new();
                let xv = g.input(x);
                stea_forward(&mut g, &store, xv, &sw).map(|_| ())
            });
            r?;
            f
        }
        Kernel::Mlfr => {
            let mut store = ParamStore::new();
            let mw = MlfrWeights::new(&mut Builder::new(&mut store, &mut rng), d, MlfrVariant::V3);
            let x = uniform_tensor(&mut rng, &[d, h, w], 0.5);
            let (r, f) = flops::count(|| {
                let mut g = Graph::new();
                let xv = g.input(x);
                mlfr_forward(&mut g, &store, xv, &mw).map(|_| ())
            });
            r?;
            f
        }
    };
    let wall_ns = (start.elapsed().as_nanos() as u64).max(1);
    Ok(BenchRecord {
        kernel,
        n,
        d,
        flops,
        wall_ns,
        seed,
    })
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn fit_slope(points: &[(f64, f64)]) -> Result<f64> {
    if points.len() < 2 {
        return Err(Error::Size("a slope needs at least two points".into()));
    }
    let lp: Vec<(f64, f64)> = points.iter().map(|&(x, y)| (x.ln(), y.ln())).collect();
    let m = lp.len() as f64;
    let mx = lp.iter().map(|p| p.0).sum::<f64>() / m;
    let my = lp.iter().map(|p| p.1).sum::<f64>() / m;
    let sxy: f64 = lp.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = lp.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::Size("all sweep points share one n".into()));
    }
    Ok(sxy / sxx)
}

/// FLOP slope of `kernel` over its records.
pub fn kernel_slope(records: &[BenchRecord], kernel: Kernel) -> Result<f64> {
    let pts: Vec<(f64, f64)> = records
        .iter()
        .filter(|r| r.kernel == kernel)
        .map(|r| (r.n as f64, r.flops as f64))
        .collect();
    fit_slope(&pts)
}

/// Runs every `(kernel, n)` pair in order.
pub fn sweep(kernels: &[Kernel], ns: &[usize], d: usize, seed: u64) -> Result<Vec<BenchRecord>> {
    let mut out = Vec::with_capacity(kernels.len() * ns.len());
    for &k in kernels {
        for &n in ns {
            out.push(run_kernel(k, n, d, seed)?);
        }
    }
    Ok(out)
}

/// CSV rows, then `# fit` comment lines per kernel when `fit` is set.
pub fn write_csv<W: Write>(mut w: W, records: &[BenchRecord], kernels: &[Kernel], fit: bool) -> Result<()> {
    writeln!(w, "{CSV_HEADER}")?;
    for r in records {
        writeln!(w, "{}", r.csv_row())?;
    }
    if fit {
        for &k in kernels {
            writeln!(w, "# fit {k} slope={:.4}", kernel_slope(records, k)?)?;
        }
    }
    Ok(())
}
