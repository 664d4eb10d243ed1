use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};

use stea_core::bench::{self, Kernel};
use stea_core::degrade::{degrade, test_sigmas, DegradationSpec};
use stea_core::gradcheck::GradCheckOptions;
use stea_core::graph::OpKind;
use stea_core::model::{load_checkpoint, save_checkpoint, Model};
use stea_core::rng::{item_seed, seeded};
use stea_core::{config, eval, image, par, suite, synth, train, Error};

const SEED_ENV: &str = "TAYLOR_ATTN_SEED";

#[derive(Parser)]
#[command(name = "stea", version, about = "Taylor-expanded attention kernels and blind super-resolution at desk scale")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sweep attention kernels over N and print FLOP/wall-time CSV.
    Bench(BenchArgs),
    /// Run the finite-difference gradient suite.
    Gradcheck(GradcheckArgs),
    /// Train a model from a `key = value` config file.
    Train(TrainArgs),
    /// Score a checkpoint against the bicubic baseline.
    Eval(EvalArgs),
    /// Super-resolve one image with a RealNet checkpoint and explicit knobs.
    Sr(SrArgs),
    /// Write a synthetic `hr/` + `lr/` corpus.
    MakeData(MakeDataArgs),
}

#[derive(Args)]
struct BenchArgs {
    /// Comma-separated kernels: nla, exp, taylor-linear, stea, mlfr.
    #[arg(long, value_delimiter = ',', required = true)]
    kernel: Vec<Kernel>,
    #[arg(long, default_value_t = 16)]
    d: usize,
    /// `start..endxfactor` or a comma list.
    #[arg(long, default_value = "256..4096x2")]
    n: String,
    /// Append the log-log FLOP slope per kernel.
    #[arg(long)]
    fit: bool,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long)]
    eps: Option<f64>,
    /// Corrupt one op's backward pass (exercises the failure path).
    #[arg(long, hide = true)]
    inject_fault: Option<String>,
}

#[derive(Args)]
struct TrainArgs {
    config: PathBuf,
    /// Overrides `data` from the config.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Overrides `out` from the config.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Folder of HR `*.ppm` (or a corpus root containing `hr/`).
    #[arg(long)]
    data: PathBuf,
    /// Blur sigmas; defaults to the eight test kernels for the scale.
    #[arg(long, value_delimiter = ',')]
    sigmas: Vec<f64>,
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
    #[arg(long)]
    seed: Option<u64>,
    /// CSV destination; standard output when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SrArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: PathBuf,
    /// Four denoising knobs.
    #[arg(long, value_delimiter = ',', required = true)]
    alpha: Vec<f64>,
    /// Four deblurring knobs.
    #[arg(long, value_delimiter = ',', required = true)]
    beta: Vec<f64>,
}

#[derive(Args)]
struct MakeDataArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 200)]
    count: usize,
    #[arg(long, default_value_t = 32)]
    size: usize,
    #[arg(long, default_value_t = 2)]
    scale: usize,
    #[arg(long)]
    seed: Option<u64>,
}

/// Failure classes mapped onto the exit-code contract.
enum Failure {
    Usage(anyhow::Error),
    Check(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        match e.downcast_ref::<Error>() {
            Some(Error::Config(_)) => Failure::Usage(e),
            _ => Failure::Check(e),
        }
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::Check(e.into())
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        anyhow::Error::from(e).into()
    }
}

fn resolve_seed(flag: Option<u64>) -> anyhow::Result<Option<u64>> {
    if flag.is_some() {
        return Ok(flag);
    }
    match std::env::var(SEED_ENV) {
        Ok(v) => Ok(Some(v.trim().parse().with_context(|| format!("{SEED_ENV}={v} is not an integer"))?)),
        Err(_) => Ok(None),
    }
}

fn cmd_bench(a: BenchArgs) -> Result<(), Failure> {
    let ns = bench::parse_sweep(&a.n)?;
    let seed = resolve_seed(a.seed)?.unwrap_or(0);
    let records = bench::sweep(&a.kernel, &ns, a.d, seed)?;
    let stdout = io::stdout();
    bench::write_csv(stdout.lock(), &records, &a.kernel, a.fit)?;
    Ok(())
}

fn fault_kind(name: &str) -> Option<OpKind> {
    Some(match name {
        "matmul" => OpKind::MatMul,
        "exp" => OpKind::Exp,
        "gelu" => OpKind::Gelu,
        "sigmoid" => OpKind::Sigmoid,
        "softmax" => OpKind::Softmax,
        "depthwise" => OpKind::Depthwise,
        "conv" => OpKind::Conv,
        "layer-norm" => OpKind::LayerNorm,
        "pixel-shuffle" => OpKind::PixelShuffle,
        _ => return None,
    })
}

fn cmd_gradcheck(a: GradcheckArgs) -> Result<(), Failure> {
    let mut opts = GradCheckOptions::default();
    if let Some(eps) = a.eps {
        opts.eps = eps;
    }
    if let Some(name) = &a.inject_fault {
        opts.corrupt = Some(fault_kind(name).ok_or_else(|| Failure::Usage(anyhow::anyhow!("unknown op `{name}`")))?);
    }
    let results = suite::run_suite(opts)?;
    println!("op,max_rel_err,coords,status");
    for r in &results {
        let status = if r.passed() { "ok" } else { "FAIL" };
        println!("{},{:.3e},{},{status}", r.name, r.report.max_rel_err, r.report.coords);
    }
    let failed: Vec<&str> = results.iter().filter(|r| !r.passed()).map(|r| r.name).collect();
    println!("# {} ops checked, tolerance {:e}", results.len(), suite::TOLERANCE);
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure::Check(anyhow::anyhow!("gradient check failed for: {}", failed.join(", "))))
    }
}

/// `dir/hr` when it exists, else `dir`.
fn hr_folder(dir: &Path) -> PathBuf {
    let hr = dir.join("hr");
    if hr.is_dir() {
        hr
    } else {
        dir.to_path_buf()
    }
}

fn cmd_train(a: TrainArgs) -> Result<(), Failure> {
    let text = fs::read_to_string(&a.config).with_context(|| format!("reading {}", a.config.display()))?;
    let has_seed = config::parse_pairs(&text)?.contains_key("seed");
    let mut cfg = config::load(&a.config)?;
    let seed = match a.seed {
        Some(s) => Some(s),
        None if has_seed => None,
        None => resolve_seed(None)?,
    };
    if let Some(s) = seed {
        cfg.model.seed = s;
        cfg.train.seed = s;
    }
    if let Some(n) = a.iters {
        cfg.train.iters = n;
    }
    let data = a
        .data
        .or(cfg.data.clone())
        .ok_or_else(|| Failure::Usage(anyhow::anyhow!("no dataset: set `data` in the config or pass --data")))?;
    let out = a.out.or(cfg.out.clone()).unwrap_or_else(|| PathBuf::from("run"));
    let folder = hr_folder(&data);
    let images: Vec<_> = synth::read_folder(&folder)
        .with_context(|| format!("reading dataset {}", folder.display()))?
        .into_iter()
        .map(|(_, t)| t)
        .collect();
    if images.is_empty() {
        return Err(Failure::Check(anyhow::anyhow!("no *.ppm images in {}", folder.display())));
    }

    let (model, mut store) = Model::build(&cfg.model)?;
    fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    let every = cfg.train.checkpoint_every;
    let log = train::train(&model, &mut store, &images, &cfg.degradation, &cfg.train, |e, s| {
        if every > 0 && e.iter % every == 0 {
            save_checkpoint(&out.join(format!("iter_{:06}", e.iter)), &cfg.model, s)?;
        }
        if e.iter % 100 == 0 || e.iter == 1 {
            eprintln!("iter {:>6}  loss {:.6}  lr {:.3e}", e.iter, e.loss, e.lr);
        }
        Ok(())
    })?;
    save_checkpoint(&out.join("final"), &cfg.model, &store)?;
    let f = File::create(out.join("loss.csv")).context("writing loss.csv")?;
    train::write_loss_csv(BufWriter::new(f), &log)?;
    eprintln!("wrote {}", out.display());
    Ok(())
}

fn cmd_eval(a: EvalArgs) -> Result<(), Failure> {
    let (cfg, model, store) =
        load_checkpoint(&a.checkpoint).with_context(|| format!("loading {}", a.checkpoint.display()))?;
    let images = synth::read_folder(&hr_folder(&a.data))?;
    if images.is_empty() {
        return Err(Failure::Check(anyhow::anyhow!("no *.ppm images in {}", a.data.display())));
    }
    let sigmas = if a.sigmas.is_empty() { test_sigmas(cfg.scale)?.to_vec() } else { a.sigmas };
    let seed = resolve_seed(a.seed)?.unwrap_or(0);
    let rows = eval::evaluate(&model, &store, &images, &sigmas, a.noise, seed)?;
    match a.out {
        Some(p) => eval::write_eval_csv(BufWriter::new(File::create(&p)?), &rows)?,
        None => eval::write_eval_csv(io::stdout().lock(), &rows)?,
    }
    let (m, b) = eval::mean_psnr(&rows);
    eprintln!("mean PSNR {m:.3} dB (bicubic {b:.3} dB)");
    Ok(())
}

fn knobs(name: &str, v: &[f64]) -> Result<[f64; 4], Failure> {
    <[f64; 4]>::try_from(v)
        .map_err(|_| Failure::Usage(anyhow::anyhow!("--{name} needs exactly 4 values, got {}", v.len())))
}

fn cmd_sr(a: SrArgs) -> Result<(), Failure> {
    let alpha = knobs("alpha", &a.alpha)?;
    let beta = knobs("beta", &a.beta)?;
    let (_, mut model, store) =
        load_checkpoint(&a.checkpoint).with_context(|| format!("loading {}", a.checkpoint.display()))?;
    model.set_knobs(alpha, beta)?;
    let lr = image::read_ppm(&a.input).with_context(|| format!("reading {}", a.input.display()))?;
    let sr = model.super_resolve(&store, &lr)?;
    image::write_ppm(&a.output, &sr)?;
    Ok(())
}

fn cmd_make_data(a: MakeDataArgs) -> Result<(), Failure> {
    let seed = resolve_seed(a.seed)?.unwrap_or(0);
    if a.size % a.scale != 0 {
        return Err(Failure::Usage(anyhow::anyhow!("--size {} is not divisible by --scale {}", a.size, a.scale)));
    }
    let spec = DegradationSpec::train(a.scale)?;
    let paths = synth::write_corpus(&a.out, seed, a.count, a.size)?;
    let lr_dir = a.out.join("lr");
    fs::create_dir_all(&lr_dir)?;
    let results = par::map_indexed(paths.len(), |i| -> stea_core::Result<()> {
        let hr = image::read_ppm(&paths[i])?;
        let lr = degrade(&hr, &spec, &mut seeded(item_seed(seed, i as u64)))?;
        image::write_ppm(&lr_dir.join(paths[i].file_name().expect("file name")), &lr)
    });
    results.into_iter().collect::<stea_core::Result<()>>()?;
    eprintln!("wrote {} pairs to {}", paths.len(), a.out.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Bench(a) => cmd_bench(a),
        Command::Gradcheck(a) => cmd_gradcheck(a),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Sr(a) => cmd_sr(a),
        Command::MakeData(a) => cmd_make_data(a),
    };
    let _ = io::stdout().flush();
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Check(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
        Err(Failure::Usage(e)) => {
            eprintln!("usage error: {e:#}");
            ExitCode::from(2)
        }
    }
}
