use std::path::Path;
use std::process::{Command, Output};

fn stea(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_stea"))
        .args(args)
        .env_remove("TAYLOR_ATTN_SEED")
        .output()
        .expect("spawn stea")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn bench_emits_csv_and_fit() {
    let o = stea(&["bench", "--kernel", "nla,taylor-linear", "--d", "4", "--n", "16..64x2", "--fit"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("kernel,n,d,flops,wall_ns,seed"));
    assert_eq!(text.lines().filter(|l| l.starts_with("nla,")).count(), 3);
    assert!(text.contains("# fit nla slope="));
    assert!(text.contains("# fit taylor-linear slope="));
}

#[test]
fn bench_flops_are_byte_stable() {
    let cols = |o: &Output| -> Vec<String> {
        stdout(o)
            .lines()
            .filter(|l| !l.starts_with('#'))
            .map(|l| {
                let f: Vec<&str> = l.split(',').collect();
                format!("{},{},{},{},{}", f[0], f[1], f[2], f[3], f[5])
            })
            .collect()
    };
    let a = stea(&["bench", "--kernel", "stea", "--d", "4", "--n", "16,32", "--seed", "3"]);
    let b = stea(&["bench", "--kernel", "stea", "--d", "4", "--n", "16,32", "--seed", "3"]);
    assert_eq!(cols(&a), cols(&b));
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(stea(&["bench", "--kernel", "softmax"]).status.code(), Some(2));
    assert_eq!(stea(&["bench", "--kernel", "nla", "--n", "9..3x2"]).status.code(), Some(2));
    assert_eq!(stea(&["frobnicate"]).status.code(), Some(2));
}

#[test]
fn seed_env_fallback() {
    let o = Command::new(env!("CARGO_BIN_EXE_stea"))
        .args(["bench", "--kernel", "exp", "--d", "2", "--n", "8"])
        .env("TAYLOR_ATTN_SEED", "41")
        .output()
        .unwrap();
    assert!(stdout(&o).lines().nth(1).unwrap().ends_with(",41"));
}

#[test]
fn gradcheck_passes_and_injected_fault_fails() {
    let ok = stea(&["gradcheck"]);
    assert_eq!(ok.status.code(), Some(0), "{}", stdout(&ok));
    let text = stdout(&ok);
    assert!(text.lines().filter(|l| l.ends_with(",ok")).count() >= 15);

    let bad = stea(&["gradcheck", "--inject-fault", "depthwise"]);
    assert_eq!(bad.status.code(), Some(1));
    let err = String::from_utf8_lossy(&bad.stderr);
    assert!(err.contains("depthwise_dilated"), "{err}");
}

fn write_config(dir: &Path, extra: &str) -> std::path::PathBuf {
    let p = dir.join("run.cfg");
    std::fs::write(
        &p,
        format!(
            "model = realnet\nscale = 2\nchannels = 4\nblocks = 1\nmodules = 2\nseed = 7\n\
             iters = 4\nbatch = 2\npatch = 8\nhalve_every = 2\ncheckpoint_every = 2\n\
             data = data\nout = out\n{extra}"
        ),
    )
    .unwrap();
    p
}

#[test]
fn make_data_train_eval_sr_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let data = d.join("data");
    let o = stea(&["make-data", "--out", data.to_str().unwrap(), "--count", "4", "--size", "16", "--seed", "1"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(data.join("hr/img_0003.ppm").exists());
    assert!(data.join("lr/img_0003.ppm").exists());

    let cfg = write_config(d, "");
    let o = stea(&["train", cfg.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let out = d.join("out");
    let loss = std::fs::read_to_string(out.join("loss.csv")).unwrap();
    let lrs: Vec<&str> = loss.lines().skip(1).map(|l| l.rsplit(',').next().unwrap()).collect();
    assert_eq!(lrs, vec!["4e-4", "2e-4", "2e-4", "1e-4"]);
    assert!(out.join("iter_000002/params.tnsr").exists());
    let ckpt = out.join("final");

    // a second run with the same seed writes identical bytes
    let cfg2 = d.join("again.cfg");
    std::fs::write(&cfg2, std::fs::read_to_string(&cfg).unwrap().replace("out = out", "out = out2")).unwrap();
    assert!(stea(&["train", cfg2.to_str().unwrap()]).status.success());
    assert_eq!(
        std::fs::read(ckpt.join("params.tnsr")).unwrap(),
        std::fs::read(d.join("out2/final/params.tnsr")).unwrap()
    );

    let o = stea(&["eval", "--checkpoint", ckpt.to_str().unwrap(), "--data", data.to_str().unwrap(), "--sigmas", "1.0"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let table = stdout(&o);
    assert!(table.starts_with("image,sigma,psnr,ssim\n"));
    assert!(table.contains("\nbicubic:img_0000,"));
    assert!(table.contains("\nmean,all,"));

    let lr = data.join("lr/img_0000.ppm");
    let sr = d.join("sr.ppm");
    let run_sr = |dst: &Path, beta: &str| {
        stea(&[
            "sr", "--checkpoint", ckpt.to_str().unwrap(), "--input", lr.to_str().unwrap(),
            "--output", dst.to_str().unwrap(), "--alpha", "1,1,1,1", "--beta", beta,
        ])
    };
    assert!(run_sr(&sr, "0,0,0,0").status.success());
    let bytes = std::fs::read(&sr).unwrap();
    assert!(bytes.starts_with(b"P6\n16 16\n255\n"));
    let sr2 = d.join("sr2.ppm");
    assert!(run_sr(&sr2, "0,0,0,0").status.success());
    assert_eq!(bytes, std::fs::read(&sr2).unwrap());
    assert_eq!(run_sr(&sr2, "0,0,0").status.code(), Some(2));
}

#[test]
fn train_rejects_out_of_scope_losses() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "loss.perc = 1\n");
    let o = stea(&["train", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("out of scope"));
}

#[test]
fn train_without_data_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "");
    let o = stea(&["train", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
}
