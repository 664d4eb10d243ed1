use stea_core::degrade::DegradationSpec;
use stea_core::model::{load_checkpoint, save_checkpoint, Model, ModelConfig, ModelKind};
use stea_core::rng::{seeded, uniform_tensor};
use stea_core::train::{adam_step, l1_loss, train, write_loss_csv, AdamState, TrainConfig};
use stea_core::{synth, Error, ParamStore, Tensor};

#[test]
fn l1_matches_loop() {
    let mut rng = seeded(1);
    let a = uniform_tensor(&mut rng, &[3, 5, 7], 1.0);
    let b = uniform_tensor(&mut rng, &[3, 5, 7], 1.0);
    let mut s = 0.0;
    for i in 0..a.len() {
        s += (a.data()[i] - b.data()[i]).abs();
    }
    assert!((l1_loss(&a, &b).unwrap() - s / a.len() as f64).abs() < 1e-12);
    assert_eq!(l1_loss(&a, &a).unwrap(), 0.0);
    let shifted = a.map(|v| v - 0.25);
    assert!((l1_loss(&a, &shifted).unwrap() - 0.25).abs() < 1e-12);
    assert!(l1_loss(&a, &Tensor::zeros(&[3, 5, 6])).is_err());
}

fn scalar_store(v: f64) -> (ParamStore, stea_core::ParamId) {
    let mut s = ParamStore::new();
    let id = s.add("theta", Tensor::scalar(v));
    (s, id)
}

#[test]
fn adam_first_step_is_signed_lr() {
    let cfg = TrainConfig {
        lr: 0.01,
        ..Default::default()
    };
    let (mut s, id) = scalar_store(1.0);
    s.get_mut(id).grad = Tensor::scalar(-3.0);
    adam_step(&mut s, &mut AdamState::default(), &cfg, 1);
    assert!((s.value(id).data()[0] - 1.01).abs() < 1e-9);

    let (mut s, id) = scalar_store(1.0);
    adam_step(&mut s, &mut AdamState::default(), &cfg, 1);
    assert_eq!(s.value(id).data()[0], 1.0);
}

#[test]
fn adam_minimises_a_parabola() {
    // f(θ) = (θ − 3)², lr 0.1, no halving within 100 steps
    let cfg = TrainConfig {
        lr: 0.1,
        halve_every: 1000,
        ..Default::default()
    };
    let (mut s, id) = scalar_store(0.0);
    let mut state = AdamState::default();
    for t in 1..=100 {
        let th = s.value(id).data()[0];
        s.get_mut(id).grad = Tensor::scalar(2.0 * (th - 3.0));
        adam_step(&mut s, &mut state, &cfg, t);
    }
    let th = s.value(id).data()[0];
    assert!((th - 3.0).abs() < 0.1, "θ = {th}");
}

fn tiny_run(seed: u64, iters: usize) -> (ModelConfig, Model, ParamStore, Vec<stea_core::train::IterLog>) {
    let mut cfg = ModelConfig::desk(ModelKind::LabNet, 4, 2);
    cfg.seed = seed;
    cfg.nominal_side = 4;
    let (model, mut store) = Model::build(&cfg).unwrap();
    let data = synth::generate_corpus(seed, 6, 16);
    let tc = TrainConfig {
        iters,
        batch: 2,
        patch: 8,
        halve_every: 2,
        seed,
        ..Default::default()
    };
    let log = train(&model, &mut store, &data, &DegradationSpec::train(2).unwrap(), &tc, |_, _| Ok(())).unwrap();
    (cfg, model, store, log)
}

#[test]
fn training_is_reproducible_and_logs_schedule() {
    let (cfg, _, a, log) = tiny_run(5, 5);
    let (_, _, b, _) = tiny_run(5, 5);
    assert!(a.iter().zip(b.iter()).all(|(x, y)| x.value == y.value));
    let lrs: Vec<f64> = log.iter().map(|e| e.lr).collect();
    assert_eq!(lrs, vec![4e-4, 2e-4, 2e-4, 1e-4, 1e-4]);

    let mut csv = Vec::new();
    write_loss_csv(&mut csv, &log).unwrap();
    let text = String::from_utf8(csv).unwrap();
    assert!(text.starts_with("iter,loss,lr\n1,"));
    assert_eq!(text.lines().count(), 6);

    let d1 = tempfile::tempdir().unwrap();
    let d2 = tempfile::tempdir().unwrap();
    save_checkpoint(d1.path(), &cfg, &a).unwrap();
    save_checkpoint(d2.path(), &cfg, &b).unwrap();
    for f in ["config.txt", "manifest.txt", "params.tnsr"] {
        assert_eq!(std::fs::read(d1.path().join(f)).unwrap(), std::fs::read(d2.path().join(f)).unwrap());
    }
    let (cfg2, _, loaded) = load_checkpoint(d1.path()).unwrap();
    assert_eq!(cfg2, cfg);
    assert!(loaded.iter().zip(a.iter()).all(|(x, y)| x.value == y.value));
}

#[test]
fn loss_decreases_on_a_short_run() {
    let (_, _, _, log) = tiny_run(2, 30);
    let first: f64 = log[..5].iter().map(|e| e.loss).sum();
    let last: f64 = log[25..].iter().map(|e| e.loss).sum();
    assert!(last < first, "{first} -> {last}");
}

#[test]
fn mismatched_checkpoint_names_the_tensor() {
    let (cfg, _, store, _) = tiny_run(1, 1);
    let dir = tempfile::tempdir().unwrap();
    save_checkpoint(dir.path(), &cfg, &store).unwrap();
    let mut other = cfg.clone();
    other.channels = 6;
    let err = stea_core::model::load_checkpoint_as(dir.path(), &other).unwrap_err();
    assert!(matches!(err, Error::Load { .. }), "{err}");
}

#[test]
fn divergence_is_reported() {
    let cfg = ModelConfig {
        nominal_side: 4,
        ..ModelConfig::desk(ModelKind::LabNet, 4, 2)
    };
    let (model, mut store) = Model::build(&cfg).unwrap();
    // poison one weight so the first forward is non-finite
    let id = store.ids().next().unwrap();
    store.get_mut(id).value.data_mut()[0] = f64::NAN;
    let data = synth::generate_corpus(0, 2, 8);
    let tc = TrainConfig {
        iters: 2,
        batch: 1,
        patch: 8,
        ..Default::default()
    };
    let err = train(&model, &mut store, &data, &DegradationSpec::train(2).unwrap(), &tc, |_, _| Ok(())).unwrap_err();
    assert!(matches!(err, Error::Diverged { iter: 1, .. }), "{err}");
}
