use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

use stea_core::attention::{nla_forward, taylor_attention_linear, QkvWeights, TaylorOrder};
use stea_core::linalg::matmul;
use stea_core::model::{Model, ModelConfig, ModelKind};
use stea_core::par;
use stea_core::rng::{seeded, uniform_tensor};

// Parallel and single-threaded runs of the same kernels; without the
// `parallel` feature both rows measure the sequential fallback.

fn attention(c: &mut Criterion) {
    let mut group = c.benchmark_group("attention");
    group.sample_size(10);
    for n in [256, 1024] {
        let mut rng = seeded(1);
        let x = uniform_tensor(&mut rng, &[n, 16], 0.5);
        let w = QkvWeights::random(&mut rng, 16);
        group.bench_with_input(BenchmarkId::new("nla/parallel", n), &n, |b, _| {
            b.iter(|| nla_forward(black_box(&x), &w).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("nla/sequential", n), &n, |b, _| {
            b.iter(|| par::single_threaded(|| nla_forward(black_box(&x), &w).unwrap()))
        });
        group.bench_with_input(BenchmarkId::new("taylor-linear/parallel", n), &n, |b, _| {
            b.iter(|| taylor_attention_linear(black_box(&x), &w, TaylorOrder::Second, n as f64).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("taylor-linear/sequential", n), &n, |b, _| {
            b.iter(|| {
                par::single_threaded(|| taylor_attention_linear(black_box(&x), &w, TaylorOrder::Second, n as f64).unwrap())
            })
        });
    }
    group.finish();
}

fn dense(c: &mut Criterion) {
    let mut rng = seeded(2);
    let a = uniform_tensor(&mut rng, &[256, 256], 1.0);
    let b = uniform_tensor(&mut rng, &[256, 256], 1.0);
    let mut group = c.benchmark_group("matmul256");
    group.bench_function("parallel", |bench| bench.iter(|| matmul(black_box(&a), &b).unwrap()));
    group.bench_function("sequential", |bench| {
        bench.iter(|| par::single_threaded(|| matmul(black_box(&a), &b).unwrap()))
    });
    group.finish();
}

fn network(c: &mut Criterion) {
    let (model, store) = Model::build(&ModelConfig::desk(ModelKind::LabNet, 16, 2)).unwrap();
    let lr = uniform_tensor(&mut seeded(3), &[3, 32, 32], 0.5).map(|v| v + 0.5);
    let mut group = c.benchmark_group("labnet_forward_32");
    group.sample_size(10);
    group.bench_function("parallel", |b| b.iter(|| model.super_resolve(&store, black_box(&lr)).unwrap()));
    group.bench_function("sequential", |b| {
        b.iter(|| par::single_threaded(|| model.super_resolve(&store, black_box(&lr)).unwrap()))
    });
    group.finish();
}

criterion_group!(benches, attention, dense, network);
criterion_main!(benches);
