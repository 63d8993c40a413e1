use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use greenformers::numcore::kernels::{matmul, softmax_lastdim};
use greenformers::{ModelConfig, VariantKind};
use greenformers_bench::{wave_input, StackFixture};

fn kernels(c: &mut Criterion) {
    let mut g = c.benchmark_group("kernels");
    for n in [64, 256] {
        let a = wave_input([1, n, n]).reshape([n, n]).unwrap();
        g.bench_with_input(BenchmarkId::new("matmul", n), &a, |b, a| b.iter(|| matmul(black_box(a), black_box(a)).unwrap()));
        g.bench_with_input(BenchmarkId::new("softmax", n), &a, |b, a| b.iter(|| softmax_lastdim(black_box(a)).unwrap()));
    }
    g.finish();
}

fn encoder_forward(c: &mut Criterion) {
    let cfg = ModelConfig::new(64, 4, 128, 1, 0).unwrap();
    let mut g = c.benchmark_group("encoder_forward");
    g.sample_size(20);
    for n in [128, 512, 1024] {
        for kind in VariantKind::ALL {
            let f = StackFixture::new(kind, cfg, n, 16, 1).unwrap();
            g.bench_with_input(BenchmarkId::new(kind.as_str(), n), &f, |b, f| b.iter(|| black_box(f.forward())));
        }
    }
    g.finish();
}

fn encoder_train_step(c: &mut Criterion) {
    let cfg = ModelConfig::new(64, 4, 128, 1, 0).unwrap();
    let mut g = c.benchmark_group("encoder_fwd_bwd");
    g.sample_size(10);
    for n in [128, 512] {
        for kind in VariantKind::ALL {
            let mut f = StackFixture::new(kind, cfg, n, 16, 1).unwrap();
            g.bench_function(BenchmarkId::new(kind.as_str(), n), |b| b.iter(|| black_box(f.forward_backward())));
        }
    }
    g.finish();
}

criterion_group!(benches, kernels, encoder_forward, encoder_train_step);
criterion_main!(benches);
