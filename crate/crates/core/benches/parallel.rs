//! Sequential vs data-parallel kernels. Build with `--no-default-features`
//! to see the fallback path, where both variants run the same code.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use lrd_core::arch::{build_resnet, ConvSpec};
use lrd_core::compress::{compress, CompressOptions};
use lrd_core::conv::{conv_forward, conv_forward_sequential};
use lrd_core::init::{random_checkpoint, random_normal};
use lrd_core::linalg::{gemm, gemm_sequential};
use lrd_core::{plan_ranks, CompressionConfig, HooiOptions};

fn bench_gemm(c: &mut Criterion) {
    let mut g = c.benchmark_group("gemm");
    for n in [64usize, 256, 512] {
        let a = random_normal(vec![n, n], 1).unwrap();
        let b = random_normal(vec![n, n], 2).unwrap();
        g.bench_with_input(BenchmarkId::new("sequential", n), &n, |bch, _| {
            bch.iter(|| black_box(gemm_sequential(&a, &b).unwrap()))
        });
        g.bench_with_input(BenchmarkId::new("parallel", n), &n, |bch, _| {
            bch.iter(|| black_box(gemm(&a, &b).unwrap()))
        });
    }
    g.finish();
}

fn bench_conv(c: &mut Criterion) {
    let mut g = c.benchmark_group("conv3x3");
    let spec = ConvSpec { c_in: 128, c_out: 128, kernel_h: 3, kernel_w: 3, stride: 1, padding: 1 };
    let w = random_normal(spec.weight_shape(), 3).unwrap();
    for batch in [1usize, 8] {
        let x = random_normal(vec![batch, 128, 28, 28], 4).unwrap();
        g.bench_with_input(BenchmarkId::new("sequential", batch), &batch, |bch, _| {
            bch.iter(|| black_box(conv_forward_sequential(&spec, &w, &x).unwrap()))
        });
        g.bench_with_input(BenchmarkId::new("parallel", batch), &batch, |bch, _| {
            bch.iter(|| black_box(conv_forward(&spec, &w, &x).unwrap()))
        });
    }
    g.finish();
}

fn bench_compress(c: &mut Criterion) {
    let arch = build_resnet(18, 32).unwrap();
    let ckpt = random_checkpoint(&arch, 0);
    let plan = plan_ranks(&arch, &CompressionConfig::default(), None).unwrap();
    let mut g = c.benchmark_group("compress_resnet18");
    g.sample_size(10);
    let max = lrd_core::par::default_workers();
    for workers in [1usize, max] {
        let opts = CompressOptions { workers, hooi: HooiOptions { max_iters: 5, tol: 1e-6 } };
        g.bench_with_input(BenchmarkId::new("workers", workers), &workers, |bch, _| {
            bch.iter(|| black_box(compress(&arch, &ckpt, &plan, &opts).unwrap()))
        });
    }
    g.finish();
}

criterion_group!(benches, bench_gemm, bench_conv, bench_compress);
criterion_main!(benches);
