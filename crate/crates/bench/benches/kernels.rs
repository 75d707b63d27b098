use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

use overparam_core::linalg::{gaussian_matrix, spectral_norm};
use overparam_core::network::{forward_batch, forward_dataset, loss_coefficients, weighted_output_gradient};
use overparam_core::{builtin_loss, generate_separated, init_network, Rng};

fn bench_forward(c: &mut Criterion) {
    let data = generate_separated(20, 10, 0.5, 0.1, 0).unwrap();
    let inputs = data.input_matrix();
    let mut group = c.benchmark_group("forward_batch");
    for m in [250usize, 1000] {
        let params = init_network(&[10, m, m, m], 0).unwrap();
        group.bench_with_input(BenchmarkId::from_parameter(m), &m, |b, _| {
            b.iter(|| forward_batch(black_box(&params), black_box(&inputs)).unwrap())
        });
    }
    group.finish();
}

fn bench_gradient(c: &mut Criterion) {
    let data = generate_separated(20, 10, 0.5, 0.1, 0).unwrap();
    let loss = builtin_loss("logistic").unwrap();
    let indices: Vec<usize> = (0..data.n()).collect();
    let mut group = c.benchmark_group("gradient");
    for m in [250usize, 1000] {
        let params = init_network(&[10, m, m, m], 0).unwrap();
        let trace = forward_dataset(&params, &data).unwrap();
        let coeffs = loss_coefficients(&trace.outputs, &data, &loss, &indices, data.n() as f64);
        group.bench_with_input(BenchmarkId::from_parameter(m), &m, |b, _| {
            b.iter(|| weighted_output_gradient(black_box(&params), &trace, &indices, &coeffs).unwrap())
        });
    }
    group.finish();
}

fn bench_spectral(c: &mut Criterion) {
    let mut group = c.benchmark_group("spectral_norm");
    group.sample_size(10);
    for m in [256usize, 1024] {
        let a = gaussian_matrix(m, m, 2.0 / m as f64, &mut Rng::new(1)).unwrap();
        group.bench_with_input(BenchmarkId::from_parameter(m), &m, |b, _| {
            b.iter(|| spectral_norm(black_box(&a), 1e-10, 10_000).unwrap())
        });
    }
    group.finish();
}

fn bench_gaussian(c: &mut Criterion) {
    let mut group = c.benchmark_group("gaussian_matrix");
    for m in [256usize, 1024] {
        group.bench_with_input(BenchmarkId::from_parameter(m), &m, |b, &m| {
            let mut rng = Rng::new(2);
            b.iter(|| gaussian_matrix(m, m, 2.0 / m as f64, &mut rng).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, bench_forward, bench_gradient, bench_spectral, bench_gaussian);
criterion_main!(benches);
