//! Criterion micro-benchmarks for the numerical kernels: factorization,
//! the QMC CDF, the rejection sampler, and sequence generation.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use gorthant::qmc::{lowdiscrepancy_points, QmcSequence, SequenceKind};
use gorthant::*;
use nalgebra::{DMatrix, DVector};

fn equicorr(d: usize, rho: f64) -> GaussianSpec {
    let cov = DMatrix::from_fn(d, d, |i, j| if i == j { 1.0 } else { rho });
    GaussianSpec::new(DVector::zeros(d), cov).unwrap()
}

fn bench_cholesky(c: &mut Criterion) {
    let mut group = c.benchmark_group("cholesky");
    for d in [50usize, 200, 500] {
        let spec = equicorr(d, 0.5);
        group.bench_with_input(BenchmarkId::from_parameter(d), &d, |b, _| {
            b.iter(|| cholesky(spec.cov()).unwrap())
        });
    }
    group.finish();
}

fn bench_mvn_cdf(c: &mut Criterion) {
    let mut group = c.benchmark_group("mvn_cdf");
    group.sample_size(10);
    for q in [20usize, 50, 100] {
        let spec = equicorr(q, 0.5);
        let upper = DVector::zeros(q);
        group.bench_with_input(BenchmarkId::from_parameter(q), &q, |b, _| {
            let mut rng = SeedRng::new(1).stream("bench");
            b.iter(|| mvn_cdf(&spec, &upper, QmcBudget::default(), &mut rng).unwrap())
        });
    }
    group.finish();
}

fn bench_truncated_sampler(c: &mut Criterion) {
    let mut group = c.benchmark_group("rejection_sampler_1k");
    for (q, t) in [(16usize, 0.5), (32, 0.0)] {
        let spec = equicorr(q, 0.5);
        group.bench_with_input(BenchmarkId::new("q_t", format!("{q}_{t}")), &q, |b, _| {
            b.iter(|| {
                sample_truncated_below_t(&spec, t, 1000, SeedRng::new(2).stream("bench"), 1 << 26)
                    .unwrap()
            })
        });
    }
    group.finish();
}

fn bench_sobol(c: &mut Criterion) {
    c.bench_function("sobol_6d_4096", |b| {
        let seq = QmcSequence::new(6, SequenceKind::Sobol);
        b.iter(|| lowdiscrepancy_points(&seq, 4096).unwrap())
    });
}

criterion_group!(benches, bench_cholesky, bench_mvn_cdf, bench_truncated_sampler, bench_sobol);
criterion_main!(benches);
