use criterion::{criterion_group, criterion_main, Criterion};
use proxybounds_core::{
    brute_force_bounds, identify_baseline, moment_summary, residualize, sample_dgp, DivisorPolicy,
    LatentSpec, MomentSummary, Regime,
};
use std::hint::black_box;

fn l0() -> LatentSpec {
    LatentSpec {
        beta: 0.5,
        mean_u1: 0.0,
        mean_u2: 0.0,
        var_eps: 1.0,
        var_u1: 0.5,
        var_u2: 0.5,
        cov_x_u1: -0.25,
        cov_x_u2: 0.0,
        cov_u1_u2: 0.1,
    }
}

fn bench_identification(c: &mut Criterion) {
    let m = MomentSummary::population(1.25, 1.0, 1.5, 0.375, 0.5, 0.85);
    c.bench_function("identify_baseline", |b| {
        b.iter(|| identify_baseline(black_box(&m)))
    });
    c.bench_function("brute_force_bounds step 1e-4", |b| {
        b.iter(|| brute_force_bounds(black_box(&m), 1e-4, 2.5, Regime::Baseline))
    });
}

fn bench_residualize(c: &mut Criterion) {
    let s = sample_dgp(&l0(), 10_000, 1, 3).unwrap();
    c.bench_function("residualize + summary n=10k J=3", |b| {
        b.iter(|| moment_summary(&residualize(black_box(&s)).unwrap(), DivisorPolicy::NMinus1))
    });
}

criterion_group!(benches, bench_identification, bench_residualize);
criterion_main!(benches);
