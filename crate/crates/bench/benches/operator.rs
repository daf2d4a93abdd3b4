use criterion::{black_box, criterion_group, criterion_main, Criterion};
use splitvi_core::operator::apply_slice;
use splitvi_core::scheme::step;
use splitvi_core::{frozen_expectation, GridFunction, HamiltonianKind, Obstacle, OperatorConfig, ProblemSpec, SpatialGrid};

fn bump(x: &[f64]) -> f64 {
    0.4 * (-x.iter().map(|v| v * v).sum::<f64>() / 0.045).exp()
}

pub fn criterion_benchmark(c: &mut Criterion) {
    let spec1 = ProblemSpec::new(1, HamiltonianKind::QuadraticIso { c: 1.0 }, bump, 0.5).with_sigma(0.5);
    let grid1 = SpatialGrid::new(&[-4.0], &[4.0], 321).unwrap();
    let phi1 = GridFunction::sample(&grid1, bump, 1.7).unwrap();
    let cfg1 = OperatorConfig::new(1, 3.5).unwrap();

    let spec2 = ProblemSpec::new(2, HamiltonianKind::QuadraticIso { c: 1.0 }, bump, 0.5).with_sigma(0.5);
    let grid2 = SpatialGrid::new(&[-2.0, -2.0], &[2.0, 2.0], 41).unwrap();
    let phi2 = GridFunction::sample(&grid2, bump, 1.7).unwrap();
    let cfg2 = OperatorConfig::new(2, 3.5).unwrap();

    let capped = spec1.clone().with_obstacle(Obstacle::Constant(0.3));

    c.bench_function("frozen_expectation 1d", |b| {
        b.iter(|| frozen_expectation(&spec1, 0.0, black_box(&[0.1]), 0.05, &phi1, &cfg1.quad))
    });
    c.bench_function("apply_slice 1d 321 nodes", |b| {
        b.iter(|| apply_slice(&spec1, 0.0, black_box(0.05), &phi1, &cfg1).unwrap())
    });
    c.bench_function("capped step 1d 321 nodes", |b| {
        b.iter(|| step(&capped, 0.0, black_box(0.05), &phi1, &cfg1).unwrap())
    });
    c.bench_function("apply_slice 2d 41x41", |b| {
        b.iter(|| apply_slice(&spec2, 0.0, black_box(0.05), &phi2, &cfg2).unwrap())
    });
}

criterion_group!(benches, criterion_benchmark);
criterion_main!(benches);
