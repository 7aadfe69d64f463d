use bfn_core::gramian::{assemble_gramian, default_time_samples};
use bfn_core::observers::{error_cycle_map, ObserverConfig};
use bfn_core::{
    GridFunction, Interpolation, ObservationOperator, PeriodicGrid, TransportPropagator,
    VelocityProfile,
};
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::hint::black_box;

fn bench_propagate(c: &mut Criterion) {
    let mut group = c.benchmark_group("propagate");
    for interp in [Interpolation::Spectral, Interpolation::Linear] {
        let n = 256;
        let grid = PeriodicGrid::new(0.0, 1.0, n).unwrap();
        let prop = TransportPropagator::new(
            grid,
            VelocityProfile::sinusoidal(1.0, 0.5, 1.0).unwrap(),
            interp,
        );
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let f = GridFunction::random_unit(grid, &mut rng);
        let label = match interp {
            Interpolation::Spectral => "spectral",
            Interpolation::Linear => "linear",
        };
        group.bench_function(BenchmarkId::new(label, n), |b| {
            b.iter(|| black_box(prop.propagate(&f, 0.3137, 0.0).unwrap()))
        });
    }
    group.finish();
}

fn bench_gramian(c: &mut Criterion) {
    let n = 64;
    let grid = PeriodicGrid::new(0.0, 1.0, n).unwrap();
    let prop =
        TransportPropagator::new(grid, VelocityProfile::constant(1.0), Interpolation::Linear);
    let obs = ObservationOperator::window(grid, 0.6, 1.0).unwrap();
    let n_time = default_time_samples(prop.profile(), prop.grid(), 0.0, 0.4);
    c.bench_function("gramian_window_n64", |b| {
        b.iter(|| black_box(assemble_gramian(&prop, &obs, 0.0, 0.4, n_time).unwrap()))
    });
}

fn bench_bfn_cycle(c: &mut Criterion) {
    let n = 128;
    let grid = PeriodicGrid::new(0.0, 1.0, n).unwrap();
    let prop = TransportPropagator::new(
        grid,
        VelocityProfile::constant(1.0),
        Interpolation::Spectral,
    );
    let obs = ObservationOperator::window(grid, 0.6, 1.0).unwrap();
    let cfg = ObserverConfig::new(5.0, 1.0 / 256.0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let f = GridFunction::random_unit(grid, &mut rng);
    c.bench_function("bfn_cycle_window_n128", |b| {
        b.iter(|| black_box(error_cycle_map(&prop, &obs, &cfg, 0.5, &f).unwrap()))
    });
}

criterion_group!(benches, bench_propagate, bench_gramian, bench_bfn_cycle);
criterion_main!(benches);
