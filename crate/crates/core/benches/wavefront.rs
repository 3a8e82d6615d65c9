//! Parallel vs single-threaded wavefront march on a variable-speed problem.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use varwave::goursat::{march, march_sequential, seed_lattice, Extremes, Lattice, SolverOptions};
use varwave::initial_data::{boundary_curve_for_spacing, CauchyData, Profile};
use varwave::wavespeed::{make_model, WaveSpeedModel};

const T_MAX: f64 = 1.0;

fn setup(h: f64) -> (WaveSpeedModel, Lattice, SolverOptions) {
    let model = make_model("cosine", &[2.0, 1.0], (-5.0, 5.0)).unwrap();
    let data = CauchyData::new(Profile::named("gaussian", &[]).unwrap(), Profile::Zero, (h / 8.0).min(1e-3)).unwrap();
    let opts = SolverOptions::new(h, T_MAX);
    let gamma = boundary_curve_for_spacing(&data, &model, h).unwrap();
    let lattice = seed_lattice(&gamma, h, &opts.tails(&model)).unwrap();
    (model, lattice, opts)
}

fn bench_march(c: &mut Criterion) {
    let mut group = c.benchmark_group("march");
    group.sample_size(10);
    for inv_h in [64u32, 128] {
        let (model, lattice, opts) = setup(1.0 / inv_h as f64);
        group.bench_with_input(BenchmarkId::new("parallel", inv_h), &inv_h, |b, _| {
            b.iter(|| march(&lattice, &model, &opts, &mut Extremes::new(T_MAX)).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("sequential", inv_h), &inv_h, |b, _| {
            b.iter(|| march_sequential(&lattice, &model, &opts, &mut Extremes::new(T_MAX)).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, bench_march);
criterion_main!(benches);
