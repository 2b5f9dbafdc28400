use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use memflow::engine::{simulate_frozen, simulate_interacting, SimOptions};
use memflow::{flow_distance_theta, wasserstein, EmpiricalMeasureFlow, NoisePlan};
use memflow_bench::{gaussian_points, grid, mean_field_model, random_walk_measure};

fn bench_wasserstein(c: &mut Criterion) {
    let g = grid(0.01, 1.0, 1.0);
    let mut group = c.benchmark_group("wasserstein_w2");
    for m in [16, 64, 128] {
        let mu = random_walk_measure(m, &g, 1);
        let nu = random_walk_measure(m, &g, 2);
        group.bench_with_input(BenchmarkId::from_parameter(m), &m, |b, _| {
            b.iter(|| wasserstein(black_box(&mu), black_box(&nu), 2.0, 1.0).unwrap())
        });
    }
    group.finish();
}

fn bench_simulation(c: &mut Criterion) {
    let g = grid(0.01, 0.5, 1.0);
    let model = mean_field_model(&g);
    let inits = gaussian_points(256, &g, 3);
    let noise = NoisePlan::new(4);
    let opts = SimOptions::default();
    let mut group = c.benchmark_group("simulate_256x100");
    group.sample_size(20);
    group.bench_function("interacting", |b| {
        b.iter(|| simulate_interacting(&model, black_box(&inits), &g, &noise, &opts).unwrap())
    });
    let flow = simulate_interacting(&model, &inits, &g, &noise, &opts).unwrap().1;
    group.bench_function("frozen", |b| {
        b.iter(|| simulate_frozen(&model, &flow, black_box(&inits), &g, &noise, &opts).unwrap())
    });
    group.finish();
}

fn bench_flow_distance(c: &mut Criterion) {
    let g = grid(0.02, 0.5, 1.0);
    let model = mean_field_model(&g);
    let noise = NoisePlan::new(5);
    let opts = SimOptions::default();
    let run = |seed| -> EmpiricalMeasureFlow {
        simulate_interacting(&model, &gaussian_points(64, &g, seed), &g, &noise, &opts)
            .unwrap()
            .1
    };
    let (f, h) = (run(6), run(7));
    let mut group = c.benchmark_group("flow_distance_theta");
    group.sample_size(10);
    group.bench_function("m64_steps50", |b| {
        b.iter(|| flow_distance_theta(black_box(&f), black_box(&h), 2.6).unwrap())
    });
    group.finish();
}

criterion_group!(benches, bench_wasserstein, bench_simulation, bench_flow_distance);
criterion_main!(benches);
