//! Fixtures shared by the kernel benchmarks.

use memflow::engine::point_initials;
use memflow::{builtin_model, CoefficientSet, EmpiricalMeasure, GridSpec, ModelSpec, NoisePlan, Phase, WeightedSegment};
use rand_distr::{Distribution, StandardNormal};

pub fn grid(h: f64, t_hist: f64, horizon: f64) -> GridSpec {
    GridSpec::new(h, t_hist, horizon).expect("valid grid")
}

/// Linear memory model with a mean-field term.
pub fn mean_field_model(grid: &GridSpec) -> CoefficientSet {
    let spec = ModelSpec::new(
        "linear_memory_meanfield",
        serde_json::json!({"a": 1.0, "beta": 0.3, "gamma": 0.3, "sigma0": 0.5}),
    );
    builtin_model(&spec, grid, 1.0, 1).expect("valid model")
}

/// `m` constant-history segments at standard normal points.
pub fn gaussian_points(m: usize, grid: &GridSpec, seed: u64) -> Vec<WeightedSegment> {
    let noise = NoisePlan::new(seed);
    let pts: Vec<Vec<f64>> = (0..m)
        .map(|i| vec![StandardNormal.sample(&mut noise.stream(i, Phase::Initial))])
        .collect();
    point_initials(&pts, 1.0, grid).expect("grid-compatible")
}

/// `m` random-walk segments, so every node matters for the norm.
pub fn random_walk_measure(m: usize, grid: &GridSpec, seed: u64) -> EmpiricalMeasure {
    let noise = NoisePlan::new(seed);
    let n = grid.hist_steps();
    let atoms = (0..m)
        .map(|i| {
            let mut rng = noise.stream(i, Phase::Sampler);
            let mut x = 0.0;
            let mut vals = vec![0.0; n + 1];
            for v in vals.iter_mut() {
                let z: f64 = StandardNormal.sample(&mut rng);
                x += z * grid.h().sqrt();
                *v = x;
            }
            WeightedSegment::from_flat(1.0, grid.h(), 1, vals).expect("shape")
        })
        .collect();
    EmpiricalMeasure::new(atoms).expect("nonempty")
}
