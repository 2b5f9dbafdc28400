use super::*;
use crate::coefficients::{builtin_model, ModelSpec};
use crate::engine::{point_initials, simulate_frozen};
use crate::measure::EmpiricalMeasure;
use serde_json::json;

fn linear(grid: &GridSpec, params: serde_json::Value) -> CoefficientSet {
    builtin_model(&ModelSpec::new("linear_memory_meanfield", params), grid, 1.0, 1).unwrap()
}

fn points(grid: &GridSpec, xs: &[f64]) -> Vec<WeightedSegment> {
    let p: Vec<Vec<f64>> = xs.iter().map(|x| vec![*x]).collect();
    point_initials(&p, 1.0, grid).unwrap()
}

fn zero_flow(grid: &GridSpec) -> EmpiricalMeasureFlow {
    EmpiricalMeasureFlow::constant(*grid, EmpiricalMeasure::new(points(grid, &[0.0])).unwrap()).unwrap()
}

#[test]
fn identical_systems_have_unit_weights() {
    let grid = GridSpec::new(0.05, 0.5, 2.0).unwrap();
    let c = linear(&grid, json!({"a": 1.0, "sigma0": 0.5}));
    let init = points(&grid, &[0.3, -0.2, 1.0, 0.5]);
    let flow = zero_flow(&grid);
    let run = run_coupling(&c, &init, &init, &flow, &flow, &grid, &NoisePlan::new(3), &CouplingConfig::default()).unwrap();
    assert_eq!(run.x, run.y);
    for k in 0..=run.steps() {
        assert!(run.ledger.weights(k).iter().all(|w| *w == 1.0));
        assert_eq!(run.ledger.ess(k), 4.0);
    }
    assert!(run.ledger.zeta_bar.iter().flatten().all(|z| *z == 0.0));
    let fit = decay_fit(&run, 1.0, 0, 1).unwrap();
    assert!(fit.degenerate && fit.slope == f64::NEG_INFINITY);
}

#[test]
fn x_is_the_frozen_ensemble_and_ledger_replays() {
    let grid = GridSpec::new(0.05, 0.5, 2.0).unwrap();
    let c = linear(&grid, json!({"a": 1.0, "beta": 0.3, "lambda": 2.0, "gamma": 0.4, "sigma0": 0.5}));
    let mu0 = points(&grid, &[0.3, -0.2, 1.0]);
    let nu0 = points(&grid, &[1.3, 0.8, 2.0]);
    let noise = NoisePlan::new(9);
    let fmu = simulate_frozen(&c, &zero_flow(&grid), &mu0, &grid, &noise, &SimOptions::default())
        .unwrap()
        .to_flow()
        .unwrap();
    let fnu = simulate_frozen(&c, &zero_flow(&grid), &nu0, &grid, &noise, &SimOptions::default())
        .unwrap()
        .to_flow()
        .unwrap();
    let run = run_coupling(&c, &mu0, &nu0, &fmu, &fnu, &grid, &noise, &CouplingConfig::default()).unwrap();
    let x = simulate_frozen(&c, &fmu, &mu0, &grid, &noise, &SimOptions::default()).unwrap();
    assert_eq!(x.particles(), &run.x[..]);
    assert_eq!(run.ledger.replay_mismatches(&noise, run.phase), 0);
    assert!(run.ledger.zeta_bar.iter().flatten().any(|z| *z != 0.0));
    let steps: Vec<usize> = (0..run.steps()).step_by(5).collect();
    let ratio = run.zeta_bar_bound_ratio(&c, &fmu, &fnu, &steps).unwrap();
    assert!(ratio <= 1.0, "{ratio}");
}

#[test]
fn deterministic_gap_follows_the_recursion() {
    // short horizon: the gap is a difference of O(1) states, so keep it well above rounding
    let grid = GridSpec::new(0.01, 0.5, 2.0).unwrap();
    let (a, kappa, s0, g0) = (1.0, 3.0, 0.7, 0.5);
    let c = linear(&grid, json!({"a": a, "sigma0": s0}));
    let mu0 = points(&grid, &[1.0; 8]);
    let nu0 = points(&grid, &[1.0 - g0; 8]);
    let flow = zero_flow(&grid);
    let cfg = CouplingConfig {
        kappa: Some(kappa),
        ..CouplingConfig::default()
    };
    let run = run_coupling(&c, &mu0, &nu0, &flow, &flow, &grid, &NoisePlan::new(4), &cfg).unwrap();
    let rho = 1.0 - (a + kappa) * grid.h();
    let mut oracle = 0.0;
    for j in 0..=run.steps() {
        let gap = g0 * rho.powi(j as i32);
        for (x, y) in run.x.iter().zip(&run.y) {
            let got = x.state(j)[0] - y.state(j)[0];
            assert!((got - gap).abs() < 1e-12, "step {j}: {got} vs {gap}");
        }
        // deterministic Girsanov entropy
        assert!((run.entropy_estimate(j) - 0.5 * oracle).abs() <= 1e-10 * oracle.max(1e-300));
        let z = kappa / s0 * gap;
        oracle += z * z * grid.h();
    }
    let fit = decay_fit(&run, 1.0, 50, 2).unwrap();
    let exact = rho.ln() / grid.h();
    assert!((fit.slope - exact).abs() < 1e-10, "{} vs {exact}", fit.slope);
    assert!(fit.meets_target() && fit.ci_excludes_zero());
}

#[test]
fn stronger_pull_shrinks_the_gap() {
    let grid = GridSpec::new(0.02, 0.5, 2.0).unwrap();
    let c = linear(&grid, json!({"a": 0.5, "sigma0": 0.4}));
    let mu0 = points(&grid, &[1.0, 2.0]);
    let nu0 = points(&grid, &[0.0, 0.5]);
    let flow = zero_flow(&grid);
    let gaps: Vec<Vec<GapPoint>> = [1.5, 3.0, 6.0]
        .iter()
        .map(|&k| {
            let cfg = CouplingConfig {
                kappa: Some(k),
                ..CouplingConfig::default()
            };
            run_coupling(&c, &mu0, &nu0, &flow, &flow, &grid, &NoisePlan::new(1), &cfg)
                .unwrap()
                .gap_series(2.0)
                .unwrap()
        })
        .collect();
    for k in 1..gaps[0].len() {
        assert!(gaps[1][k].gap_p_plain <= gaps[0][k].gap_p_plain);
        assert!(gaps[2][k].gap_p_plain <= gaps[1][k].gap_p_plain);
    }
}

#[test]
fn log_harnack_trivial_cases() {
    let grid = GridSpec::new(0.05, 0.5, 1.0).unwrap();
    let c = linear(&grid, json!({"a": 1.0, "sigma0": 0.5}));
    let init = points(&grid, &[0.3, -0.2, 1.0, 0.5, 0.1]);
    let flow = zero_flow(&grid);
    let run = run_coupling(&c, &init, &init, &flow, &flow, &grid, &NoisePlan::new(2), &CouplingConfig::default()).unwrap();
    let konst = TestFunction::new(TestFunctionKind::Constant, json!({"value": 3.0}));
    let e = log_harnack_defect(&run, &c, &konst, 10).unwrap();
    assert_eq!(e.defect, 0.0);
    assert_eq!(e.lhs, 3f64.ln());
    let f = TestFunction::new(TestFunctionKind::ExpLinear, json!({"c": 1.0}));
    for k in 0..=run.steps() {
        assert!(log_harnack_defect(&run, &c, &f, k).unwrap().defect <= 1e-15);
    }
    let lin = TestFunction::new(TestFunctionKind::Linear, json!({}));
    assert!(matches!(log_harnack_defect(&run, &c, &lin, 5), Err(Error::Domain(_))));
}

#[test]
fn gradient_of_linear_semigroup() {
    let grid = GridSpec::new(0.01, 0.5, 3.0).unwrap();
    let a = 1.0;
    let c = linear(&grid, json!({"a": a, "sigma0": 0.5}));
    let xi = points(&grid, &[0.7]).remove(0);
    let eta = points(&grid, &[1.0]).remove(0);
    let f = TestFunction::new(TestFunctionKind::Linear, json!({}));
    let chk = gradient_estimate_check(&c, &f, &xi, &[eta], &grid, 64, 1e-3, 0.5, &NoisePlan::new(6), &SimOptions::default())
        .unwrap();
    for (j, r) in chk.rows.iter().enumerate() {
        let oracle = (1.0 - a * grid.h()).powi(j as i32);
        assert!((r.fd_gradient - oracle).abs() < 1e-9, "{j}: {} vs {oracle}", r.fd_gradient);
    }
    assert_eq!(chk.rows[0].variance_term, 0.0);
    assert!(!chk.unstable_warning);
    assert!(chk.rate_meets_target().unwrap());

    let k = TestFunction::new(TestFunctionKind::Constant, json!({}));
    let eta = points(&grid, &[1.0]).remove(0);
    let flat = gradient_estimate_check(&c, &k, &xi, &[eta.clone()], &grid, 8, 1e-3, 0.5, &NoisePlan::new(6), &SimOptions::default())
        .unwrap();
    assert!(flat.rows.iter().all(|r| r.fd_gradient == 0.0 && r.variance_term == 0.0 && r.residual == 0.0));
    let long = eta.scaled(2.0);
    assert!(gradient_estimate_check(&c, &k, &xi, &[long], &grid, 8, 1e-3, 0.5, &NoisePlan::new(6), &SimOptions::default()).is_err());
}

#[test]
fn configuration_errors() {
    let grid = GridSpec::new(0.05, 0.5, 1.0).unwrap();
    let c = linear(&grid, json!({"a": 1.0, "sigma0": 0.5}));
    let init = points(&grid, &[0.3, -0.2]);
    let flow = zero_flow(&grid);
    let noise = NoisePlan::new(1);
    let weak = CouplingConfig {
        kappa: Some(0.5),
        ..CouplingConfig::default()
    };
    assert!(run_coupling(&c, &init, &init, &flow, &flow, &grid, &noise, &weak).is_err());
    let short = points(&grid, &[0.3]);
    assert!(matches!(
        run_coupling(&c, &init, &short, &flow, &flow, &grid, &noise, &CouplingConfig::default()),
        Err(Error::UnsupportedCoupling(_))
    ));
    let degenerate = linear(&grid, json!({"a": 1.0, "sigma0": 0.0}));
    assert!(run_coupling(&degenerate, &init, &init, &flow, &flow, &grid, &noise, &CouplingConfig::default()).is_err());
}
