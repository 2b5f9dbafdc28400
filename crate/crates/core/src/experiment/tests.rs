use super::*;
use serde_json::json;

fn config(v: serde_json::Value) -> RunConfig {
    serde_json::from_value(v).unwrap()
}

#[test]
fn zero_model_simulation_is_constant() {
    let cfg = config(json!({
        "experiment": "simulate",
        "model": {"id": "zero"},
        "grid": {"h": 0.1, "T_hist": 0.5, "T": 1.0},
        "M": 8,
        "initial": {"kind": "gaussian", "mean": [0.0], "std": 1.0}
    }));
    let out = run(&cfg).unwrap();
    assert!(out.summary.passed, "{:?}", out.summary.checks);
    assert!(out.summary.checks.iter().any(|c| c.name == "constant_trajectories"));
}

#[test]
fn echo_replays_bit_identically() {
    let cfg = config(json!({
        "experiment": "couple",
        "model": {"id": "linear_memory_meanfield", "params": {"a": 1.0, "gamma": 0.2, "sigma0": 0.5}},
        "grid": {"h": 0.05, "T_hist": 0.5, "T": 2.0},
        "M": 16,
        "seed": 5,
        "params": {"bootstrap_reps": 50, "test_function": {"kind": "bounded_smooth"}}
    }));
    let a = run(&cfg).unwrap();
    let echo = a.summary.config.clone();
    assert!(echo.sim.taming.is_some());
    assert_eq!(echo.params["flows"], "picard");
    let b = run(&echo).unwrap();
    assert_eq!(a.summary.to_json().unwrap(), b.summary.to_json().unwrap());
    assert_eq!(echo.resolve().unwrap(), echo);
}

#[test]
fn worker_count_does_not_change_the_summary() {
    let cfg = config(json!({
        "experiment": "simulate",
        "model": {"id": "cubic_monotone_memory", "params": {"beta": 0.3}},
        "grid": {"h": 0.02, "T_hist": 0.4, "T": 1.0},
        "M": 32,
        "initial": {"kind": "gaussian", "mean": [1.0], "std": 0.5}
    }));
    let one = run_with_threads(&cfg, 1).unwrap().summary.to_json().unwrap();
    let four = run_with_threads(&cfg, 4).unwrap().summary.to_json().unwrap();
    assert_eq!(one, four);
}

#[test]
fn schema_violations_name_the_field() {
    let bad = RunConfig::from_json(r#"{"experiment": "simulate", "model": {"id": "zero"}, "grid": {"h": 0.1, "T_hist": 1, "T": 1}, "partcles": 3}"#);
    assert!(matches!(&bad, Err(Error::Config(m)) if m.contains("partcles")));
    let bad = RunConfig::from_json(r#"{"experiment": "simulat", "model": {"id": "zero"}, "grid": {"h": 0.1, "T_hist": 1, "T": 1}}"#);
    assert!(bad.is_err());
    let cfg = config(json!({
        "experiment": "picard",
        "model": {"id": "zero"},
        "grid": {"h": 0.1, "T_hist": 1.0, "T": 1.0},
        "params": {"tol": 1e-3, "bogus": 1}
    }));
    assert!(matches!(cfg.resolve(), Err(Error::Config(m)) if m.contains("bogus")));
    let cfg = config(json!({
        "schema_version": 2,
        "experiment": "simulate",
        "model": {"id": "zero"},
        "grid": {"h": 0.1, "T_hist": 1.0, "T": 1.0}
    }));
    assert!(cfg.resolve().is_err());
}

#[test]
fn experiment_ids_round_trip() {
    for e in ExperimentId::ALL {
        assert_eq!(e.as_str().parse::<ExperimentId>().unwrap(), e);
        assert_eq!(serde_json::to_value(e).unwrap(), e.as_str());
    }
}

#[test]
fn picard_mean_ode_on_linear_model() {
    let cfg = config(json!({
        "experiment": "picard",
        "model": {"id": "linear_memory_meanfield", "params": {"a": 1.0, "gamma": 0.3, "sigma0": 0.2}},
        "grid": {"h": 0.02, "T_hist": 0.5, "T": 2.0},
        "M": 64
    }));
    let out = run(&cfg).unwrap();
    assert!(out.summary.passed, "{:#?}", out.summary.checks);
    assert!(out.summary.checks.iter().any(|c| c.name == "mean_ode"));
}

#[test]
fn remaining_experiments_run() {
    let base = |exp: &str, model: serde_json::Value, params: serde_json::Value| {
        config(json!({
            "experiment": exp,
            "model": model,
            "grid": {"h": 0.05, "T_hist": 0.5, "T": 1.0},
            "M": 16,
            "params": params
        }))
    };
    let lin = json!({"id": "linear_memory_meanfield", "params": {"a": 1.0, "beta": 0.3, "sigma0": 0.5}});
    let ou = json!({"id": "linear_memory_meanfield", "params": {"a": 1.0, "sigma0": 0.5}});
    let cubic = json!({"id": "cubic_monotone_memory"});
    let sing = json!({"id": "singular_b0_toy"});
    let lip = run(&base("lipschitz", lin, json!({"pairs": 5}))).unwrap();
    assert!(lip.summary.passed, "{:#?}", lip.summary.checks);
    let lip = run(&base("lipschitz", cubic.clone(), json!({"pairs": 5}))).unwrap();
    assert!(lip.summary.checks.iter().any(|c| c.name == "ratio_bounded"));
    let m = run(&base("moments", cubic.clone(), json!({}))).unwrap();
    assert!(m.summary.passed, "{:#?}", m.summary.checks);
    let e = run(&base("exp-moments", ou, json!({}))).unwrap();
    assert!(e.summary.checks.iter().any(|c| c.name == "gaussian_terminal"));
    let a = run(&base("check-assumptions", cubic, json!({"n_pairs": 50}))).unwrap();
    assert!(a.summary.passed, "{:#?}", a.summary.checks);
    let l = run(&base("lpq-diagnose", sing, json!({"lattice": {"n_time": 4, "n_space": 40, "center_step": 1.0}}))).unwrap();
    assert!(l.summary.passed, "{:#?}", l.summary.checks);
    let zero = base("lpq-diagnose", json!({"id": "zero"}), json!({}));
    assert!(matches!(run(&zero), Err(Error::Config(_))));
}

#[test]
fn artifacts_are_written() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(json!({
        "experiment": "simulate",
        "model": {"id": "linear_memory_meanfield"},
        "grid": {"h": 0.1, "T_hist": 0.5, "T": 1.0},
        "M": 3,
        "params": {"write_ensemble": true}
    }));
    let out = run(&cfg).unwrap();
    write_artifacts(&out, dir.path()).unwrap();
    for f in ["summary.json", "config.resolved.json", "mean.csv", "moments.csv", "ensemble/manifest.json"] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
    let back: RunSummary = io::read_json(&dir.path().join("summary.json")).unwrap();
    assert_eq!(back.config, out.summary.config);
}
