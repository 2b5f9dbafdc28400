use std::path::Path;
use std::process::{Command, Output};

fn memflow(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_memflow")).args(args).output().unwrap()
}

fn write(dir: &Path, name: &str, body: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, body).unwrap();
    p.to_str().unwrap().to_string()
}

const ZERO: &str = r#"{"experiment": "simulate", "model": {"id": "zero"},
  "grid": {"h": 0.1, "T_hist": 0.5, "T": 1.0}, "M": 4,
  "initial": {"kind": "gaussian", "mean": [0.0], "std": 1.0}}"#;

#[test]
fn success_writes_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.json", ZERO);
    let out = dir.path().join("out");
    let o = memflow(&["simulate", "--config", &cfg, "--out", out.to_str().unwrap(), "--plots"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stdout).contains("PASS constant_trajectories"));
    for f in ["summary.json", "config.resolved.json", "timing.json", "moments.csv", "moments.svg"] {
        assert!(out.join(f).exists(), "{f}");
    }
}

#[test]
fn failed_property_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "c.json",
        r#"{"experiment": "picard",
            "model": {"id": "linear_memory_meanfield", "params": {"gamma": 0.5}},
            "grid": {"h": 0.05, "T_hist": 0.5, "T": 1.0}, "M": 8,
            "params": {"tol": 1e-14, "max_iter": 1, "mean_ode_check": false}}"#,
    );
    let o = memflow(&["picard", "--config", &cfg, "--out", dir.path().join("o").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stdout).contains("FAIL converged"));
}

#[test]
fn schema_errors_exit_1_naming_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.json", &ZERO.replace("\"M\"", "\"particles\""));
    let o = memflow(&["simulate", "--config", &cfg, "--out", dir.path().join("o").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("particles"));
    let o = memflow(&["simulate", "--config", dir.path().join("missing.json").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn blow_up_exits_1_with_context() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "c.json",
        r#"{"experiment": "simulate",
            "model": {"id": "cubic_monotone_memory", "params": {"a": 0.0, "sigma0": 0.0}},
            "grid": {"h": 0.5, "T_hist": 0.5, "T": 20.0}, "M": 1,
            "initial": {"kind": "point", "x": [100.0]},
            "sim": {"taming": false}}"#,
    );
    let o = memflow(&["simulate", "--config", &cfg, "--out", dir.path().join("o").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("blow-up"));
}

#[test]
fn seed_override_and_thread_count() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "c.json",
        r#"{"experiment": "simulate", "model": {"id": "linear_memory_meanfield"},
            "grid": {"h": 0.05, "T_hist": 0.5, "T": 1.0}, "M": 16, "seed": 1}"#,
    );
    let summary = |seed: &str, threads: &str, tag: &str| {
        let out = dir.path().join(tag);
        let o = memflow(&["simulate", "--config", &cfg, "--seed", seed, "--threads", threads, "--out", out.to_str().unwrap()]);
        assert_eq!(o.status.code(), Some(0));
        std::fs::read_to_string(out.join("summary.json")).unwrap()
    };
    let a = summary("7", "1", "a");
    let b = summary("7", "4", "b");
    let c = summary("8", "1", "c");
    assert_eq!(a, b);
    assert_ne!(a, c);
    assert!(a.contains("\"seed\": 7"));
}
