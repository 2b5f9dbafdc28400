//! `memflow <experiment> --config <path> [--seed N] [--out DIR] [--threads N] [--plots]`

mod plots;

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context as _};
use clap::Parser;
use memflow::experiment::{run_with_threads, write_artifacts, ExperimentId, RunConfig};

#[derive(Parser, Debug)]
#[command(name = "memflow", version, about = "Run a simulation experiment from a JSON config")]
struct Cli {
    /// simulate, picard, couple, lipschitz, moments, exp-moments,
    /// check-assumptions or lpq-diagnose
    experiment: ExperimentId,
    #[arg(long)]
    config: PathBuf,
    /// Overrides `seed` in the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides `output_dir`; defaults to `runs/<experiment>`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads; 0 uses every core.
    #[arg(long, default_value_t = 0)]
    threads: usize,
    /// Also write SVG plots of the series.
    #[arg(long)]
    plots: bool,
}

fn execute(cli: &Cli) -> anyhow::Result<bool> {
    let mut cfg = RunConfig::from_path(&cli.config)?;
    if cfg.experiment != cli.experiment {
        bail!(
            "config {} is for `{}`, not `{}`",
            cli.config.display(),
            cfg.experiment,
            cli.experiment
        );
    }
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    let dir = cli
        .out
        .clone()
        .or_else(|| cfg.output_dir.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("runs").join(cli.experiment.as_str()));

    let start = Instant::now();
    let out = run_with_threads(&cfg, cli.threads).with_context(|| format!("experiment `{}`", cli.experiment))?;
    let elapsed = start.elapsed().as_secs_f64();
    write_artifacts(&out, &dir).with_context(|| format!("writing to {}", dir.display()))?;
    let timing = serde_json::json!({"wall_clock_seconds": elapsed, "threads": cli.threads});
    std::fs::write(dir.join("timing.json"), serde_json::to_string_pretty(&timing)? + "\n")?;

    if cli.plots {
        for notice in plots::emit(&dir, &out.summary)? {
            eprintln!("{notice}");
        }
    }
    for c in &out.summary.checks {
        println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
    for w in &out.summary.warnings {
        eprintln!("warning: {w}");
    }
    println!("artifacts in {} ({elapsed:.2} s)", dir.display());
    Ok(out.summary.passed)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
