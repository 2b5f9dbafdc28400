//! Config-driven experiments with CSV/JSON artifacts.

mod initial;
mod runners;

pub use initial::InitialLaw;
pub use runners::{
    CheckAssumptionsParams, CoupleParams, ExpMomentsParams, FlowSource, LipschitzParams,
    LpqParams, MomentsParams, PicardParams, SimulateParams,
};

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::coefficients::{builtin_model, CoefficientSet, ModelSpec};
use crate::engine::{EnsembleState, SimOptions};
use crate::error::{Error, Result};
use crate::grid::GridSpec;
use crate::io::{self, Series};
use crate::noise::NoisePlan;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentId {
    Simulate,
    Picard,
    Couple,
    Lipschitz,
    Moments,
    ExpMoments,
    CheckAssumptions,
    LpqDiagnose,
}

impl ExperimentId {
    pub const ALL: [ExperimentId; 8] = [
        ExperimentId::Simulate,
        ExperimentId::Picard,
        ExperimentId::Couple,
        ExperimentId::Lipschitz,
        ExperimentId::Moments,
        ExperimentId::ExpMoments,
        ExperimentId::CheckAssumptions,
        ExperimentId::LpqDiagnose,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ExperimentId::Simulate => "simulate",
            ExperimentId::Picard => "picard",
            ExperimentId::Couple => "couple",
            ExperimentId::Lipschitz => "lipschitz",
            ExperimentId::Moments => "moments",
            ExperimentId::ExpMoments => "exp-moments",
            ExperimentId::CheckAssumptions => "check-assumptions",
            ExperimentId::LpqDiagnose => "lpq-diagnose",
        }
    }
}

impl fmt::Display for ExperimentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ExperimentId {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        ExperimentId::ALL
            .into_iter()
            .find(|e| e.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown experiment `{s}`")))
    }
}

/// `{"h", "T_hist", "T", "d"}`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridBlock {
    pub h: f64,
    #[serde(rename = "T_hist")]
    pub t_hist: f64,
    #[serde(rename = "T")]
    pub horizon: f64,
    #[serde(default = "one_usize")]
    pub d: usize,
}

fn one_usize() -> usize {
    1
}

fn one_f64() -> f64 {
    1.0
}

fn default_m() -> usize {
    256
}

fn schema_v1() -> u32 {
    SCHEMA_VERSION
}

fn empty_object() -> serde_json::Value {
    serde_json::Value::Object(Default::default())
}

/// A run configuration. Unknown keys are rejected at every level.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "schema_v1")]
    pub schema_version: u32,
    pub experiment: ExperimentId,
    pub model: ModelSpec,
    pub grid: GridBlock,
    #[serde(default = "one_f64")]
    pub tau: f64,
    #[serde(rename = "M", default = "default_m")]
    pub m: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub initial: InitialLaw,
    #[serde(default)]
    pub sim: SimOptions,
    /// Experiment-specific block; see the per-experiment parameter types.
    #[serde(default = "empty_object")]
    pub params: serde_json::Value,
    /// Not part of the echoed config.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<String>,
}

impl RunConfig {
    pub fn from_json(s: &str) -> Result<RunConfig> {
        serde_json::from_str(s).map_err(|e| Error::Config(format!("config: {e}")))
    }

    pub fn from_path(path: &Path) -> Result<RunConfig> {
        let s = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        RunConfig::from_json(&s)
    }

    pub fn grid_spec(&self) -> Result<GridSpec> {
        GridSpec::new(self.grid.h, self.grid.t_hist, self.grid.horizon)
    }

    pub fn coefficients(&self) -> Result<CoefficientSet> {
        builtin_model(&self.model, &self.grid_spec()?, self.tau, self.grid.d)
    }

    /// Validate and write out every default. Idempotent.
    pub fn resolve(&self) -> Result<RunConfig> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "schema_version {} is not supported (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        if self.m == 0 {
            return Err(Error::Config("M must be >= 1".into()));
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::Config(format!("tau = {} must be > 0", self.tau)));
        }
        let grid = self.grid_spec()?;
        grid.coarsen(self.sim.stride)?;
        let coeffs = self.coefficients()?;
        let mut out = self.clone();
        out.output_dir = None;
        out.model = self.model.resolved()?;
        out.sim.taming = Some(self.sim.taming.unwrap_or(coeffs.flags.non_lipschitz));
        out.sim.drift_cap = Some(self.sim.drift_cap.unwrap_or(coeffs.flags.singular));
        out.initial = self.initial.resolved(self.grid.d)?;
        out.params = runners::resolve_params(self.experiment, &self.params, &out.model, &coeffs, &grid)?;
        Ok(out)
    }
}

/// Pass/fail of one declared property.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    pub fn new(name: &str, passed: bool, detail: impl Into<String>) -> Self {
        Check {
            name: name.to_string(),
            passed,
            detail: detail.into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub master_seed: u64,
    pub generator: String,
    pub stream_rule: String,
    pub version: String,
}

/// Everything a run reports. Contains no timing or thread information, so
/// identical configs give byte-identical summaries.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub schema_version: u32,
    pub experiment: ExperimentId,
    pub config: RunConfig,
    pub metrics: serde_json::Value,
    pub checks: Vec<Check>,
    pub passed: bool,
    pub warnings: Vec<String>,
    /// Series name to CSV file name.
    pub series: BTreeMap<String, String>,
    pub provenance: Provenance,
}

impl RunSummary {
    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }
}

/// Summary plus the artifacts that go to disk.
#[derive(Clone, Debug)]
pub struct RunOutput {
    pub summary: RunSummary,
    pub series: Vec<(String, Series)>,
    pub ensembles: Vec<(String, EnsembleState)>,
}

/// Shared inputs of every runner.
pub(crate) struct Context<'a> {
    pub config: &'a RunConfig,
    pub grid: GridSpec,
    pub coeffs: CoefficientSet,
    pub noise: NoisePlan,
    pub opts: SimOptions,
}

/// What a runner returns before it is wrapped into a summary.
#[derive(Default)]
pub(crate) struct Outcome {
    pub metrics: serde_json::Map<String, serde_json::Value>,
    pub checks: Vec<Check>,
    pub warnings: Vec<String>,
    pub series: Vec<(String, Series)>,
    pub ensembles: Vec<(String, EnsembleState)>,
}

impl Outcome {
    pub fn metric<T: Serialize>(&mut self, key: &str, value: T) -> Result<()> {
        self.metrics.insert(key.to_string(), serde_json::to_value(value)?);
        Ok(())
    }
}

/// Execute a config on the current rayon pool.
pub fn run(config: &RunConfig) -> Result<RunOutput> {
    let resolved = config.resolve()?;
    let grid = resolved.grid_spec()?;
    let coeffs = resolved.coefficients()?;
    let ctx = Context {
        config: &resolved,
        grid,
        coeffs,
        noise: NoisePlan::new(resolved.seed),
        opts: resolved.sim,
    };
    let out = runners::dispatch(&ctx)?;
    let passed = out.checks.iter().all(|c| c.passed);
    let series = out
        .series
        .iter()
        .map(|(name, _)| (name.clone(), format!("{name}.csv")))
        .collect();
    let summary = RunSummary {
        schema_version: SCHEMA_VERSION,
        experiment: resolved.experiment,
        metrics: serde_json::Value::Object(out.metrics),
        checks: out.checks,
        passed,
        warnings: out.warnings,
        series,
        provenance: Provenance {
            master_seed: resolved.seed,
            generator: "ChaCha8".into(),
            stream_rule: "seed_from_u64(master_seed), stream (particle << 20) | phase_tag".into(),
            version: env!("CARGO_PKG_VERSION").into(),
        },
        config: resolved,
    };
    Ok(RunOutput {
        summary,
        series: out.series,
        ensembles: out.ensembles,
    })
}

/// Execute on a dedicated pool of `threads` workers (0 = rayon default).
pub fn run_with_threads(config: &RunConfig, threads: usize) -> Result<RunOutput> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    pool.install(|| run(config))
}

/// Write `summary.json`, `config.resolved.json`, series CSVs and ensembles.
pub fn write_artifacts(out: &RunOutput, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("summary.json"), out.summary.to_json()?)?;
    io::write_json(&dir.join("config.resolved.json"), &out.summary.config)?;
    for (name, s) in &out.series {
        s.write_csv(&dir.join(format!("{name}.csv")))?;
    }
    for (name, ens) in &out.ensembles {
        io::write_ensemble(&dir.join(name), ens, &out.summary.config.model, out.summary.config.seed)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests;
