//! One function per experiment. Each parameter block has a `resolve` step
//! that fills every default so the echoed config replays exactly.

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{Check, Context, ExperimentId, InitialLaw, Outcome};
use crate::coefficients::{
    check_assumption, AssumptionId, CoefficientSet, LinearMemoryParams, LpqGrid, ModelSpec, RandomSampler, Sampler,
    SamplerConfig, LINEAR_MEMORY, ZERO,
};
use crate::coupling::{
    decay_fit, log_harnack_profile, run_coupling, CouplingConfig, TestFunction,
};
use crate::engine::{exp_moment, moment_curve, point_initials, simulate_frozen, simulate_interacting, EnsembleState, Mode, SimOptions};
use crate::error::{Error, Result};
use crate::grid::GridSpec;
use crate::io::Series;
use crate::measure::{EmpiricalMeasure, EmpiricalMeasureFlow};
use crate::noise::Phase;
use crate::picard::{contraction_report, default_theta, solve_fixed_point, PicardConfig};
use crate::segment::{Trajectory, WeightedSegment};
use crate::stats;

fn parse<T: DeserializeOwned>(exp: ExperimentId, v: &Value) -> Result<T> {
    serde_json::from_value(v.clone()).map_err(|e| Error::Config(format!("params of `{exp}`: {e}")))
}

fn check_finite(name: &str, v: f64) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(Error::Config(format!("params.{name} = {v} must be finite")))
    }
}

pub(super) fn resolve_params(
    exp: ExperimentId,
    params: &Value,
    model: &ModelSpec,
    coeffs: &CoefficientSet,
    grid: &GridSpec,
) -> Result<Value> {
    let v = match exp {
        ExperimentId::Simulate => serde_json::to_value(parse::<SimulateParams>(exp, params)?.resolve()?)?,
        ExperimentId::Picard => serde_json::to_value(parse::<PicardParams>(exp, params)?.resolve(model, coeffs)?)?,
        ExperimentId::Couple => serde_json::to_value(parse::<CoupleParams>(exp, params)?.resolve(coeffs, grid)?)?,
        ExperimentId::Lipschitz => serde_json::to_value(parse::<LipschitzParams>(exp, params)?.resolve()?)?,
        ExperimentId::Moments => serde_json::to_value(parse::<MomentsParams>(exp, params)?.resolve()?)?,
        ExperimentId::ExpMoments => serde_json::to_value(parse::<ExpMomentsParams>(exp, params)?.resolve(model, coeffs)?)?,
        ExperimentId::CheckAssumptions => {
            serde_json::to_value(parse::<CheckAssumptionsParams>(exp, params)?.resolve(coeffs)?)?
        }
        ExperimentId::LpqDiagnose => serde_json::to_value(parse::<LpqParams>(exp, params)?.resolve(coeffs, grid)?)?,
    };
    Ok(v)
}

pub(super) fn dispatch(ctx: &Context<'_>) -> Result<Outcome> {
    let exp = ctx.config.experiment;
    let p = &ctx.config.params;
    match exp {
        ExperimentId::Simulate => simulate(ctx, &parse(exp, p)?),
        ExperimentId::Picard => picard(ctx, &parse(exp, p)?),
        ExperimentId::Couple => couple(ctx, &parse(exp, p)?),
        ExperimentId::Lipschitz => lipschitz(ctx, &parse(exp, p)?),
        ExperimentId::Moments => moments(ctx, &parse(exp, p)?),
        ExperimentId::ExpMoments => exp_moments(ctx, &parse(exp, p)?),
        ExperimentId::CheckAssumptions => check_assumptions(ctx, &parse(exp, p)?),
        ExperimentId::LpqDiagnose => lpq_diagnose(ctx, &parse(exp, p)?),
    }
}

impl Context<'_> {
    fn initials(&self, law: &InitialLaw, phase: Phase) -> Result<Vec<WeightedSegment>> {
        law.sample(self.config.m, self.config.grid.d, self.config.tau, &self.grid, &self.noise, phase)
    }

    fn fine_only(&self) -> Result<()> {
        if self.opts.stride != 1 {
            return Err(Error::Config(format!(
                "`{}` runs on the simulation grid; sim.stride must be 1",
                self.config.experiment
            )));
        }
        Ok(())
    }

    fn constant_flow(&self, initials: &[WeightedSegment]) -> Result<EmpiricalMeasureFlow> {
        EmpiricalMeasureFlow::constant(self.grid, EmpiricalMeasure::new(initials.to_vec())?)
    }

    fn linear_params(&self) -> Option<LinearMemoryParams> {
        linear_params(&self.config.model)
    }
}

fn linear_params(model: &ModelSpec) -> Option<LinearMemoryParams> {
    (model.id == LINEAR_MEMORY)
        .then(|| serde_json::from_value(model.params.clone()).ok())
        .flatten()
}

fn mean_series(ens: &EnsembleState) -> Series {
    let mut s = Series::new(&["t", "mean", "stderr"]);
    for (k, e) in ens.mean_path().iter().enumerate() {
        s.push(vec![ens.grid.time(k), e.mean, e.stderr]);
    }
    s
}

fn warn_capped(out: &mut Outcome, capped: u64) {
    if capped > 0 {
        out.warnings
            .push(format!("singular drift was capped in {capped} evaluations"));
    }
}

// ---------------------------------------------------------------- simulate

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulateParams {
    pub mode: Mode,
    /// Exponent of the pathwise shift bound.
    pub shift_bound_p: f64,
    pub moment_k: f64,
    /// Write every particle path to `ensemble/`.
    pub write_ensemble: bool,
}

impl Default for SimulateParams {
    fn default() -> Self {
        SimulateParams {
            mode: Mode::Interacting,
            shift_bound_p: 2.0,
            moment_k: 2.0,
            write_ensemble: false,
        }
    }
}

impl SimulateParams {
    fn resolve(self) -> Result<Self> {
        if !(self.shift_bound_p > 0.0) || !self.shift_bound_p.is_finite() {
            return Err(Error::Config(format!("params.shift_bound_p = {} must be > 0", self.shift_bound_p)));
        }
        check_finite("moment_k", self.moment_k)?;
        Ok(self)
    }
}

fn simulate(ctx: &Context<'_>, p: &SimulateParams) -> Result<Outcome> {
    let initials = ctx.initials(&ctx.config.initial, Phase::Initial)?;
    let ens = match p.mode {
        Mode::Interacting => simulate_interacting(&ctx.coeffs, &initials, &ctx.grid, &ctx.noise, &ctx.opts)?.0,
        Mode::FrozenFlow => {
            let flow = ctx.constant_flow(&initials)?;
            simulate_frozen(&ctx.coeffs, &flow, &initials, &ctx.grid, &ctx.noise, &ctx.opts)?
        }
    };
    let mut out = Outcome::default();
    let violations = ens.shift_bound_violations(p.shift_bound_p);
    out.checks.push(Check::new(
        "shift_bound",
        violations == 0,
        format!("{violations} violations over {} particles", ens.len()),
    ));
    if ctx.config.model.id == ZERO {
        let moving = ens
            .particles()
            .iter()
            .filter(|tr| (0..=ens.grid.sim_steps()).any(|k| tr.state(k) != tr.state(0)))
            .count();
        out.checks.push(Check::new(
            "constant_trajectories",
            moving == 0,
            format!("{moving} particles moved"),
        ));
    }
    let curve = moment_curve(&ens, p.moment_k)?;
    let last = curve.last().expect("grid has a node");
    let mean = ens.mean_path();
    out.metric("particles", ens.len())?;
    out.metric("recorded_steps", ens.grid.sim_steps())?;
    out.metric("tamed", ens.tamed)?;
    out.metric("capped_evaluations", ens.capped_evaluations)?;
    out.metric("shift_bound_violations", violations)?;
    out.metric("final_mean", mean.last().expect("nonempty"))?;
    out.metric("final_moment", last)?;
    warn_capped(&mut out, ens.capped_evaluations);

    let mut ms = Series::new(&["t", "moment", "moment_stderr", "sup_moment", "sup_moment_stderr"]);
    for c in &curve {
        ms.push(vec![c.t, c.moment, c.moment_stderr, c.sup_moment, c.sup_moment_stderr]);
    }
    out.series.push(("mean".into(), mean_series(&ens)));
    out.series.push(("moments".into(), ms));
    if p.write_ensemble {
        out.ensembles.push(("ensemble".into(), ens));
    }
    Ok(out)
}

// ---------------------------------------------------------------- picard

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PicardParams {
    pub tol: f64,
    pub max_iter: usize,
    pub theta: Option<f64>,
    pub common_noise: bool,
    /// Extra weight rates for the contraction report.
    pub theta_grid: Vec<f64>,
    /// Compare the fixed-point mean with `m0 e^{(gamma - a) t}`; defaults
    /// to on for the linear model without memory.
    pub mean_ode_check: Option<bool>,
    pub write_fixed_point: bool,
}

impl Default for PicardParams {
    fn default() -> Self {
        let c = PicardConfig::default();
        PicardParams {
            tol: c.tol,
            max_iter: c.max_iter,
            theta: None,
            common_noise: c.common_noise,
            theta_grid: Vec::new(),
            mean_ode_check: None,
            write_fixed_point: false,
        }
    }
}

impl PicardParams {
    fn resolve(mut self, model: &ModelSpec, coeffs: &CoefficientSet) -> Result<Self> {
        let theta = match self.theta {
            Some(t) => t,
            None => default_theta(coeffs)?,
        };
        self.theta = Some(theta);
        if self.theta_grid.is_empty() {
            self.theta_grid = vec![0.0, 0.5 * theta, theta, 2.0 * theta];
        }
        for t in &self.theta_grid {
            if !(*t >= 0.0 && t.is_finite()) {
                return Err(Error::Config(format!("params.theta_grid entry {t} must be finite and >= 0")));
            }
        }
        if self.mean_ode_check.is_none() {
            self.mean_ode_check = Some(linear_params(model).is_some_and(|p| p.beta == 0.0));
        }
        Ok(self)
    }

    fn config(&self, taming: Option<bool>) -> PicardConfig {
        PicardConfig {
            tol: self.tol,
            max_iter: self.max_iter,
            theta: self.theta,
            common_noise: self.common_noise,
            taming,
        }
    }
}

fn picard(ctx: &Context<'_>, p: &PicardParams) -> Result<Outcome> {
    ctx.fine_only()?;
    let initials = ctx.initials(&ctx.config.initial, Phase::Initial)?;
    let gamma = EmpiricalMeasure::new(initials.clone())?;
    let trace = solve_fixed_point(&ctx.coeffs, &gamma, &ctx.grid, &p.config(ctx.opts.taming), &ctx.noise)?;
    let mut out = Outcome::default();
    out.checks.push(Check::new(
        "converged",
        trace.converged,
        format!("{} iterations, last gap {:e}", trace.iterations_used, trace.distances.last().copied().unwrap_or(f64::NAN)),
    ));
    let max_ratio = trace.max_ratio();
    out.checks.push(Check::new(
        "contraction",
        max_ratio.is_none_or(|r| r < 1.0),
        match max_ratio {
            Some(r) => format!("max ratio {r} at theta {}", trace.theta),
            None => "no defined ratios (gaps at the floor)".into(),
        },
    ));
    out.metric("picard", trace.summary())?;
    match contraction_report(&trace, &p.theta_grid) {
        Ok(r) => out.metric("contraction_report", r)?,
        Err(e) => out.warnings.push(format!("contraction report skipped: {e}")),
    }

    let paths = trace
        .fixed_point()
        .paths()
        .ok_or_else(|| Error::Insufficient("fixed point has no particle paths".into()))?;
    let ens = EnsembleState::from_particles(Mode::FrozenFlow, paths.to_vec())?;
    let mean = ens.mean_path();
    let mut ms = Series::new(&["t", "mean", "stderr", "oracle"]);
    if p.mean_ode_check == Some(true) {
        let lp = ctx
            .linear_params()
            .ok_or_else(|| Error::Config("mean_ode_check needs the linear memory model".into()))?;
        if lp.beta != 0.0 {
            return Err(Error::Config("mean_ode_check needs beta = 0".into()));
        }
        let m0 = mean[0].mean;
        let h = ctx.grid.h();
        let mut worst = 0.0f64;
        let mut failures = 0;
        for (k, e) in mean.iter().enumerate() {
            let t = ens.grid.time(k);
            let oracle = m0 * ((lp.gamma - lp.a) * t).exp();
            let dev = (e.mean - oracle).abs();
            let band = 3.0 * (e.stderr + 2.0 * h);
            worst = worst.max(dev / band);
            failures += usize::from(dev > band);
            ms.push(vec![t, e.mean, e.stderr, oracle]);
        }
        out.checks.push(Check::new(
            "mean_ode",
            failures == 0,
            format!("{failures} grid times outside 3 (stderr + 2h); worst deviation/band {worst:.3}"),
        ));
        out.metric("mean_ode_worst_ratio", worst)?;
    } else {
        for (k, e) in mean.iter().enumerate() {
            ms.push(vec![ens.grid.time(k), e.mean, e.stderr, f64::NAN]);
        }
    }
    let mut tr = Series::new(&["iteration", "distance", "ratio"]);
    for (j, d) in trace.distances.iter().enumerate() {
        let r = if j == 0 { None } else { trace.ratios[j - 1] };
        tr.push(vec![(j + 1) as f64, *d, r.unwrap_or(f64::NAN)]);
    }
    out.series.push(("picard_trace".into(), tr));
    out.series.push(("fixed_point_mean".into(), ms));
    if p.write_fixed_point {
        out.ensembles.push(("fixed_point".into(), ens));
    }
    Ok(out)
}

// ---------------------------------------------------------------- couple

/// Where the two measure flows of a coupling come from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FlowSource {
    /// `picard` for distribution-dependent models, else `constant`.
    Auto,
    /// Fixed points started from each initial law.
    Picard,
    /// Realized flows of interacting particle systems.
    Interacting,
    /// Constant flows at the initial laws.
    Constant,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CoupleParams {
    pub kappa: Option<f64>,
    pub tau0: Option<f64>,
    pub optimal_pairing: bool,
    pub ess_warn_fraction: f64,
    /// Law of the second system.
    pub initial_nu: InitialLaw,
    /// Moment order of the decay fit.
    pub p: f64,
    pub bootstrap_reps: usize,
    pub flows: FlowSource,
    /// Weight rate and tolerance of the Picard flows.
    pub picard_theta: Option<f64>,
    pub picard_tol: f64,
    /// Enables the log-Harnack profile.
    pub test_function: Option<TestFunction>,
    pub burn_in: Option<f64>,
    pub profile_points: usize,
    pub bound_check_points: usize,
}

impl Default for CoupleParams {
    fn default() -> Self {
        let c = CouplingConfig::default();
        CoupleParams {
            kappa: None,
            tau0: None,
            optimal_pairing: c.optimal_pairing,
            ess_warn_fraction: c.ess_warn_fraction,
            initial_nu: InitialLaw::Point { x: vec![0.0] },
            p: 1.0,
            bootstrap_reps: 200,
            flows: FlowSource::Auto,
            picard_theta: None,
            picard_tol: PicardConfig::default().tol,
            test_function: None,
            burn_in: None,
            profile_points: 20,
            bound_check_points: 20,
        }
    }
}

impl CoupleParams {
    fn coupling_config(&self, taming: Option<bool>) -> CouplingConfig {
        CouplingConfig {
            kappa: self.kappa,
            tau0: self.tau0,
            optimal_pairing: self.optimal_pairing,
            ess_warn_fraction: self.ess_warn_fraction,
            taming,
        }
    }

    fn resolve(mut self, coeffs: &CoefficientSet, grid: &GridSpec) -> Result<Self> {
        let (kappa, tau0) = self.coupling_config(None).resolve(coeffs)?;
        self.kappa = Some(kappa);
        self.tau0 = Some(tau0);
        self.initial_nu = self.initial_nu.resolved(coeffs.dim())?;
        if !(self.p >= 1.0) || !self.p.is_finite() {
            return Err(Error::Config(format!("params.p = {} must be >= 1", self.p)));
        }
        if self.flows == FlowSource::Auto {
            self.flows = if coeffs.flags.distribution_dependent {
                FlowSource::Picard
            } else {
                FlowSource::Constant
            };
        }
        if self.flows == FlowSource::Picard && self.picard_theta.is_none() {
            self.picard_theta = Some(default_theta(coeffs)?);
        }
        let burn = self.burn_in.unwrap_or(grid.horizon() / 4.0);
        if !(0.0..=grid.horizon()).contains(&burn) {
            return Err(Error::Config(format!("params.burn_in = {burn} must lie in [0, T]")));
        }
        self.burn_in = Some(burn);
        if let Some(f) = &self.test_function {
            f.compile(coeffs.dim())?;
        }
        if self.profile_points < 2 {
            return Err(Error::Config("params.profile_points must be >= 2".into()));
        }
        Ok(self)
    }
}

/// `n` steps spread evenly over `0..=steps`, endpoints included.
fn even_steps(steps: usize, n: usize) -> Vec<usize> {
    let n = n.clamp(1, steps + 1);
    if n == 1 {
        return vec![steps];
    }
    let mut v: Vec<usize> = (0..n).map(|i| (i * steps + (n - 1) / 2) / (n - 1)).collect();
    v.dedup();
    v
}

fn couple(ctx: &Context<'_>, p: &CoupleParams) -> Result<Outcome> {
    ctx.fine_only()?;
    let c = &ctx.coeffs;
    let mu0 = ctx.initials(&ctx.config.initial, Phase::Initial)?;
    let nu0 = ctx.initials(&p.initial_nu, Phase::InitialAlt)?;
    let mut out = Outcome::default();
    let (flow_mu, flow_nu) = match p.flows {
        FlowSource::Constant | FlowSource::Auto => (ctx.constant_flow(&mu0)?, ctx.constant_flow(&nu0)?),
        FlowSource::Interacting => (
            simulate_interacting(c, &mu0, &ctx.grid, &ctx.noise, &ctx.opts)?.1,
            simulate_interacting(c, &nu0, &ctx.grid, &ctx.noise, &ctx.opts)?.1,
        ),
        FlowSource::Picard => {
            let cfg = PicardConfig {
                tol: p.picard_tol,
                theta: p.picard_theta,
                taming: ctx.opts.taming,
                ..PicardConfig::default()
            };
            let tm = solve_fixed_point(c, &EmpiricalMeasure::new(mu0.clone())?, &ctx.grid, &cfg, &ctx.noise)?;
            let tn = solve_fixed_point(c, &EmpiricalMeasure::new(nu0.clone())?, &ctx.grid, &cfg, &ctx.noise)?;
            for (name, t) in [("mu", &tm), ("nu", &tn)] {
                if !t.converged {
                    out.warnings.push(format!("Picard flow for {name} did not reach tol"));
                }
            }
            out.metric("picard_iterations", [tm.iterations_used, tn.iterations_used])?;
            (tm.fixed_point().clone(), tn.fixed_point().clone())
        }
    };
    let run = run_coupling(c, &mu0, &nu0, &flow_mu, &flow_nu, &ctx.grid, &ctx.noise, &p.coupling_config(ctx.opts.taming))?;

    let replay = run.ledger.replay_mismatches(&ctx.noise, run.phase);
    out.checks.push(Check::new(
        "ledger_replay",
        replay == 0,
        format!("{replay} mismatched increments"),
    ));
    let fit = decay_fit(&run, p.p, p.bootstrap_reps, ctx.config.seed)?;
    out.checks.push(Check::new(
        "decay_rate",
        fit.meets_target() && fit.ci_excludes_zero(),
        format!("slope {} (target {}), ci {:?}", fit.slope, fit.target_slope, fit.ci),
    ));
    out.metric("decay_fit", &fit)?;
    if c.constants.sigma_inv.is_some() {
        let steps = even_steps(run.steps().saturating_sub(1), p.bound_check_points);
        let ratio = run.zeta_bar_bound_ratio(c, &flow_mu, &flow_nu, &steps)?;
        out.checks.push(Check::new(
            "zeta_bar_bound",
            ratio <= 1.0,
            format!("max |zbar|^2 / bound = {ratio}"),
        ));
        out.metric("zeta_bar_bound_ratio", ratio)?;
    } else {
        out.warnings.push("no sigma^-1 bound declared; zeta_bar bound not checked".into());
    }
    out.metric("kappa", run.kappa)?;
    out.metric("tau0", run.tau0)?;
    out.metric("w2_initial", run.w2_initial)?;
    out.metric("min_ess", run.min_ess)?;
    out.metric("final_entropy_estimate", run.entropy_estimate(run.steps()))?;
    out.metric("capped_evaluations", run.capped_evaluations)?;
    if run.ess_warning {
        out.warnings.push(format!("effective sample size fell to {}", run.min_ess));
    }
    warn_capped(&mut out, run.capped_evaluations);

    let mut gs = Series::new(&[
        "t",
        "gap_p_weighted",
        "gap_p_weighted_stderr",
        "gap_p_plain",
        "ess",
        "entropy_estimate",
        "entropy_raw",
    ]);
    for g in run.gap_series(p.p)? {
        gs.push(vec![g.t, g.gap_p_weighted, g.gap_p_weighted_stderr, g.gap_p_plain, g.ess, g.entropy_estimate, g.entropy_raw]);
    }
    out.series.push(("coupling".into(), gs));

    if let Some(f) = &p.test_function {
        let burn = p.burn_in.unwrap_or(0.0);
        let steps = even_steps(run.steps(), p.profile_points);
        let prof = log_harnack_profile(&run, c, f, &steps, burn)?;
        out.checks.push(Check::new(
            "log_harnack_trend",
            prof.nonincreasing(),
            format!("Mann-Kendall z = {:.3} after t = {burn}", prof.trend.z),
        ));
        out.metric("log_harnack_trend", prof.trend)?;
        out.metric("log_harnack_final", prof.points.last())?;
        let mut ls = Series::new(&[
            "t",
            "lhs",
            "lhs_stderr",
            "log_ptf",
            "log_ptf_stderr",
            "defect",
            "defect_stderr",
            "w2sq_term",
            "grad_term",
            "entropy_estimate",
        ]);
        for q in &prof.points {
            ls.push(vec![
                q.t,
                q.lhs,
                q.lhs_stderr,
                q.log_ptf,
                q.log_ptf_stderr,
                q.defect,
                q.defect_stderr,
                q.w2sq_term,
                q.grad_term,
                q.entropy_estimate,
            ]);
        }
        out.series.push(("log_harnack".into(), ls));
    }
    Ok(out)
}

// ---------------------------------------------------------------- lipschitz

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LipschitzParams {
    pub pairs: usize,
    /// Factors applied to `eta - xi`.
    pub scales: Vec<f64>,
    pub k: f64,
    pub sampler: SamplerConfig,
    /// Relative tolerance of the scale invariance on the linear model.
    pub invariance_tol: f64,
}

impl Default for LipschitzParams {
    fn default() -> Self {
        LipschitzParams {
            pairs: 100,
            scales: vec![0.5, 2.0, 10.0],
            k: 2.0,
            sampler: SamplerConfig {
                scale_min: 0.1,
                scale_max: 2.0,
                local_fraction: 0.0,
                ..SamplerConfig::default()
            },
            invariance_tol: 1e-12,
        }
    }
}

impl LipschitzParams {
    fn resolve(self) -> Result<Self> {
        if self.pairs == 0 {
            return Err(Error::Config("params.pairs must be >= 1".into()));
        }
        if self.scales.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
            return Err(Error::Config("params.scales must be positive and finite".into()));
        }
        if !(self.k >= 1.0) || !self.k.is_finite() {
            return Err(Error::Config(format!("params.k = {} must be >= 1", self.k)));
        }
        Ok(self)
    }
}

/// `sup_t ||a_t - b_t||_tau`.
fn sup_gap(a: &Trajectory, b: &Trajectory) -> Result<f64> {
    let diff: Vec<f64> = a.values().iter().zip(b.values()).map(|(x, y)| x - y).collect();
    let d = Trajectory::new(*a.grid(), a.tau(), a.dim(), diff)?;
    Ok(d.segment_norms().into_iter().fold(0.0, f64::max))
}

fn lipschitz(ctx: &Context<'_>, p: &LipschitzParams) -> Result<Outcome> {
    let c = &ctx.coeffs;
    let initials = ctx.initials(&ctx.config.initial, Phase::Initial)?;
    let flow = if c.flags.distribution_dependent {
        simulate_interacting(c, &initials, &ctx.grid, &ctx.noise, &SimOptions { stride: 1, ..ctx.opts })?.1
    } else {
        ctx.constant_flow(&initials)?
    };
    let mut sampler = RandomSampler::new(ctx.grid, ctx.config.tau, c.dim(), p.sampler.clone(), ctx.config.seed)?;
    let mut xis = Vec::with_capacity(p.pairs);
    let mut diffs = Vec::with_capacity(p.pairs);
    for _ in 0..p.pairs {
        let s = sampler.next_sample().ok_or(Error::SamplerExhausted(xis.len()))?;
        diffs.push(s.eta.axpy(-1.0, &s.xi)?);
        xis.push(s.xi);
    }
    // pair i uses particle stream i in every run
    let run = |inits: &[WeightedSegment]| simulate_frozen(c, &flow, inits, &ctx.grid, &ctx.noise, &ctx.opts);
    let base = run(&xis)?;
    let mut scales = vec![1.0];
    scales.extend(p.scales.iter().copied());
    // ratios[s][i] = sup gap / ||xi - eta_s||
    let mut ratios = Vec::with_capacity(scales.len());
    for &s in &scales {
        let etas: Vec<WeightedSegment> = xis
            .iter()
            .zip(&diffs)
            .map(|(x, dlt)| x.axpy(s, dlt))
            .collect::<Result<_>>()?;
        let other = run(&etas)?;
        let r = base
            .particles()
            .iter()
            .zip(other.particles())
            .zip(xis.iter().zip(&etas))
            .map(|((a, b), (x, e))| Ok(sup_gap(a, b)? / x.distance(e)?))
            .collect::<Result<Vec<f64>>>()?;
        ratios.push(r);
    }
    let all: Vec<f64> = ratios.iter().flatten().copied().collect();
    let max_ratio = all.iter().copied().fold(0.0, f64::max);
    let finite = all.iter().all(|r| r.is_finite());
    let kth: Vec<f64> = ratios[0].iter().map(|r| r.powf(p.k)).collect();
    let mean_kth = stats::estimate(&kth);

    let mut out = Outcome::default();
    out.metric("pairs", p.pairs)?;
    out.metric("max_ratio", max_ratio)?;
    out.metric("mean_ratio_pow_k", mean_kth)?;
    if c.name() == LINEAR_MEMORY && !ctx.opts.taming.unwrap_or(false) {
        let mut worst = 0.0f64;
        for r in &ratios[1..] {
            for (a, b) in r.iter().zip(&ratios[0]) {
                worst = worst.max((a / b - 1.0).abs());
            }
        }
        out.checks.push(Check::new(
            "scale_invariance",
            finite && worst <= p.invariance_tol,
            format!("max relative change of the ratio {worst:e}"),
        ));
        out.metric("invariance_defect", worst)?;
    } else {
        let bound = (c.constants.k1 * ctx.grid.horizon()).exp().max(1.0);
        out.checks.push(Check::new(
            "ratio_bounded",
            finite && max_ratio <= bound,
            format!("max ratio {max_ratio}, bound e^(K1 T) = {bound}"),
        ));
        out.metric("ratio_bound", bound)?;
    }
    let mut cols = vec!["pair".to_string()];
    cols.extend(scales.iter().map(|s| format!("ratio_scale_{s}")));
    let mut ser = Series {
        columns: cols,
        rows: Vec::new(),
    };
    for i in 0..p.pairs {
        let mut row = vec![i as f64];
        row.extend(ratios.iter().map(|r| r[i]));
        ser.push(row);
    }
    out.series.push(("lipschitz_ratios".into(), ser));
    Ok(out)
}

// ---------------------------------------------------------------- moments

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MomentsParams {
    pub k: Vec<f64>,
    /// `|X(0)|` of the point initial laws, placed on the first axis.
    pub initial_norms: Vec<f64>,
    pub r2_min: f64,
}

impl Default for MomentsParams {
    fn default() -> Self {
        MomentsParams {
            k: vec![2.0, 4.0],
            initial_norms: vec![0.0, 1.0, 5.0, 25.0],
            r2_min: 0.99,
        }
    }
}

impl MomentsParams {
    fn resolve(self) -> Result<Self> {
        if self.k.is_empty() || self.k.iter().any(|k| !(*k > 0.0 && k.is_finite())) {
            return Err(Error::Config("params.k must list positive orders".into()));
        }
        if self.initial_norms.len() < 3 || self.initial_norms.iter().any(|r| !(*r >= 0.0 && r.is_finite())) {
            return Err(Error::Config("params.initial_norms needs >= 3 nonnegative values".into()));
        }
        Ok(self)
    }
}

fn moments(ctx: &Context<'_>, p: &MomentsParams) -> Result<Outcome> {
    let d = ctx.config.grid.d;
    let mut out = Outcome::default();
    let mut curves: Vec<(String, Vec<f64>)> = Vec::new();
    let mut reg = Series::new(&["k", "initial_norm", "x", "sup_moment", "sup_moment_stderr"]);
    let mut fits = Vec::new();
    let mut times = Vec::new();
    let mut per_k: Vec<(Vec<f64>, Vec<f64>)> = vec![(Vec::new(), Vec::new()); p.k.len()];
    for &r in &p.initial_norms {
        let mut x = vec![0.0; d];
        x[0] = r;
        let inits = point_initials(&vec![x; ctx.config.m], ctx.config.tau, &ctx.grid)?;
        let (ens, _) = simulate_interacting(&ctx.coeffs, &inits, &ctx.grid, &ctx.noise, &ctx.opts)?;
        warn_capped(&mut out, ens.capped_evaluations);
        for (ki, &k) in p.k.iter().enumerate() {
            let curve = moment_curve(&ens, k)?;
            if times.is_empty() {
                times = curve.iter().map(|c| c.t).collect();
            }
            let last = curve.last().expect("nonempty");
            let xv = 1.0 + r.powf(k);
            reg.push(vec![k, r, xv, last.sup_moment, last.sup_moment_stderr]);
            per_k[ki].0.push(xv);
            per_k[ki].1.push(last.sup_moment);
            curves.push((format!("k{k}_r{r}"), curve.iter().map(|c| c.sup_moment).collect()));
        }
    }
    for (ki, &k) in p.k.iter().enumerate() {
        let fit = stats::linear_fit(&per_k[ki].0, &per_k[ki].1)?;
        out.checks.push(Check::new(
            &format!("linear_in_initial_norm_k{k}"),
            fit.r_squared > p.r2_min,
            format!("R^2 = {} (min {})", fit.r_squared, p.r2_min),
        ));
        fits.push(json!({"k": k, "fit": fit}));
    }
    out.metric("fits", fits)?;
    let mut cols = vec!["t".to_string()];
    cols.extend(curves.iter().map(|(n, _)| n.clone()));
    let mut cs = Series {
        columns: cols,
        rows: Vec::new(),
    };
    for (s, t) in times.iter().enumerate() {
        let mut row = vec![*t];
        row.extend(curves.iter().map(|(_, v)| v[s]));
        cs.push(row);
    }
    out.series.push(("moment_curves".into(), cs));
    out.series.push(("moment_regression".into(), reg));
    Ok(out)
}

// ---------------------------------------------------------------- exp-moments

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExpMomentsParams {
    pub beta: f64,
    pub alpha: f64,
    /// Compare `E exp(beta X(T)^2)` with the exact Euler Gaussian law; on by
    /// default for the one-dimensional linear model without memory or mean field.
    pub gaussian_check: Option<bool>,
}

impl Default for ExpMomentsParams {
    fn default() -> Self {
        ExpMomentsParams {
            beta: 0.1,
            alpha: 1.0,
            gaussian_check: None,
        }
    }
}

impl ExpMomentsParams {
    fn resolve(mut self, model: &ModelSpec, coeffs: &CoefficientSet) -> Result<Self> {
        if !(self.beta >= 0.0 && self.beta.is_finite()) || !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::Config(format!(
                "params beta = {}, alpha = {} must satisfy beta >= 0, alpha in [0, 1]",
                self.beta, self.alpha
            )));
        }
        if self.gaussian_check.is_none() {
            self.gaussian_check = Some(
                coeffs.dim() == 1 && linear_params(model).is_some_and(|p| p.beta == 0.0 && p.gamma == 0.0),
            );
        }
        Ok(self)
    }
}

fn exp_moments(ctx: &Context<'_>, p: &ExpMomentsParams) -> Result<Outcome> {
    let initials = ctx.initials(&ctx.config.initial, Phase::Initial)?;
    let (ens, _) = simulate_interacting(&ctx.coeffs, &initials, &ctx.grid, &ctx.noise, &ctx.opts)?;
    let pts = exp_moment(&ens, p.beta, p.alpha)?;
    let mut out = Outcome::default();
    warn_capped(&mut out, ens.capped_evaluations);
    let overflow = pts.iter().filter(|q| !q.estimate.is_finite()).count();
    let degenerate = pts.iter().filter(|q| q.degenerate).count();
    out.checks.push(Check::new(
        "finite",
        overflow == 0,
        format!("{overflow} grid times overflowed"),
    ));
    if degenerate > 0 {
        out.warnings
            .push(format!("{degenerate} grid times dominated by a single particle"));
    }
    out.metric("final", pts.last())?;
    out.metric("max_estimate", pts.iter().map(|q| q.estimate).fold(0.0, f64::max))?;

    if p.gaussian_check == Some(true) {
        let lp = ctx
            .linear_params()
            .ok_or_else(|| Error::Config("gaussian_check needs the linear memory model".into()))?;
        if lp.beta != 0.0 || lp.gamma != 0.0 || ctx.config.grid.d != 1 {
            return Err(Error::Config("gaussian_check needs d = 1 and beta = gamma = 0".into()));
        }
        let (m0, v0) = match &ctx.config.initial {
            InitialLaw::Point { x } => (x[0], 0.0),
            InitialLaw::Gaussian { mean, std } => (mean[0], std * std),
            InitialLaw::Points { .. } => {
                return Err(Error::Config("gaussian_check needs a point or Gaussian initial law".into()))
            }
        };
        let h = ctx.grid.h();
        let rho = 1.0 - lp.a * h;
        let n = ctx.grid.sim_steps() as i32;
        let m = m0 * rho.powi(n);
        let mut v = v0;
        for _ in 0..n {
            v = rho * rho * v + lp.sigma0 * lp.sigma0 * h;
        }
        let b = p.beta;
        if !(1.0 - 2.0 * b * v > 0.0) {
            return Err(Error::Config(format!("beta = {b} too large for terminal variance {v}")));
        }
        let exact = (1.0 - 2.0 * b * v).powf(-0.5) * (b * m * m / (1.0 - 2.0 * b * v)).exp();
        let last = ens.grid.sim_steps();
        let vals: Vec<f64> = ens.particles().iter().map(|tr| (b * tr.state(last)[0].powi(2)).exp()).collect();
        let e = stats::estimate(&vals);
        let z = (e.mean - exact).abs() / e.stderr.max(f64::MIN_POSITIVE);
        out.checks.push(Check::new(
            "gaussian_terminal",
            (e.mean - exact).abs() <= 5.0 * e.stderr,
            format!("estimate {} vs exact {exact}, {z:.2} stderr", e.mean),
        ));
        out.metric("gaussian_terminal", json!({"estimate": e, "exact": exact}))?;
    }

    let mut s = Series::new(&["t", "estimate", "stderr", "max_share"]);
    for q in &pts {
        s.push(vec![q.t, q.estimate, q.stderr, q.max_share]);
    }
    out.series.push(("exp_moment".into(), s));
    Ok(out)
}

// ---------------------------------------------------------------- check-assumptions

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CheckAssumptionsParams {
    /// Defaults to `H'` (and `A1` with invertible sigma) for regular models,
    /// `A1, A2-profile, A3'` for singular ones.
    pub assumptions: Option<Vec<AssumptionId>>,
    pub n_pairs: usize,
    pub sampler: SamplerConfig,
}

impl Default for CheckAssumptionsParams {
    fn default() -> Self {
        CheckAssumptionsParams {
            assumptions: None,
            n_pairs: 1000,
            sampler: SamplerConfig::default(),
        }
    }
}

impl CheckAssumptionsParams {
    fn resolve(mut self, coeffs: &CoefficientSet) -> Result<Self> {
        if self.assumptions.is_none() {
            self.assumptions = Some(if coeffs.flags.singular {
                vec![AssumptionId::A1, AssumptionId::A2Profile, AssumptionId::A3Prime]
            } else if coeffs.flags.sigma_invertible {
                vec![AssumptionId::HPrime, AssumptionId::A1]
            } else {
                vec![AssumptionId::HPrime]
            });
        }
        if self.n_pairs == 0 {
            return Err(Error::Config("params.n_pairs must be >= 1".into()));
        }
        Ok(self)
    }
}

fn check_assumptions(ctx: &Context<'_>, p: &CheckAssumptionsParams) -> Result<Outcome> {
    let mut out = Outcome::default();
    let mut reports = Vec::new();
    for &id in p.assumptions.as_deref().unwrap_or_default() {
        let mut sampler = RandomSampler::new(ctx.grid, ctx.config.tau, ctx.coeffs.dim(), p.sampler.clone(), ctx.config.seed)?;
        let rep = check_assumption(&ctx.coeffs, id, &mut sampler, p.n_pairs)?;
        let name = serde_json::to_value(id)?;
        out.checks.push(Check::new(
            name.as_str().unwrap_or("assumption"),
            rep.passed(),
            format!("max violation {} over {} samples", rep.max_violation, rep.n_samples),
        ));
        if let Some(n) = &rep.note {
            out.warnings.push(format!("{}: {n}", name.as_str().unwrap_or("")));
        }
        reports.push(rep);
    }
    out.metric("reports", reports)?;
    Ok(out)
}

// ---------------------------------------------------------------- lpq-diagnose

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LpqParams {
    pub s: f64,
    /// Defaults to `T`.
    pub t: Option<f64>,
    pub lattice: LpqGrid,
}

impl Default for LpqParams {
    fn default() -> Self {
        LpqParams {
            s: 0.0,
            t: None,
            lattice: LpqGrid::default(),
        }
    }
}

impl LpqParams {
    fn resolve(mut self, coeffs: &CoefficientSet, grid: &GridSpec) -> Result<Self> {
        if coeffs.profile.is_none() {
            return Err(Error::Config(format!(
                "model `{}` declares no singularity profile",
                coeffs.name()
            )));
        }
        self.t = Some(self.t.unwrap_or(grid.horizon()));
        check_finite("s", self.s)?;
        Ok(self)
    }
}

fn lpq_diagnose(ctx: &Context<'_>, p: &LpqParams) -> Result<Outcome> {
    let prof = ctx.coeffs.profile.as_ref().expect("checked in resolve");
    let t = p.t.unwrap_or(ctx.grid.horizon());
    let rep = prof.lpq_norm(p.s, t, &p.lattice)?;
    let mut out = Outcome::default();
    out.checks.push(Check::new(
        "admissible_exponents",
        prof.admissible(),
        format!("(p, q, d) = ({}, {}, {})", prof.p, prof.q, prof.d),
    ));
    out.checks.push(Check::new(
        "finite_norm",
        rep.value.is_finite(),
        format!("value {}", rep.value),
    ));
    out.metric("lpq", rep)?;
    out.metric("p", prof.p)?;
    out.metric("q", prof.q)?;
    Ok(out)
}
