//! Euler-Maruyama integration of segment-dependent SDEs, either against a
//! frozen measure flow or as an interacting particle system.

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coefficients::CoefficientSet;
use crate::error::{Error, Result};
use crate::grid::GridSpec;
use crate::measure::{index_order_mean, EmpiricalMeasureFlow, MeasureView};
use crate::noise::{Increments, NoisePlan, Phase};
use crate::segment::{check_initial, euclid, SegmentView, Trajectory, WeightedSegment};
use crate::stats::{self, Estimate};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    FrozenFlow,
    Interacting,
}

/// Discretization options.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimOptions {
    /// Record every `stride`-th step; dynamics always run on the fine grid.
    pub stride: usize,
    /// `b <- b / (1 + h|b|)`; defaults to the model's non-Lipschitz flag.
    pub taming: Option<bool>,
    /// Cap `|b0| <= 1/sqrt(h)`; defaults to the model's singular flag.
    pub drift_cap: Option<bool>,
    /// Noise phase driving the particles.
    #[serde(skip)]
    pub phase: Phase,
}

impl Default for SimOptions {
    fn default() -> Self {
        SimOptions {
            stride: 1,
            taming: None,
            drift_cap: None,
            phase: Phase::Dynamics,
        }
    }
}

impl Default for Phase {
    fn default() -> Self {
        Phase::Dynamics
    }
}

/// Resolved per-run scheme.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Scheme {
    pub h: f64,
    pub taming: bool,
    pub cap: Option<f64>,
}

impl Scheme {
    pub(crate) fn new(coeffs: &CoefficientSet, grid: &GridSpec, opts: &SimOptions) -> Self {
        let h = grid.h();
        Scheme {
            h,
            taming: opts.taming.unwrap_or(coeffs.flags.non_lipschitz),
            cap: opts
                .drift_cap
                .unwrap_or(coeffs.flags.singular)
                .then(|| 1.0 / h.sqrt()),
        }
    }
}

/// Scratch space for one drift/diffusion evaluation.
pub(crate) struct Workspace {
    pub b: Vec<f64>,
    pub b1: Vec<f64>,
    pub sigma: Vec<f64>,
    pub dw: Vec<f64>,
    pub next: Vec<f64>,
    pub capped: u64,
}

impl Workspace {
    pub(crate) fn new(d: usize) -> Self {
        Workspace {
            b: vec![0.0; d],
            b1: vec![0.0; d],
            sigma: vec![0.0; d * d],
            dw: vec![0.0; d],
            next: vec![0.0; d],
            capped: 0,
        }
    }
}

/// Drift of the scheme at `(t, xi, mu)` into `ws.b`: `b0` capped if
/// required, plus `b1`, tamed if required.
#[inline]
pub(crate) fn scheme_drift(
    coeffs: &CoefficientSet,
    scheme: &Scheme,
    t: f64,
    xi: &SegmentView<'_>,
    mu: &MeasureView<'_>,
    ws: &mut Workspace,
) {
    coeffs.b0_into(t, xi.at_zero(), &mut ws.b);
    if let Some(cap) = scheme.cap {
        let n = euclid(&ws.b);
        if n > cap {
            ws.b.iter_mut().for_each(|v| *v *= cap / n);
            ws.capped += 1;
        }
    }
    coeffs.b1_into(t, xi, mu, &mut ws.b1);
    for (b, b1) in ws.b.iter_mut().zip(&ws.b1) {
        *b += b1;
    }
    if scheme.taming {
        let n = euclid(&ws.b);
        let f = 1.0 / (1.0 + scheme.h * n);
        ws.b.iter_mut().for_each(|v| *v *= f);
    }
}

/// `ws.next = x + b h + sigma dW` from the current `ws.b`, `ws.sigma`, `ws.dw`.
#[inline]
pub(crate) fn euler_update(x: &[f64], h: f64, ws: &mut Workspace) {
    let d = x.len();
    if d == 1 {
        ws.next[0] = x[0] + ws.b[0] * h + ws.sigma[0] * ws.dw[0];
        return;
    }
    for i in 0..d {
        let noise: f64 = (0..d).map(|k| ws.sigma[i * d + k] * ws.dw[k]).sum();
        ws.next[i] = x[i] + ws.b[i] * h + noise;
    }
}

/// Rolling storage of one particle: the current fine segment plus the
/// recorded (possibly coarser) trajectory.
pub(crate) struct PathBuffer {
    d: usize,
    n: usize,
    stride: usize,
    /// Fine nodes; with `stride == 1` this is the whole trajectory.
    buf: Vec<f64>,
    record: Vec<f64>,
    step: usize,
}

impl PathBuffer {
    pub(crate) fn new(initial: &WeightedSegment, grid: &GridSpec, stride: usize) -> Self {
        let d = initial.dim();
        let n = grid.hist_steps();
        let (buf, record) = if stride == 1 {
            let mut buf = Vec::with_capacity(grid.total_nodes() * d);
            buf.extend_from_slice(initial.values());
            (buf, Vec::new())
        } else {
            let mut buf = Vec::with_capacity(2 * (n + 1) * d);
            buf.extend_from_slice(initial.values());
            let coarse_nodes = (n + grid.sim_steps()) / stride + 1;
            let mut record = Vec::with_capacity(coarse_nodes * d);
            for i in (0..=n).step_by(stride) {
                record.extend_from_slice(initial.node(i));
            }
            (buf, record)
        };
        PathBuffer {
            d,
            n,
            stride,
            buf,
            record,
            step: 0,
        }
    }

    #[inline]
    pub(crate) fn view(&self, tau: f64, h: f64) -> SegmentView<'_> {
        let end = self.buf.len();
        SegmentView {
            tau,
            h,
            dim: self.d,
            values: &self.buf[end - (self.n + 1) * self.d..end],
        }
    }

    #[inline]
    pub(crate) fn current(&self) -> &[f64] {
        &self.buf[self.buf.len() - self.d..]
    }

    #[inline]
    pub(crate) fn push(&mut self, x: &[f64]) {
        self.step += 1;
        if self.stride == 1 {
            self.buf.extend_from_slice(x);
            return;
        }
        if self.buf.len() == self.buf.capacity() {
            let keep = self.n * self.d;
            let start = self.buf.len() - keep;
            self.buf.copy_within(start.., 0);
            self.buf.truncate(keep);
        }
        self.buf.extend_from_slice(x);
        if self.step % self.stride == 0 {
            self.record.extend_from_slice(x);
        }
    }

    pub(crate) fn finish(self, recorded: GridSpec, tau: f64) -> Result<Trajectory> {
        let values = if self.stride == 1 { self.buf } else { self.record };
        Trajectory::new(recorded, tau, self.d, values)
    }
}

/// Particles sharing one grid.
#[derive(Clone, Debug)]
pub struct EnsembleState {
    pub mode: Mode,
    /// Grid of the recorded trajectories.
    pub grid: GridSpec,
    /// Step of the dynamics.
    pub fine_h: f64,
    pub stride: usize,
    pub tamed: bool,
    /// Number of drift evaluations where the singular cap was active.
    pub capped_evaluations: u64,
    particles: Arc<Vec<Trajectory>>,
}

impl EnsembleState {
    pub fn from_particles(mode: Mode, particles: Vec<Trajectory>) -> Result<Self> {
        let first = particles
            .first()
            .ok_or_else(|| Error::InvalidParam("an ensemble needs at least one particle".into()))?;
        let grid = *first.grid();
        if particles.iter().any(|p| !p.grid().same_shape(&grid) || p.tau() != first.tau()) {
            return Err(Error::GridMismatch("particles do not share grid and tau".into()));
        }
        Ok(EnsembleState {
            mode,
            grid,
            fine_h: grid.h(),
            stride: 1,
            tamed: false,
            capped_evaluations: 0,
            particles: Arc::new(particles),
        })
    }

    pub fn particles(&self) -> &[Trajectory] {
        &self.particles
    }

    pub fn shared_particles(&self) -> Arc<Vec<Trajectory>> {
        Arc::clone(&self.particles)
    }

    pub fn len(&self) -> usize {
        self.particles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.particles.is_empty()
    }

    pub fn tau(&self) -> f64 {
        self.particles[0].tau()
    }

    pub fn dim(&self) -> usize {
        self.particles[0].dim()
    }

    /// Law flow of the recorded segments.
    pub fn to_flow(&self) -> Result<EmpiricalMeasureFlow> {
        EmpiricalMeasureFlow::from_paths(self.shared_particles())
    }

    /// Mean of the first coordinate of `X(t)` at every recorded step.
    pub fn mean_path(&self) -> Vec<Estimate> {
        (0..=self.grid.sim_steps())
            .map(|k| {
                let xs: Vec<f64> = self.particles.iter().map(|p| p.state(k)[0]).collect();
                stats::estimate(&xs)
            })
            .collect()
    }

    /// Grid times at which the pathwise shift bound fails, summed over particles.
    pub fn shift_bound_violations(&self, p: f64) -> usize {
        self.particles
            .par_iter()
            .map(|tr| tr.shift_bound_violations(p))
            .collect::<Vec<_>>()
            .into_iter()
            .sum()
    }
}

fn validate(
    coeffs: &CoefficientSet,
    initials: &[WeightedSegment],
    grid: &GridSpec,
    opts: &SimOptions,
) -> Result<GridSpec> {
    if initials.is_empty() {
        return Err(Error::InvalidParam("at least one initial segment is required".into()));
    }
    for init in initials {
        check_initial(grid, init)?;
        if init.dim() != coeffs.dim() {
            return Err(Error::Shape(format!(
                "initial segment of dimension {}, model of dimension {}",
                init.dim(),
                coeffs.dim()
            )));
        }
        if init.tau() != coeffs.tau() {
            return Err(Error::GridMismatch(format!(
                "initial tau {} differs from model tau {}",
                init.tau(),
                coeffs.tau()
            )));
        }
    }
    grid.coarsen(opts.stride)
}

/// Steps of `flow` per fine step: the flow grid must share the horizon and
/// have a step that is an integer multiple of `h`.
pub(crate) fn flow_ratio(flow: &EmpiricalMeasureFlow, grid: &GridSpec) -> Result<usize> {
    let fg = flow.grid();
    let r = (fg.h() / grid.h()).round();
    let ok = r >= 1.0
        && (r * grid.h() - fg.h()).abs() <= 1e-9 * fg.h()
        && fg.sim_steps() * r as usize == grid.sim_steps();
    if !ok {
        return Err(Error::GridMismatch(format!(
            "flow grid {fg:?} is not a coarsening of the simulation grid {grid:?}"
        )));
    }
    Ok(r as usize)
}

fn blow_up(particle: usize, step: usize, x: &[f64]) -> Error {
    Error::BlowUp {
        particle,
        step,
        detail: format!("state {x:?}"),
    }
}

/// Simulate one particle against a frozen flow.
#[allow(clippy::too_many_arguments)]
fn run_frozen_particle(
    coeffs: &CoefficientSet,
    scheme: &Scheme,
    flow: &EmpiricalMeasureFlow,
    ratio: usize,
    initial: &WeightedSegment,
    grid: &GridSpec,
    recorded: GridSpec,
    stride: usize,
    mut inc: Increments,
    particle: usize,
) -> Result<(Trajectory, u64)> {
    let tau = coeffs.tau();
    let h = grid.h();
    let mut path = PathBuffer::new(initial, grid, stride);
    let mut ws = Workspace::new(coeffs.dim());
    for j in 0..grid.sim_steps() {
        let t = grid.time(j);
        let mu = flow.at(j / ratio);
        let xi = path.view(tau, h);
        scheme_drift(coeffs, scheme, t, &xi, &mu, &mut ws);
        coeffs.sigma_into(t, &xi, &mut ws.sigma);
        inc.fill(&mut ws.dw);
        euler_update(path.current(), h, &mut ws);
        if ws.next.iter().any(|v| !v.is_finite()) {
            return Err(blow_up(particle, j + 1, &ws.next));
        }
        path.push(&ws.next);
    }
    Ok((path.finish(recorded, tau)?, ws.capped))
}

/// Particles driven by a given measure flow `mu_t`.
pub fn simulate_frozen(
    coeffs: &CoefficientSet,
    flow: &EmpiricalMeasureFlow,
    initials: &[WeightedSegment],
    grid: &GridSpec,
    noise: &NoisePlan,
    opts: &SimOptions,
) -> Result<EnsembleState> {
    let recorded = validate(coeffs, initials, grid, opts)?;
    let ratio = flow_ratio(flow, grid)?;
    let scheme = Scheme::new(coeffs, grid, opts);
    let d = coeffs.dim();
    let results: Vec<Result<(Trajectory, u64)>> = initials
        .par_iter()
        .enumerate()
        .map(|(i, init)| {
            let inc = noise.increments(i, opts.phase, d, grid.h());
            run_frozen_particle(coeffs, &scheme, flow, ratio, init, grid, recorded, opts.stride, inc, i)
        })
        .collect();
    let mut particles = Vec::with_capacity(initials.len());
    let mut capped = 0;
    for r in results {
        let (tr, c) = r?;
        particles.push(tr);
        capped += c;
    }
    Ok(EnsembleState {
        mode: Mode::FrozenFlow,
        grid: recorded,
        fine_h: grid.h(),
        stride: opts.stride,
        tamed: scheme.taming,
        capped_evaluations: capped,
        particles: Arc::new(particles),
    })
}

/// Mean-field particle system: each step uses the empirical law of the
/// current segments. Returns the ensemble and its realized law flow.
pub fn simulate_interacting(
    coeffs: &CoefficientSet,
    initials: &[WeightedSegment],
    grid: &GridSpec,
    noise: &NoisePlan,
    opts: &SimOptions,
) -> Result<(EnsembleState, EmpiricalMeasureFlow)> {
    let recorded = validate(coeffs, initials, grid, opts)?;
    let scheme = Scheme::new(coeffs, grid, opts);
    let (tau, h, d) = (coeffs.tau(), grid.h(), coeffs.dim());
    let m = initials.len();
    let mut paths: Vec<PathBuffer> = initials
        .iter()
        .map(|init| PathBuffer::new(init, grid, opts.stride))
        .collect();
    let mut incs: Vec<Increments> = (0..m)
        .map(|i| noise.increments(i, opts.phase, d, h))
        .collect();
    let mut workspaces: Vec<Workspace> = (0..m).map(|_| Workspace::new(d)).collect();

    for j in 0..grid.sim_steps() {
        let t = grid.time(j);
        {
            let views: Vec<SegmentView<'_>> = paths.iter().map(|p| p.view(tau, h)).collect();
            let mean0 = index_order_mean(d, m, |i| views[i].at_zero());
            let mu = MeasureView::from_views(&views, &mean0);
            workspaces
                .par_iter_mut()
                .zip(incs.par_iter_mut())
                .enumerate()
                .for_each(|(i, (ws, inc))| {
                    let xi = views[i];
                    scheme_drift(coeffs, &scheme, t, &xi, &mu, ws);
                    coeffs.sigma_into(t, &xi, &mut ws.sigma);
                    inc.fill(&mut ws.dw);
                    euler_update(xi.at_zero(), h, ws);
                });
        }
        for (i, (p, ws)) in paths.iter_mut().zip(&workspaces).enumerate() {
            if ws.next.iter().any(|v| !v.is_finite()) {
                return Err(blow_up(i, j + 1, &ws.next));
            }
            p.push(&ws.next);
        }
    }
    let capped = workspaces.iter().map(|w| w.capped).sum();
    let particles = paths
        .into_iter()
        .map(|p| p.finish(recorded, tau))
        .collect::<Result<Vec<_>>>()?;
    let ens = EnsembleState {
        mode: Mode::Interacting,
        grid: recorded,
        fine_h: h,
        stride: opts.stride,
        tamed: scheme.taming,
        capped_evaluations: capped,
        particles: Arc::new(particles),
    };
    let flow = ens.to_flow()?;
    Ok((ens, flow))
}

/// One row of [`moment_curve`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MomentPoint {
    pub t: f64,
    /// `E ||X_t||_tau^k`.
    pub moment: f64,
    pub moment_stderr: f64,
    /// `E sup_{s <= t} ||X_s||_tau^k`.
    pub sup_moment: f64,
    pub sup_moment_stderr: f64,
}

/// Monte-Carlo moment curves over the recorded grid; `k = 0` gives 1.
pub fn moment_curve(ens: &EnsembleState, k: f64) -> Result<Vec<MomentPoint>> {
    if !(k >= 0.0) {
        return Err(Error::Domain(format!("moment order k = {k} must be >= 0")));
    }
    let norms: Vec<Vec<f64>> = ens.particles.par_iter().map(|p| p.segment_norms()).collect();
    let steps = ens.grid.sim_steps();
    let mut running_sup = vec![0.0f64; norms.len()];
    let mut out = Vec::with_capacity(steps + 1);
    let pow = |x: f64| if k == 0.0 { 1.0 } else { crate::measure::pow_k(x, k) };
    for s in 0..=steps {
        let now: Vec<f64> = norms.iter().map(|n| pow(n[s])).collect();
        for (sup, v) in running_sup.iter_mut().zip(&now) {
            *sup = sup.max(*v);
        }
        let a = stats::estimate(&now);
        let b = stats::estimate(&running_sup);
        out.push(MomentPoint {
            t: ens.grid.time(s),
            moment: a.mean,
            moment_stderr: a.stderr,
            sup_moment: b.mean,
            sup_moment_stderr: b.stderr,
        });
    }
    Ok(out)
}

/// One row of [`exp_moment`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExpMomentPoint {
    pub t: f64,
    /// `E exp(beta ||X_t||_tau^{2 alpha})`; `+inf` on overflow.
    pub estimate: f64,
    pub stderr: f64,
    /// Largest single-particle share of the summed exponentials.
    pub max_share: f64,
    /// `max_share > 0.5`.
    pub degenerate: bool,
    /// Norm of the particle whose exponential overflowed.
    pub overflow_norm: Option<f64>,
}

pub fn exp_moment(ens: &EnsembleState, beta: f64, alpha: f64) -> Result<Vec<ExpMomentPoint>> {
    if !(beta >= 0.0) {
        return Err(Error::Domain(format!("beta = {beta} must be >= 0")));
    }
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::Domain(format!("alpha = {alpha} must lie in [0, 1]")));
    }
    let norms: Vec<Vec<f64>> = ens.particles.par_iter().map(|p| p.segment_norms()).collect();
    let mut out = Vec::with_capacity(ens.grid.sim_steps() + 1);
    for s in 0..=ens.grid.sim_steps() {
        let t = ens.grid.time(s);
        let vals: Vec<f64> = norms
            .iter()
            .map(|n| (beta * n[s].powf(2.0 * alpha)).exp())
            .collect();
        if let Some(i) = vals.iter().position(|v| v.is_infinite()) {
            out.push(ExpMomentPoint {
                t,
                estimate: f64::INFINITY,
                stderr: f64::NAN,
                max_share: 1.0,
                degenerate: true,
                overflow_norm: Some(norms[i][s]),
            });
            continue;
        }
        let e = stats::estimate(&vals);
        let total: f64 = vals.iter().sum();
        let max_share = vals.iter().copied().fold(0.0, f64::max) / total;
        out.push(ExpMomentPoint {
            t,
            estimate: e.mean,
            stderr: e.stderr,
            max_share,
            degenerate: vals.len() > 1 && max_share > 0.5,
            overflow_norm: None,
        });
    }
    Ok(out)
}

/// `initials` as point paths `phi^x` on `grid`.
pub fn point_initials(points: &[Vec<f64>], tau: f64, grid: &GridSpec) -> Result<Vec<WeightedSegment>> {
    points
        .iter()
        .map(|x| WeightedSegment::point_path(x, tau, grid.h(), grid.hist_steps()))
        .collect()
}
