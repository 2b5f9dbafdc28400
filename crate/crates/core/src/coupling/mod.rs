//! Asymptotic coupling by change of measure.
//!
//! `X` follows the frozen dynamics under `mu`. `Y` starts from the
//! `nu`-initials and follows
//! `dY = [b(Y, nu) + kappa sigma(Y) sigma(X)^{-1} (X(0) - Y(0))] dt + sigma(Y) dWbar`
//! with `dWbar = dW + zbar dt`, `zbar = sigma(X)^{-1} [b(X, mu) - b(X, nu)]`.
//! The ledger carries the two Girsanov densities that turn `Wbar` and then
//! `Wbar + int ztilde` into Brownian motions, `ztilde = kappa sigma(X)^{-1} (X(0) - Y(0))`.

mod analysis;
mod testfn;

pub use analysis::{
    decay_fit, gradient_estimate_check, log_harnack_defect, log_harnack_profile, DecayFit,
    GradientCheck, GradientRow, LogHarnack, LogHarnackProfile,
};
pub use testfn::{TestFunction, TestFunctionKind};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coefficients::CoefficientSet;
use crate::engine::{euler_update, flow_ratio, scheme_drift, Scheme, SimOptions, Workspace};
use crate::error::{Error, Result};
use crate::grid::GridSpec;
use crate::linalg;
use crate::measure::{index_order_mean, transport_steps, EmpiricalMeasureFlow, MeasureView};
use crate::noise::{NoisePlan, Phase};
use crate::segment::{check_initial, SegmentView, euclid_diff, weight_table, Trajectory, WeightedSegment, WindowMax};
use crate::stats::{self, Estimate};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CouplingConfig {
    /// Pull strength; `None` uses `4 tau + K1`.
    pub kappa: Option<f64>,
    /// Target decay rate; `None` uses `tau / 2`.
    pub tau0: Option<f64>,
    /// Pair the two initial ensembles by an optimal `W_2` assignment.
    pub optimal_pairing: bool,
    /// ESS fraction below which the run is flagged.
    pub ess_warn_fraction: f64,
    pub taming: Option<bool>,
}

impl Default for CouplingConfig {
    fn default() -> Self {
        CouplingConfig {
            kappa: None,
            tau0: None,
            optimal_pairing: true,
            ess_warn_fraction: 0.05,
            taming: None,
        }
    }
}

impl CouplingConfig {
    /// `(kappa, tau0)` after defaults, checked against `tau`.
    pub fn resolve(&self, coeffs: &CoefficientSet) -> Result<(f64, f64)> {
        let tau = coeffs.tau();
        let kappa = match self.kappa {
            Some(k) => k,
            None => 4.0 * tau + coeffs.constants.k1,
        };
        if !(kappa > tau) || !kappa.is_finite() {
            return Err(Error::InvalidParam(format!(
                "kappa = {kappa} must be finite and exceed tau = {tau}"
            )));
        }
        let tau0 = self.tau0.unwrap_or(tau / 2.0);
        if !(tau0 > 0.0 && tau0 < tau) {
            return Err(Error::InvalidParam(format!("tau0 = {tau0} must lie in (0, {tau})")));
        }
        if !(self.ess_warn_fraction >= 0.0 && self.ess_warn_fraction <= 1.0) {
            return Err(Error::InvalidParam(format!(
                "ess_warn_fraction = {} must lie in [0, 1]",
                self.ess_warn_fraction
            )));
        }
        Ok((kappa, tau0))
    }
}

/// Per-particle Girsanov accumulators, indexed by grid step (entry 0 is the
/// initial value).
#[derive(Clone, Debug, PartialEq)]
pub struct GirsanovLedger {
    pub dim: usize,
    pub h: f64,
    /// `-sum <zbar, dW> - 1/2 sum |zbar|^2 h`.
    pub log_bar: Vec<Vec<f64>>,
    /// `-sum <ztilde, dWbar> - 1/2 sum |ztilde|^2 h`.
    pub log_tilde: Vec<Vec<f64>>,
    /// `sum |zbar + ztilde|^2 h`.
    pub int_sq: Vec<Vec<f64>>,
    /// Drifts per step, `dim` entries per step.
    pub zeta_bar: Vec<Vec<f64>>,
    pub zeta_tilde: Vec<Vec<f64>>,
}

impl GirsanovLedger {
    pub fn len(&self) -> usize {
        self.log_bar.len()
    }

    pub fn is_empty(&self) -> bool {
        self.log_bar.is_empty()
    }

    /// Total log-density of particle `i` at `step`.
    pub fn log_weight(&self, i: usize, step: usize) -> f64 {
        self.log_bar[i][step] + self.log_tilde[i][step]
    }

    /// Weights at `step`, scaled so that the largest is 1.
    pub fn weights(&self, step: usize) -> Vec<f64> {
        let logs: Vec<f64> = (0..self.len()).map(|i| self.log_weight(i, step)).collect();
        stats::weights_from_logs(&logs)
    }

    pub fn ess(&self, step: usize) -> f64 {
        stats::ess(&self.weights(step))
    }

    /// Recompute the log-densities from the stored drifts and regenerated
    /// increments; returns the number of entries that differ.
    pub fn replay_mismatches(&self, noise: &NoisePlan, phase: Phase) -> usize {
        let d = self.dim;
        (0..self.len())
            .into_par_iter()
            .map(|i| {
                let mut inc = noise.increments(i, phase, d, self.h);
                let mut dw = vec![0.0; d];
                let (mut lb, mut lt) = (0.0, 0.0);
                let mut bad = 0;
                for j in 0..self.log_bar[i].len() - 1 {
                    inc.fill(&mut dw);
                    let zb = &self.zeta_bar[i][j * d..(j + 1) * d];
                    let zt = &self.zeta_tilde[i][j * d..(j + 1) * d];
                    let (db, dt) = layer_increments(zb, zt, &dw, self.h);
                    lb += db;
                    lt += dt;
                    bad += (lb != self.log_bar[i][j + 1]) as usize;
                    bad += (lt != self.log_tilde[i][j + 1]) as usize;
                }
                bad
            })
            .sum()
    }
}

/// Log-density increments of both layers for one step.
#[inline]
fn layer_increments(zb: &[f64], zt: &[f64], dw: &[f64], h: f64) -> (f64, f64) {
    let mut db = 0.0;
    let mut dt = 0.0;
    for k in 0..dw.len() {
        let dwbar = dw[k] + zb[k] * h;
        db -= zb[k] * dw[k] + 0.5 * zb[k] * zb[k] * h;
        dt -= zt[k] * dwbar + 0.5 * zt[k] * zt[k] * h;
    }
    (db, dt)
}

/// Coupled ensembles with their ledger.
#[derive(Clone, Debug)]
pub struct CouplingRun {
    pub grid: GridSpec,
    pub kappa: f64,
    pub tau0: f64,
    pub x: Vec<Trajectory>,
    pub y: Vec<Trajectory>,
    /// `y[i]` started from `nu_initials[pairing[i]]`.
    pub pairing: Vec<usize>,
    /// `W_2` of the two initial ensembles.
    pub w2_initial: f64,
    pub ledger: GirsanovLedger,
    /// `||X_t - Y_t||_tau` per particle and step.
    pub gap_norms: Vec<Vec<f64>>,
    pub min_ess: f64,
    pub ess_warning: bool,
    pub capped_evaluations: u64,
    pub phase: Phase,
}

/// One row of [`CouplingRun::gap_series`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GapPoint {
    pub t: f64,
    /// Q-weighted `E ||X_t - Y_t||_tau^p`.
    pub gap_p_weighted: f64,
    pub gap_p_weighted_stderr: f64,
    /// Unweighted mean.
    pub gap_p_plain: f64,
    pub ess: f64,
    /// `1/2 E_Q int_0^t |zbar + ztilde|^2 ds`.
    pub entropy_estimate: f64,
    /// Plain mean of `R log R` with `R` the unnormalized density.
    pub entropy_raw: f64,
}

impl CouplingRun {
    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn steps(&self) -> usize {
        self.grid.sim_steps()
    }

    /// Q-weighted mean of `g(i)` at `step`.
    pub fn weighted(&self, step: usize, g: impl Fn(usize) -> f64) -> Estimate {
        let w = self.ledger.weights(step);
        let xs: Vec<f64> = (0..self.len()).map(g).collect();
        stats::weighted_estimate(&xs, &w)
    }

    pub fn entropy_estimate(&self, step: usize) -> f64 {
        0.5 * self.weighted(step, |i| self.ledger.int_sq[i][step]).mean
    }

    pub fn entropy_raw(&self, step: usize) -> f64 {
        let vals: Vec<f64> = (0..self.len())
            .map(|i| {
                let l = self.ledger.log_weight(i, step);
                l.exp() * l
            })
            .collect();
        stats::shifted_mean(&vals)
    }

    /// Weighted gap moment of order `p` at every step.
    pub fn gap_series(&self, p: f64) -> Result<Vec<GapPoint>> {
        if !(p > 0.0) {
            return Err(Error::Domain(format!("gap moment order p = {p} must be > 0")));
        }
        Ok((0..=self.steps())
            .map(|k| {
                let w = self.ledger.weights(k);
                let g: Vec<f64> = self.gap_norms.iter().map(|n| n[k].powf(p)).collect();
                let e = stats::weighted_estimate(&g, &w);
                GapPoint {
                    t: self.grid.time(k),
                    gap_p_weighted: e.mean,
                    gap_p_weighted_stderr: e.stderr,
                    gap_p_plain: stats::shifted_mean(&g),
                    ess: stats::ess(&w),
                    entropy_estimate: self.entropy_estimate(k),
                    entropy_raw: self.entropy_raw(k),
                }
            })
            .collect())
    }

    /// Largest `|zbar_s|^2 / (|sigma^{-1}|^2 H(s) W_2(mu_s, nu_s)^2)` over
    /// the given steps; at most 1 when the declared constants hold.
    pub fn zeta_bar_bound_ratio(
        &self,
        coeffs: &CoefficientSet,
        flow_mu: &EmpiricalMeasureFlow,
        flow_nu: &EmpiricalMeasureFlow,
        steps: &[usize],
    ) -> Result<f64> {
        let sinv = coeffs.constants.sigma_inv.ok_or_else(|| {
            Error::InvalidParam(format!("model `{}` declares no bound on sigma^-1", coeffs.name()))
        })?;
        let rmu = flow_ratio(flow_mu, &self.grid)?;
        let rnu = flow_ratio(flow_nu, &self.grid)?;
        let d = self.ledger.dim;
        let n = self.grid.hist_steps();
        let mut worst: f64 = 0.0;
        for &j in steps {
            if j >= self.steps() {
                continue;
            }
            let zmax = self
                .ledger
                .zeta_bar
                .iter()
                .map(|z| z[j * d..(j + 1) * d].iter().map(|v| v * v).sum::<f64>())
                .fold(0.0, f64::max);
            if zmax == 0.0 {
                continue;
            }
            let w = transport_steps(&flow_mu.at(j / rmu), &flow_nu.at(j / rnu), 2.0, n)?.distance;
            let bound = sinv * sinv * coeffs.constants.h_fn.eval(self.grid.time(j)) * w * w;
            worst = worst.max(if bound > 0.0 { zmax / bound } else { f64::INFINITY });
        }
        Ok(worst)
    }
}

struct PairOutput {
    x: Vec<f64>,
    y: Vec<f64>,
    log_bar: Vec<f64>,
    log_tilde: Vec<f64>,
    int_sq: Vec<f64>,
    zeta_bar: Vec<f64>,
    zeta_tilde: Vec<f64>,
    capped: u64,
}

/// Evolve `M` coupled pairs `(X_i, Y_i)` against frozen flows.
#[allow(clippy::too_many_arguments)]
pub fn run_coupling(
    coeffs: &CoefficientSet,
    mu_initials: &[WeightedSegment],
    nu_initials: &[WeightedSegment],
    flow_mu: &EmpiricalMeasureFlow,
    flow_nu: &EmpiricalMeasureFlow,
    grid: &GridSpec,
    noise: &NoisePlan,
    cfg: &CouplingConfig,
) -> Result<CouplingRun> {
    let (kappa, tau0) = cfg.resolve(coeffs)?;
    if !coeffs.flags.sigma_invertible {
        return Err(Error::InvalidParam(format!(
            "model `{}` is not flagged with invertible sigma",
            coeffs.name()
        )));
    }
    let m = mu_initials.len();
    if m == 0 || nu_initials.len() != m {
        return Err(Error::UnsupportedCoupling(format!(
            "{m} mu-initials and {} nu-initials; the coupling needs equal nonzero counts",
            nu_initials.len()
        )));
    }
    for s in mu_initials.iter().chain(nu_initials) {
        check_initial(grid, s)?;
        if s.dim() != coeffs.dim() || s.tau() != coeffs.tau() {
            return Err(Error::GridMismatch("initial segment does not match the model".into()));
        }
    }
    let rmu = flow_ratio(flow_mu, grid)?;
    let rnu = flow_ratio(flow_nu, grid)?;

    let (pairing, w2_initial) = {
        let a: Vec<_> = mu_initials.iter().map(|s| s.view()).collect();
        let b: Vec<_> = nu_initials.iter().map(|s| s.view()).collect();
        let (ma, mb) = (
            index_order_mean(coeffs.dim(), m, |i| a[i].at_zero()),
            index_order_mean(coeffs.dim(), m, |i| b[i].at_zero()),
        );
        let t = transport_steps(
            &MeasureView::from_views(&a, &ma),
            &MeasureView::from_views(&b, &mb),
            2.0,
            grid.hist_steps(),
        )?;
        let pairing = if cfg.optimal_pairing {
            t.assignment.row_to_col.clone()
        } else {
            (0..m).collect()
        };
        (pairing, t.distance)
    };

    let opts = SimOptions {
        taming: cfg.taming,
        ..SimOptions::default()
    };
    let scheme = Scheme::new(coeffs, grid, &opts);
    let phase = opts.phase;
    let outputs: Vec<Result<PairOutput>> = (0..m)
        .into_par_iter()
        .map(|i| {
            run_pair(
                coeffs,
                &scheme,
                &mu_initials[i],
                &nu_initials[pairing[i]],
                flow_mu,
                flow_nu,
                (rmu, rnu),
                grid,
                kappa,
                noise,
                phase,
                i,
            )
        })
        .collect();

    let tau = coeffs.tau();
    let d = coeffs.dim();
    let mut x = Vec::with_capacity(m);
    let mut y = Vec::with_capacity(m);
    let mut ledger = GirsanovLedger {
        dim: d,
        h: grid.h(),
        log_bar: Vec::with_capacity(m),
        log_tilde: Vec::with_capacity(m),
        int_sq: Vec::with_capacity(m),
        zeta_bar: Vec::with_capacity(m),
        zeta_tilde: Vec::with_capacity(m),
    };
    let mut capped = 0;
    for o in outputs {
        let o = o?;
        x.push(Trajectory::new(*grid, tau, d, o.x)?);
        y.push(Trajectory::new(*grid, tau, d, o.y)?);
        ledger.log_bar.push(o.log_bar);
        ledger.log_tilde.push(o.log_tilde);
        ledger.int_sq.push(o.int_sq);
        ledger.zeta_bar.push(o.zeta_bar);
        ledger.zeta_tilde.push(o.zeta_tilde);
        capped += o.capped;
    }

    let weights = weight_table(tau, grid.h(), grid.hist_steps());
    let gap_norms: Vec<Vec<f64>> = x
        .par_iter()
        .zip(&y)
        .map(|(a, b)| {
            let mut tracker = WindowMax::default();
            (0..=grid.sim_steps())
                .map(|k| {
                    tracker.advance(k, grid.hist_steps(), &weights, |node| {
                        euclid_diff(a.node(node), b.node(node))
                    })
                })
                .collect()
        })
        .collect();

    let min_ess = (0..=grid.sim_steps())
        .map(|k| ledger.ess(k))
        .fold(f64::INFINITY, f64::min);
    Ok(CouplingRun {
        grid: *grid,
        kappa,
        tau0,
        x,
        y,
        pairing,
        w2_initial,
        ledger,
        gap_norms,
        min_ess,
        ess_warning: min_ess < cfg.ess_warn_fraction * m as f64,
        capped_evaluations: capped,
        phase,
    })
}

#[allow(clippy::too_many_arguments)]
fn run_pair(
    coeffs: &CoefficientSet,
    scheme: &Scheme,
    x0: &WeightedSegment,
    y0: &WeightedSegment,
    flow_mu: &EmpiricalMeasureFlow,
    flow_nu: &EmpiricalMeasureFlow,
    (rmu, rnu): (usize, usize),
    grid: &GridSpec,
    kappa: f64,
    noise: &NoisePlan,
    phase: Phase,
    particle: usize,
) -> Result<PairOutput> {
    let (tau, h, d) = (coeffs.tau(), grid.h(), coeffs.dim());
    let steps = grid.sim_steps();
    let n = grid.hist_steps();
    let nodes = grid.total_nodes();
    let mut xs = Vec::with_capacity(nodes * d);
    let mut ys = Vec::with_capacity(nodes * d);
    xs.extend_from_slice(x0.values());
    ys.extend_from_slice(y0.values());
    let mut out = PairOutput {
        x: Vec::new(),
        y: Vec::new(),
        log_bar: Vec::with_capacity(steps + 1),
        log_tilde: Vec::with_capacity(steps + 1),
        int_sq: Vec::with_capacity(steps + 1),
        zeta_bar: Vec::with_capacity(steps * d),
        zeta_tilde: Vec::with_capacity(steps * d),
        capped: 0,
    };
    out.log_bar.push(0.0);
    out.log_tilde.push(0.0);
    out.int_sq.push(0.0);

    let mut inc = noise.increments(particle, phase, d, h);
    let mut wx = Workspace::new(d);
    let mut wy = Workspace::new(d);
    let mut bnu = vec![0.0; d];
    let mut diff = vec![0.0; d];
    let mut zb = vec![0.0; d];
    let mut zt = vec![0.0; d];
    let mut dwbar = vec![0.0; d];
    let mut corr = vec![0.0; d];
    let (mut lb, mut lt, mut isq) = (0.0, 0.0, 0.0);

    for j in 0..steps {
        let t = grid.time(j);
        let mu = flow_mu.at(j / rmu);
        let nu = flow_nu.at(j / rnu);
        let lo = j * d;
        let hi = (j + n + 1) * d;
        let xv = SegmentView { tau, h, dim: d, values: &xs[lo..hi] };
        let yv = SegmentView { tau, h, dim: d, values: &ys[lo..hi] };
        let xnow = xv.at_zero();
        let ynow = yv.at_zero();

        // drift of X under nu, for zbar
        scheme_drift(coeffs, scheme, t, &xv, &nu, &mut wx);
        bnu.copy_from_slice(&wx.b);
        scheme_drift(coeffs, scheme, t, &xv, &mu, &mut wx);
        coeffs.sigma_into(t, &xv, &mut wx.sigma);
        let sinv = linalg::invert(&wx.sigma, d).map_err(|e| {
            Error::Singular(format!(
                "sigma(X) of particle {particle} at t = {t}, X(0) = {xnow:?}: {e}"
            ))
        })?;
        for k in 0..d {
            diff[k] = wx.b[k] - bnu[k];
        }
        linalg::mat_vec(&sinv, &diff, &mut zb);
        for k in 0..d {
            diff[k] = xnow[k] - ynow[k];
        }
        linalg::mat_vec(&sinv, &diff, &mut zt);
        zt.iter_mut().for_each(|v| *v *= kappa);

        inc.fill(&mut wx.dw);
        let (db, dtl) = layer_increments(&zb, &zt, &wx.dw, h);
        lb += db;
        lt += dtl;
        isq += zb.iter().zip(&zt).map(|(a, b)| (a + b) * (a + b)).sum::<f64>() * h;
        for k in 0..d {
            dwbar[k] = wx.dw[k] + zb[k] * h;
        }

        euler_update(xnow, h, &mut wx);

        scheme_drift(coeffs, scheme, t, &yv, &nu, &mut wy);
        coeffs.sigma_into(t, &yv, &mut wy.sigma);
        linalg::mat_vec(&wy.sigma, &zt, &mut corr);
        for k in 0..d {
            wy.b[k] += corr[k];
        }
        wy.dw.copy_from_slice(&dwbar);
        euler_update(ynow, h, &mut wy);

        if wx.next.iter().chain(&wy.next).any(|v| !v.is_finite()) {
            return Err(Error::BlowUp {
                particle,
                step: j + 1,
                detail: format!("coupled pair X = {:?}, Y = {:?}", wx.next, wy.next),
            });
        }
        xs.extend_from_slice(&wx.next);
        ys.extend_from_slice(&wy.next);
        out.zeta_bar.extend_from_slice(&zb);
        out.zeta_tilde.extend_from_slice(&zt);
        out.log_bar.push(lb);
        out.log_tilde.push(lt);
        out.int_sq.push(isq);
    }
    // the X-drift under nu is not part of the dynamics; do not count its caps twice
    out.capped = wx.capped / 2 + wy.capped;
    out.x = xs;
    out.y = ys;
    Ok(out)
}

#[cfg(test)]
mod tests;
