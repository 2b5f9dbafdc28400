//! Decay rates, log-Harnack defects, and gradient estimates from coupled runs.

use serde::{Deserialize, Serialize};

use super::testfn::TestFunction;
use super::CouplingRun;
use crate::coefficients::CoefficientSet;
use crate::engine::{simulate_interacting, SimOptions};
use crate::error::{Error, Result};
use crate::grid::GridSpec;
use crate::noise::NoisePlan;
use crate::segment::WeightedSegment;
use crate::stats::{self, LinearFit, TrendTest};

/// Log-linear fit of the weighted gap moment over the second half of `[0, T]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecayFit {
    pub p: f64,
    /// `-inf` when every gap is zero.
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    /// Percentile bootstrap interval of the slope over particles.
    pub ci: Option<(f64, f64)>,
    pub n_points: usize,
    pub degenerate: bool,
    /// `-p tau0`.
    pub target_slope: f64,
}

impl DecayFit {
    pub fn meets_target(&self) -> bool {
        self.slope <= self.target_slope
    }

    pub fn ci_excludes_zero(&self) -> bool {
        self.degenerate || self.ci.is_some_and(|(lo, hi)| hi < 0.0 || lo > 0.0)
    }
}

/// `reps = 0` skips the bootstrap.
pub fn decay_fit(run: &CouplingRun, p: f64, reps: usize, seed: u64) -> Result<DecayFit> {
    if !(p >= 1.0) {
        return Err(Error::Domain(format!("decay moment order p = {p} must be >= 1")));
    }
    let steps = run.steps();
    let first = steps.div_ceil(2);
    let tail: Vec<usize> = (first..=steps).collect();
    let m = run.len();
    let target_slope = -p * run.tau0;

    let weights: Vec<Vec<f64>> = tail.iter().map(|&k| run.ledger.weights(k)).collect();
    let gaps: Vec<Vec<f64>> = tail
        .iter()
        .map(|&k| run.gap_norms.iter().map(|g| g[k].powf(p)).collect())
        .collect();
    let moment = |row: usize, idx: &mut dyn Iterator<Item = usize>| -> f64 {
        let (mut sw, mut s) = (0.0, 0.0);
        for i in idx {
            sw += weights[row][i];
            s += weights[row][i] * gaps[row][i];
        }
        s / sw
    };
    let all_zero = run.gap_norms.iter().all(|g| g.iter().all(|v| *v == 0.0));
    if all_zero {
        return Ok(DecayFit {
            p,
            slope: f64::NEG_INFINITY,
            intercept: f64::NEG_INFINITY,
            r_squared: f64::NAN,
            ci: None,
            n_points: 0,
            degenerate: true,
            target_slope,
        });
    }

    let fit_rows = |idx: &dyn Fn() -> Box<dyn Iterator<Item = usize>>| -> Option<LinearFit> {
        let mut xs = Vec::with_capacity(tail.len());
        let mut ys = Vec::with_capacity(tail.len());
        for (row, &k) in tail.iter().enumerate() {
            let v = moment(row, &mut idx());
            if v > 0.0 && v.is_finite() {
                xs.push(run.grid.time(k));
                ys.push(v.ln());
            }
        }
        if xs.len() < 10 {
            return None;
        }
        stats::linear_fit(&xs, &ys).ok()
    };
    let fit = fit_rows(&|| Box::new(0..m)).ok_or_else(|| {
        Error::Insufficient("fewer than 10 tail times with a positive gap moment".into())
    })?;
    let n_points = tail
        .iter()
        .enumerate()
        .filter(|(row, _)| moment(*row, &mut (0..m)) > 0.0)
        .count();

    let ci = if reps > 0 {
        Some(stats::bootstrap_interval(m, reps, 0.95, seed, |idx| {
            let owned = idx.to_vec();
            fit_rows(&|| Box::new(owned.clone().into_iter())).map(|f| f.slope)
        })?)
    } else {
        None
    };
    Ok(DecayFit {
        p,
        slope: fit.slope,
        intercept: fit.intercept,
        r_squared: fit.r_squared,
        ci,
        n_points,
        degenerate: false,
        target_slope,
    })
}

/// Both sides of the log-Harnack comparison at one time.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogHarnack {
    pub t: f64,
    /// `E_Q log f(Y_t)`.
    pub lhs: f64,
    pub lhs_stderr: f64,
    /// `log E f(X_t)`.
    pub log_ptf: f64,
    pub log_ptf_stderr: f64,
    pub defect: f64,
    pub defect_stderr: f64,
    /// `K2 W_2(mu_0, nu_0)^2`, the squared-distance cost with unit constant.
    pub w2sq_term: f64,
    /// `e^{-tau0 t} ||grad log f|| W_2(mu_0, nu_0)` with unit constant.
    pub grad_term: f64,
    pub entropy_estimate: f64,
    pub entropy_raw: f64,
    pub ess: f64,
    pub ess_warning: bool,
}

pub fn log_harnack_defect(
    run: &CouplingRun,
    coeffs: &CoefficientSet,
    f: &TestFunction,
    step: usize,
) -> Result<LogHarnack> {
    if step > run.steps() {
        return Err(Error::OutOfRange {
            t: run.grid.time(step),
            horizon: run.grid.horizon(),
        });
    }
    let f = f.compile(coeffs.dim())?;
    let t = run.grid.time(step);
    let mut log_fy = Vec::with_capacity(run.len());
    for (i, y) in run.y.iter().enumerate() {
        let v = f.eval(y.state(step));
        if !(v > 0.0 && v.is_finite()) {
            return Err(Error::Domain(format!(
                "test function is {v} at Y_{i}({t}) = {:?}; it must be positive",
                y.state(step)
            )));
        }
        log_fy.push(v.ln());
    }
    let w = run.ledger.weights(step);
    let lhs = stats::weighted_estimate(&log_fy, &w);
    let fx: Vec<f64> = run.x.iter().map(|x| f.eval(x.state(step))).collect();
    let pf = stats::estimate(&fx);
    if !(pf.mean > 0.0) {
        return Err(Error::Domain(format!("mean of the test function over X is {}", pf.mean)));
    }
    let log_ptf_stderr = pf.stderr / pf.mean;
    let ess = stats::ess(&w);
    Ok(LogHarnack {
        t,
        lhs: lhs.mean,
        lhs_stderr: lhs.stderr,
        log_ptf: pf.mean.ln(),
        log_ptf_stderr,
        defect: lhs.mean - pf.mean.ln(),
        defect_stderr: lhs.stderr.hypot(log_ptf_stderr),
        w2sq_term: coeffs.constants.k2 * run.w2_initial * run.w2_initial,
        grad_term: (-run.tau0 * t).exp() * f.grad_log_sup * run.w2_initial,
        entropy_estimate: run.entropy_estimate(step),
        entropy_raw: run.entropy_raw(step),
        ess,
        ess_warning: run.ess_warning,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogHarnackProfile {
    pub points: Vec<LogHarnack>,
    pub burn_in: f64,
    /// Trend of the defect after the burn-in.
    pub trend: TrendTest,
}

impl LogHarnackProfile {
    /// No significant increase at the 95% level.
    pub fn nonincreasing(&self) -> bool {
        !self.trend.increasing
    }
}

pub fn log_harnack_profile(
    run: &CouplingRun,
    coeffs: &CoefficientSet,
    f: &TestFunction,
    steps: &[usize],
    burn_in: f64,
) -> Result<LogHarnackProfile> {
    let points = steps
        .iter()
        .map(|&k| log_harnack_defect(run, coeffs, f, k))
        .collect::<Result<Vec<_>>>()?;
    let after: Vec<f64> = points.iter().filter(|p| p.t >= burn_in).map(|p| p.defect).collect();
    Ok(LogHarnackProfile {
        trend: stats::mann_kendall(&after),
        points,
        burn_in,
    })
}

/// One time of [`gradient_estimate_check`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradientRow {
    pub t: f64,
    /// Largest `|d/de P_t f(xi + e eta)|` over the directions.
    pub fd_gradient: f64,
    pub fd_stderr: f64,
    /// Signed estimate per direction.
    pub per_direction: Vec<f64>,
    /// `sqrt(P_t f^2 - (P_t f)^2)`.
    pub variance_term: f64,
    /// `(fd_gradient - C variance_term)^+`.
    pub residual: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradientCheck {
    pub rows: Vec<GradientRow>,
    pub eps: f64,
    /// Least-squares `C >= 0` of `fd ~ C variance` over the second half of the times.
    pub c_fit: f64,
    /// Log-linear fit of the positive residuals.
    pub rate_fit: Option<LinearFit>,
    pub tau0: f64,
    pub grad_sup: f64,
    /// Rounding in the difference quotient is not small against the gradient.
    pub unstable_warning: bool,
}

impl GradientCheck {
    pub fn rate_meets_target(&self) -> Option<bool> {
        self.rate_fit.map(|f| f.slope <= -self.tau0)
    }
}

/// Common-noise central differences of `P_t f` at `xi` along unit directions.
#[allow(clippy::too_many_arguments)]
pub fn gradient_estimate_check(
    coeffs: &CoefficientSet,
    f: &TestFunction,
    xi: &WeightedSegment,
    directions: &[WeightedSegment],
    grid: &GridSpec,
    m: usize,
    eps: f64,
    tau0: f64,
    noise: &NoisePlan,
    opts: &SimOptions,
) -> Result<GradientCheck> {
    if !(eps > 0.0) {
        return Err(Error::InvalidParam(format!("eps = {eps} must be > 0")));
    }
    if directions.is_empty() || m == 0 {
        return Err(Error::InvalidParam("need at least one direction and one particle".into()));
    }
    for (k, eta) in directions.iter().enumerate() {
        let n = eta.tau_norm();
        if (n - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidParam(format!("direction {k} has norm {n}, expected 1")));
        }
    }
    let fc = f.compile(coeffs.dim())?;
    let run = |seg: WeightedSegment| -> Result<Vec<Vec<f64>>> {
        let (ens, _) = simulate_interacting(coeffs, &vec![seg; m], grid, noise, opts)?;
        let steps = ens.grid.sim_steps();
        Ok((0..=steps)
            .map(|k| ens.particles().iter().map(|p| fc.eval(p.state(k))).collect())
            .collect())
    };
    let base = run(xi.clone())?;
    let recorded = grid.coarsen(opts.stride)?;

    let mut per_dir: Vec<Vec<stats::Estimate>> = Vec::with_capacity(directions.len());
    for eta in directions {
        let plus = run(xi.axpy(eps, eta)?)?;
        let minus = run(xi.axpy(-eps, eta)?)?;
        per_dir.push(
            plus.iter()
                .zip(&minus)
                .map(|(p, q)| {
                    let d: Vec<f64> = p.iter().zip(q).map(|(a, b)| (a - b) / (2.0 * eps)).collect();
                    stats::estimate(&d)
                })
                .collect(),
        );
    }

    let mut rows = Vec::with_capacity(base.len());
    let mut fmax: f64 = 0.0;
    for (k, fb) in base.iter().enumerate() {
        let mean = stats::shifted_mean(fb);
        let var = fb.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / fb.len() as f64;
        fmax = fb.iter().fold(fmax, |a, v| a.max(v.abs()));
        let best = per_dir
            .iter()
            .map(|d| d[k])
            .max_by(|a, b| a.mean.abs().total_cmp(&b.mean.abs()))
            .expect("nonempty");
        rows.push(GradientRow {
            t: recorded.time(k),
            fd_gradient: best.mean.abs(),
            fd_stderr: best.stderr,
            per_direction: per_dir.iter().map(|d| d[k].mean).collect(),
            variance_term: var.sqrt(),
            residual: 0.0,
        });
    }

    let late = rows.len() / 2;
    let c_fit = stats::origin_fit(
        &rows[late..].iter().map(|r| r.variance_term).collect::<Vec<_>>(),
        &rows[late..].iter().map(|r| r.fd_gradient).collect::<Vec<_>>(),
    )
    .max(0.0);
    for r in rows.iter_mut() {
        r.residual = (r.fd_gradient - c_fit * r.variance_term).max(0.0);
    }
    let (xs, ys): (Vec<f64>, Vec<f64>) = rows
        .iter()
        .filter(|r| r.t > 0.0 && r.residual > 0.0)
        .map(|r| (r.t, r.residual.ln()))
        .unzip();
    let rate_fit = if xs.len() >= 3 {
        stats::linear_fit(&xs, &ys).ok()
    } else {
        None
    };
    let peak = rows.iter().map(|r| r.fd_gradient).fold(0.0, f64::max);
    let floor = (1.0 + fmax) * f64::EPSILON / eps;
    Ok(GradientCheck {
        rows,
        eps,
        c_fit,
        rate_fit,
        tau0,
        grad_sup: fc.grad_sup,
        unstable_warning: peak > 0.0 && floor > 1e-3 * peak,
    })
}
