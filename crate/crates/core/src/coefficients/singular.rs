//! Integrability diagnostics for singular drifts: the admissible exponent
//! class and localized space-time `L^p`-`L^q` norms.

use std::fmt;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `p > 2`, `q > 2`, and `d/p + 2/q < 1`.
pub fn kato_admissible(p: f64, q: f64, d: usize) -> bool {
    p > 2.0 && q > 2.0 && d as f64 / p + 2.0 / q < 1.0
}

type ProfileFn = dyn Fn(f64, &[f64]) -> f64 + Send + Sync;

/// Declared bound `|b0(t, x)| <= f0(t, x)` with its integrability exponents.
#[derive(Clone)]
pub struct SingularityProfile {
    pub p: f64,
    pub q: f64,
    pub d: usize,
    f0: Arc<ProfileFn>,
}

impl fmt::Debug for SingularityProfile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SingularityProfile")
            .field("p", &self.p)
            .field("q", &self.q)
            .field("d", &self.d)
            .finish_non_exhaustive()
    }
}

impl SingularityProfile {
    pub fn new(p: f64, q: f64, d: usize, f0: impl Fn(f64, &[f64]) -> f64 + Send + Sync + 'static) -> Self {
        SingularityProfile {
            p,
            q,
            d,
            f0: Arc::new(f0),
        }
    }

    pub fn f0(&self, t: f64, x: &[f64]) -> f64 {
        (self.f0)(t, x)
    }

    pub fn admissible(&self) -> bool {
        kato_admissible(self.p, self.q, self.d)
    }

    /// Localized norm of `f0` over `[s, t]`.
    pub fn lpq_norm(&self, s: f64, t: f64, grid: &LpqGrid) -> Result<LpqReport> {
        lpq_norm(&|r, x| self.f0(r, x), self.p, self.q, s, t, self.d, grid)
    }
}

/// Quadrature resolution for [`lpq_norm`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LpqGrid {
    /// Ball centers range over `{lo, lo + step, ..., hi}^d`.
    pub center_lo: f64,
    pub center_hi: f64,
    pub center_step: f64,
    /// Midpoint cells in time.
    pub n_time: usize,
    /// Midpoint cells per axis across a unit ball's bounding cube.
    pub n_space: usize,
}

impl Default for LpqGrid {
    fn default() -> Self {
        LpqGrid {
            center_lo: -2.0,
            center_hi: 2.0,
            center_step: 0.5,
            n_time: 64,
            n_space: 200,
        }
    }
}

/// Result of [`lpq_norm`] with the resolution it was computed at.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LpqReport {
    pub value: f64,
    pub argmax_center: Vec<f64>,
    pub n_centers: usize,
    pub n_time: usize,
    pub n_space: usize,
}

fn lattice(lo: f64, hi: f64, step: f64) -> Result<Vec<f64>> {
    if !(step > 0.0) || !(hi >= lo) {
        return Err(Error::InvalidParam(format!(
            "center lattice [{lo}, {hi}] with step {step}"
        )));
    }
    let n = ((hi - lo) / step + 1e-9).floor() as usize;
    Ok((0..=n).map(|i| lo + i as f64 * step).collect())
}

/// `sup_z (int_s^t ||1_{B(z,1)} f_r||_{L^p}^q dr)^{1/q}` by midpoint
/// quadrature in time and space, maximized over a lattice of centers.
pub fn lpq_norm(
    f: &(dyn Fn(f64, &[f64]) -> f64 + Sync),
    p: f64,
    q: f64,
    s: f64,
    t: f64,
    d: usize,
    grid: &LpqGrid,
) -> Result<LpqReport> {
    if !(p >= 1.0 && q >= 1.0) {
        return Err(Error::Domain(format!("(p, q) = ({p}, {q}) must be >= 1")));
    }
    if !(t > s) {
        return Err(Error::InvalidParam(format!("time interval [{s}, {t}] is empty")));
    }
    if d == 0 || grid.n_time == 0 || grid.n_space == 0 {
        return Err(Error::InvalidParam("quadrature needs d, n_time, n_space >= 1".into()));
    }
    let axis = lattice(grid.center_lo, grid.center_hi, grid.center_step)?;
    let n_centers = axis.len().pow(d as u32);
    let centers: Vec<Vec<f64>> = (0..n_centers)
        .map(|mut c| {
            (0..d)
                .map(|_| {
                    let v = axis[c % axis.len()];
                    c /= axis.len();
                    v
                })
                .collect()
        })
        .collect();

    let dt = (t - s) / grid.n_time as f64;
    let dx = 2.0 / grid.n_space as f64;
    let cell = dx.powi(d as i32);
    let cells = grid.n_space.pow(d as u32);

    let integrals: Vec<Result<f64>> = centers
        .par_iter()
        .map(|z| {
            let mut x = vec![0.0; d];
            let mut total = 0.0;
            for it in 0..grid.n_time {
                let r = s + (it as f64 + 0.5) * dt;
                let mut lp = 0.0;
                for mut c in 0..cells {
                    let mut dist2 = 0.0;
                    for (k, xk) in x.iter_mut().enumerate() {
                        let off = -1.0 + ((c % grid.n_space) as f64 + 0.5) * dx;
                        c /= grid.n_space;
                        *xk = z[k] + off;
                        dist2 += off * off;
                    }
                    if dist2 > 1.0 {
                        continue;
                    }
                    let v = f(r, &x);
                    if !v.is_finite() {
                        return Err(Error::NonFinite(format!("f({r}, {x:?}) = {v}")));
                    }
                    lp += v.abs().powf(p) * cell;
                }
                total += lp.powf(q / p) * dt;
            }
            Ok(total)
        })
        .collect();

    let mut best = (0usize, f64::NEG_INFINITY);
    for (i, v) in integrals.into_iter().enumerate() {
        let v = v?;
        if v > best.1 {
            best = (i, v);
        }
    }
    Ok(LpqReport {
        value: best.1.powf(1.0 / q),
        argmax_center: centers[best.0].clone(),
        n_centers,
        n_time: grid.n_time,
        n_space: grid.n_space,
    })
}
