//! Grid representation of paths on `(-inf, 0]` under the exponentially
//! weighted sup norm `sup_s e^{tau s} |xi(s)|`.
//!
//! A segment stores the nodes `-T_hist, ..., -h, 0` in time order (oldest
//! first). The part of the path older than `-T_hist` is described by a
//! [`TailPolicy`] and never stored; every norm can report an upper bound on
//! what the omitted tail could contribute.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::GridSpec;

/// How the path continues before the oldest stored node.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TailPolicy {
    #[default]
    ConstantExtension,
    Zero,
}

/// Weight `e^{-tau * lag * h}` of a node `lag` steps before time 0.
///
/// Every norm in the crate goes through this function so that norms computed
/// along different routes agree bit for bit.
#[inline]
pub fn node_weight(tau: f64, h: f64, lag: usize) -> f64 {
    (-(tau * (lag as f64 * h))).exp()
}

/// Weights for lags `0..=hist_steps`.
pub fn weight_table(tau: f64, h: f64, hist_steps: usize) -> Vec<f64> {
    (0..=hist_steps).map(|lag| node_weight(tau, h, lag)).collect()
}

#[inline]
pub(crate) fn euclid(v: &[f64]) -> f64 {
    if v.len() == 1 {
        v[0].abs()
    } else {
        v.iter().map(|x| x * x).sum::<f64>().sqrt()
    }
}

#[inline]
pub(crate) fn euclid_diff(a: &[f64], b: &[f64]) -> f64 {
    if a.len() == 1 {
        (a[0] - b[0]).abs()
    } else {
        a.iter()
            .zip(b)
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            .sqrt()
    }
}

/// A norm value together with the bound on the unrepresented tail.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormReport {
    pub value: f64,
    /// Upper bound on `sup_{s < -T_hist} e^{tau s}|xi(s)|` under the tail policy.
    pub tail_bound: f64,
}

/// Borrowed view of a segment: `hist_steps + 1` nodes of dimension `dim`.
#[derive(Clone, Copy, Debug)]
pub struct SegmentView<'a> {
    pub(crate) tau: f64,
    pub(crate) h: f64,
    pub(crate) dim: usize,
    pub(crate) values: &'a [f64],
}

impl<'a> SegmentView<'a> {
    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn nodes(&self) -> usize {
        self.values.len() / self.dim
    }

    pub fn hist_steps(&self) -> usize {
        self.nodes() - 1
    }

    pub fn raw(&self) -> &'a [f64] {
        self.values
    }

    /// Node `i` counted from the oldest (i = 0 is time `-T_hist`).
    #[inline]
    pub fn node(&self, i: usize) -> &'a [f64] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }

    /// Value `lag` steps before time 0.
    #[inline]
    pub fn lagged(&self, lag: usize) -> &'a [f64] {
        self.node(self.hist_steps() - lag)
    }

    /// `xi(0)`.
    #[inline]
    pub fn at_zero(&self) -> &'a [f64] {
        self.node(self.hist_steps())
    }

    pub fn oldest(&self) -> &'a [f64] {
        self.node(0)
    }

    /// `max_{lag <= window} e^{-tau lag h} |xi(-lag h)|`.
    pub fn window_norm(&self, window: usize) -> f64 {
        let n = self.hist_steps();
        let mut best = 0.0f64;
        for lag in 0..=window.min(n) {
            let v = node_weight(self.tau, self.h, lag) * euclid(self.lagged(lag));
            if v > best {
                best = v;
            }
        }
        best
    }

    pub fn tau_norm(&self) -> f64 {
        self.window_norm(self.hist_steps())
    }

    pub fn to_owned(&self, tail: TailPolicy) -> WeightedSegment {
        WeightedSegment {
            tau: self.tau,
            h: self.h,
            dim: self.dim,
            values: self.values.to_vec(),
            tail,
        }
    }

    pub(crate) fn check_compatible(&self, other: &SegmentView<'_>) -> Result<()> {
        if self.dim != other.dim || self.values.len() != other.values.len() {
            return Err(Error::Shape(format!(
                "segments of {}x{} and {}x{} nodes",
                self.nodes(),
                self.dim,
                other.nodes(),
                other.dim
            )));
        }
        if self.tau != other.tau || self.h != other.h {
            return Err(Error::GridMismatch(format!(
                "(tau, h) = ({}, {}) vs ({}, {})",
                self.tau, self.h, other.tau, other.h
            )));
        }
        Ok(())
    }
}

/// `max_{lag <= window} e^{-tau lag h} |a(-lag h) - b(-lag h)|`, shapes assumed equal.
pub fn diff_window_norm(a: &SegmentView<'_>, b: &SegmentView<'_>, window: usize) -> f64 {
    let n = a.hist_steps();
    let mut best = 0.0f64;
    for lag in 0..=window.min(n) {
        let v = node_weight(a.tau, a.h, lag) * euclid_diff(a.lagged(lag), b.lagged(lag));
        if v > best {
            best = v;
        }
    }
    best
}

/// An element of the weighted path space on a finite history grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SegmentRepr", into = "SegmentRepr")]
pub struct WeightedSegment {
    tau: f64,
    h: f64,
    dim: usize,
    values: Vec<f64>,
    tail: TailPolicy,
}

/// JSON form `{tau, h, T_hist, values}` with `values` a list of d-vectors.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SegmentRepr {
    tau: f64,
    h: f64,
    #[serde(rename = "T_hist")]
    t_hist: f64,
    values: Vec<Vec<f64>>,
    #[serde(default)]
    tail_policy: TailPolicy,
}

impl From<WeightedSegment> for SegmentRepr {
    fn from(s: WeightedSegment) -> Self {
        SegmentRepr {
            tau: s.tau,
            h: s.h,
            t_hist: s.hist_steps() as f64 * s.h,
            values: s.values.chunks(s.dim).map(<[f64]>::to_vec).collect(),
            tail_policy: s.tail,
        }
    }
}

impl TryFrom<SegmentRepr> for WeightedSegment {
    type Error = Error;
    fn try_from(r: SegmentRepr) -> Result<Self> {
        let nodes = r.values.len();
        if nodes == 0 {
            return Err(Error::MalformedSegment("empty values".into()));
        }
        let grid = GridSpec::new(r.h, r.t_hist, 0.0)?;
        if grid.segment_len() != nodes {
            return Err(Error::MalformedSegment(format!(
                "T_hist/h + 1 = {} but {} nodes supplied",
                grid.segment_len(),
                nodes
            )));
        }
        let dim = r.values[0].len();
        let mut flat = Vec::with_capacity(nodes * dim);
        for v in &r.values {
            if v.len() != dim {
                return Err(Error::MalformedSegment("ragged node vectors".into()));
            }
            flat.extend_from_slice(v);
        }
        let mut seg = WeightedSegment::from_flat(r.tau, r.h, dim, flat)?;
        seg.tail = r.tail_policy;
        Ok(seg)
    }
}

impl WeightedSegment {
    /// Build from node-major values, oldest node first.
    pub fn from_flat(tau: f64, h: f64, dim: usize, values: Vec<f64>) -> Result<Self> {
        if dim == 0 || values.is_empty() || values.len() % dim != 0 {
            return Err(Error::MalformedSegment(format!(
                "{} values cannot form nodes of dimension {dim}",
                values.len()
            )));
        }
        if !(tau > 0.0) || !(h > 0.0) {
            return Err(Error::MalformedSegment(format!(
                "tau = {tau} and h = {h} must be positive"
            )));
        }
        if values.len() / dim < 2 {
            return Err(Error::MalformedSegment(
                "a segment needs at least two nodes".into(),
            ));
        }
        Ok(WeightedSegment {
            tau,
            h,
            dim,
            values,
            tail: TailPolicy::default(),
        })
    }

    /// Sample `f(s)` at the grid nodes `s = -T_hist, ..., 0`.
    pub fn from_fn(
        tau: f64,
        grid: &GridSpec,
        dim: usize,
        mut f: impl FnMut(f64) -> Vec<f64>,
    ) -> Result<Self> {
        let n = grid.hist_steps();
        let mut values = Vec::with_capacity((n + 1) * dim);
        for i in 0..=n {
            let s = -((n - i) as f64 * grid.h());
            let v = f(s);
            if v.len() != dim {
                return Err(Error::Shape(format!(
                    "node function returned {} components, expected {dim}",
                    v.len()
                )));
            }
            values.extend(v);
        }
        Self::from_flat(tau, grid.h(), dim, values)
    }

    /// The constant path `phi^x(r) = x`.
    pub fn point_path(x: &[f64], tau: f64, h: f64, hist_steps: usize) -> Result<Self> {
        let mut values = Vec::with_capacity((hist_steps + 1) * x.len());
        for _ in 0..=hist_steps {
            values.extend_from_slice(x);
        }
        Self::from_flat(tau, h, x.len(), values)
    }

    pub fn zero(dim: usize, tau: f64, h: f64, hist_steps: usize) -> Result<Self> {
        Self::point_path(&vec![0.0; dim], tau, h, hist_steps)
    }

    pub fn with_tail(mut self, tail: TailPolicy) -> Self {
        self.tail = tail;
        self
    }

    pub fn view(&self) -> SegmentView<'_> {
        SegmentView {
            tau: self.tau,
            h: self.h,
            dim: self.dim,
            values: &self.values,
        }
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn tail_policy(&self) -> TailPolicy {
        self.tail
    }

    pub fn hist_steps(&self) -> usize {
        self.values.len() / self.dim - 1
    }

    pub fn t_hist(&self) -> f64 {
        self.hist_steps() as f64 * self.h
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn node(&self, i: usize) -> &[f64] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }

    pub fn at_zero(&self) -> &[f64] {
        self.node(self.hist_steps())
    }

    /// Value at grid time `r <= 0`.
    pub fn at(&self, r: f64) -> Result<&[f64]> {
        let lag = (-r / self.h).round();
        if !(lag >= 0.0) || (lag * self.h + r).abs() > 1e-9 * self.h.max(r.abs()) {
            return Err(Error::GridMismatch(format!("r = {r} is not a history node")));
        }
        let lag = lag as usize;
        if lag > self.hist_steps() {
            return Err(Error::OutOfRange {
                t: r,
                horizon: -self.t_hist(),
            });
        }
        Ok(self.node(self.hist_steps() - lag))
    }

    /// `||xi||_tau` as the max of `e^{tau s}|xi(s)|` over the stored nodes.
    pub fn tau_norm(&self) -> f64 {
        self.view().tau_norm()
    }

    pub fn tau_norm_report(&self) -> NormReport {
        NormReport {
            value: self.tau_norm(),
            tail_bound: self.tail_bound(),
        }
    }

    /// Bound on the weighted sup over the part older than `-T_hist`.
    pub fn tail_bound(&self) -> f64 {
        match self.tail {
            TailPolicy::Zero => 0.0,
            TailPolicy::ConstantExtension => {
                node_weight(self.tau, self.h, self.hist_steps()) * euclid(self.node(0))
            }
        }
    }

    /// `||xi||_{N,tau}`: max over the nodes in `[-N, 0]`.
    pub fn truncated_norm(&self, window: f64) -> Result<f64> {
        let k = window_steps(window, self.h, self.hist_steps())?;
        Ok(self.view().window_norm(k))
    }

    /// `xi^0(r) = xi(0)` for every node.
    pub fn constant_extension(&self) -> WeightedSegment {
        let x = self.at_zero().to_vec();
        WeightedSegment::point_path(&x, self.tau, self.h, self.hist_steps())
            .expect("shape inherited from a valid segment")
            .with_tail(self.tail)
    }

    fn check_same(&self, other: &WeightedSegment) -> Result<()> {
        self.view().check_compatible(&other.view())
    }

    /// Node-wise `self + c * other`.
    pub fn axpy(&self, c: f64, other: &WeightedSegment) -> Result<WeightedSegment> {
        self.check_same(other)?;
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a + c * b)
            .collect();
        Ok(WeightedSegment {
            values,
            ..self.clone()
        })
    }

    pub fn scaled(&self, c: f64) -> WeightedSegment {
        WeightedSegment {
            values: self.values.iter().map(|v| c * v).collect(),
            ..self.clone()
        }
    }

    /// Weighted norm of `self - other` over the full window.
    pub fn distance(&self, other: &WeightedSegment) -> Result<f64> {
        self.check_same(other)?;
        Ok(diff_window_norm(&self.view(), &other.view(), self.hist_steps()))
    }
}

pub(crate) fn window_steps(window: f64, h: f64, hist_steps: usize) -> Result<usize> {
    if !(window > 0.0) {
        return Err(Error::GridMismatch(format!("window {window} must be > 0")));
    }
    let k = (window / h).round();
    if (k * h - window).abs() > 1e-9 * window.max(h) {
        return Err(Error::GridMismatch(format!(
            "window {window} is not a multiple of h = {h}"
        )));
    }
    let k = k as usize;
    if k > hist_steps {
        return Err(Error::GridMismatch(format!(
            "window {window} exceeds T_hist = {}",
            hist_steps as f64 * h
        )));
    }
    Ok(k)
}

/// A path on `[-T_hist, T]`: the initial history followed by the simulated part.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    grid: GridSpec,
    tau: f64,
    dim: usize,
    values: Vec<f64>,
}

impl Trajectory {
    pub fn new(grid: GridSpec, tau: f64, dim: usize, values: Vec<f64>) -> Result<Self> {
        if dim == 0 || values.len() != grid.total_nodes() * dim {
            return Err(Error::Shape(format!(
                "trajectory needs {} nodes of dimension {dim}, got {} values",
                grid.total_nodes(),
                values.len()
            )));
        }
        if !(tau > 0.0) {
            return Err(Error::InvalidParam(format!("tau must be > 0, got {tau}")));
        }
        Ok(Trajectory {
            grid,
            tau,
            dim,
            values,
        })
    }

    /// Trajectory that stays at its initial history's last value, i.e. the
    /// solution of `dX = 0`.
    pub fn frozen(grid: GridSpec, initial: &WeightedSegment) -> Result<Self> {
        check_initial(&grid, initial)?;
        let mut values = Vec::with_capacity(grid.total_nodes() * initial.dim());
        values.extend_from_slice(initial.values());
        for _ in 0..grid.sim_steps() {
            values.extend_from_slice(initial.at_zero());
        }
        Trajectory::new(grid, initial.tau(), initial.dim(), values)
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Node `a` counted from time `-T_hist`.
    #[inline]
    pub fn node(&self, a: usize) -> &[f64] {
        &self.values[a * self.dim..(a + 1) * self.dim]
    }

    /// `X(t)` for a grid time `t` in `[-T_hist, T]`.
    pub fn at(&self, t: f64) -> Result<&[f64]> {
        let h = self.grid.h();
        let rel = (t / h).round();
        let idx = rel + self.grid.hist_steps() as f64;
        if (rel * h - t).abs() > 1e-9 * h.max(t.abs())
            || !(idx >= 0.0)
            || idx as usize >= self.grid.total_nodes()
        {
            return Err(Error::OutOfRange {
                t,
                horizon: self.grid.horizon(),
            });
        }
        Ok(self.node(idx as usize))
    }

    /// `X(t)` at simulation step `k`.
    #[inline]
    pub fn state(&self, step: usize) -> &[f64] {
        self.node(self.grid.hist_steps() + step)
    }

    /// Segment `X_t` at simulation step `k`, borrowed.
    #[inline]
    pub fn segment_view(&self, step: usize) -> SegmentView<'_> {
        let n = self.grid.hist_steps();
        SegmentView {
            tau: self.tau,
            h: self.grid.h(),
            dim: self.dim,
            values: &self.values[step * self.dim..(step + n + 1) * self.dim],
        }
    }

    /// Segment `X_t(r) = X(t + r)` for grid time `t` in `[0, T]`.
    pub fn segment_at(&self, t: f64) -> Result<WeightedSegment> {
        let k = self.grid.step_of(t)?;
        Ok(self.segment_view(k).to_owned(TailPolicy::ConstantExtension))
    }

    pub fn initial_segment(&self) -> WeightedSegment {
        self.segment_view(0).to_owned(TailPolicy::ConstantExtension)
    }

    /// `||X_t||_tau` for every step, using a sliding window maximum.
    pub fn segment_norms(&self) -> Vec<f64> {
        let n = self.grid.hist_steps();
        let weights = weight_table(self.tau, self.grid.h(), n);
        let mags: Vec<f64> = (0..self.grid.total_nodes())
            .map(|a| euclid(self.node(a)))
            .collect();
        let mut tracker = WindowMax::default();
        (0..=self.grid.sim_steps())
            .map(|k| tracker.advance(k, n, &weights, |a| mags[a]))
            .collect()
    }

    /// Pathwise check of `e^{p tau t}||X_t||^p <= ||X_0||^p + max_{s<=t} e^{p tau s}|X(s)|^p`.
    pub fn shift_bound_check(&self, p: f64, t: f64) -> Result<ShiftBound> {
        let k = self.grid.step_of(t)?;
        Ok(self.shift_bound_at(p, k))
    }

    pub(crate) fn shift_bound_at(&self, p: f64, k: usize) -> ShiftBound {
        let t = self.grid.time(k);
        let lhs = (p * self.tau * t).exp() * self.segment_view(k).tau_norm().powf(p);
        let mut path_max = 0.0f64;
        for j in 0..=k {
            let s = self.grid.time(j);
            let v = (p * self.tau * s).exp() * euclid(self.state(j)).powf(p);
            path_max = path_max.max(v);
        }
        ShiftBound {
            lhs,
            rhs: self.segment_view(0).tau_norm().powf(p) + path_max,
        }
    }

    /// Number of grid times at which the shift bound fails, over all steps.
    pub fn shift_bound_violations(&self, p: f64) -> usize {
        let norms = self.segment_norms();
        let x0 = norms[0].powf(p);
        let mut path_max = 0.0f64;
        let mut violations = 0;
        for (k, norm) in norms.iter().enumerate() {
            let t = self.grid.time(k);
            let v = (p * self.tau * t).exp() * euclid(self.state(k)).powf(p);
            path_max = path_max.max(v);
            let bound = ShiftBound {
                lhs: (p * self.tau * t).exp() * norm.powf(p),
                rhs: x0 + path_max,
            };
            if !bound.holds() {
                violations += 1;
            }
        }
        violations
    }
}

pub(crate) fn check_initial(grid: &GridSpec, initial: &WeightedSegment) -> Result<()> {
    if initial.h() != grid.h() || initial.hist_steps() != grid.hist_steps() {
        return Err(Error::GridMismatch(format!(
            "initial segment has h = {}, {} history steps; grid has h = {}, {}",
            initial.h(),
            initial.hist_steps(),
            grid.h(),
            grid.hist_steps()
        )));
    }
    Ok(())
}

/// Both sides of the pathwise shift inequality at one grid time.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShiftBound {
    pub lhs: f64,
    pub rhs: f64,
}

impl ShiftBound {
    /// Relative slack absorbing the rounding of `e^{p tau t} e^{p tau s}` vs `e^{p tau (t+s)}`.
    pub const REL_SLACK: f64 = 1e-12;

    pub fn holds(&self) -> bool {
        self.lhs <= self.rhs * (1.0 + Self::REL_SLACK)
    }
}

/// Sliding weighted window maximum.
///
/// Tracks the node attaining `max_a w[last - a] * mag(a)` over the window
/// `[k, k + n]`. Shifting the window multiplies every surviving weight by
/// the same factor, so the argmax only changes when the new node beats it or
/// when it falls out of the window (then the window is rescanned).
#[derive(Clone, Copy, Debug, Default)]
pub(crate) struct WindowMax {
    node: usize,
    value: f64,
    primed: bool,
}

impl WindowMax {
    pub(crate) fn advance(
        &mut self,
        k: usize,
        n: usize,
        weights: &[f64],
        mut mag: impl FnMut(usize) -> f64,
    ) -> f64 {
        let last = k + n;
        if !self.primed || self.node < k {
            let mut best = (last, weights[0] * mag(last));
            for a in (k..last).rev() {
                let v = weights[last - a] * mag(a);
                if v > best.1 {
                    best = (a, v);
                }
            }
            self.node = best.0;
            self.value = best.1;
            self.primed = true;
        } else if self.node < last {
            let kept = weights[last - self.node] * mag(self.node);
            let fresh = weights[0] * mag(last);
            if fresh >= kept {
                self.node = last;
                self.value = fresh;
            } else {
                self.value = kept;
            }
        }
        self.value
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn seg1(tau: f64, h: f64, vals: &[f64]) -> WeightedSegment {
        WeightedSegment::from_flat(tau, h, 1, vals.to_vec()).unwrap()
    }

    #[test]
    fn constant_path_norm_is_its_value() {
        let s = seg1(0.5, 0.25, &[2.0; 9]);
        assert_eq!(s.tau_norm(), 2.0);
    }

    #[test]
    fn weight_cancels_on_exponential_path() {
        let tau = 1.0;
        let h = 0.5;
        let vals: Vec<f64> = (0..=6)
            .map(|i| 3.0 / node_weight(tau, h, 6 - i))
            .collect();
        let s = seg1(tau, h, &vals);
        assert!((s.tau_norm() - 3.0).abs() < 1e-15);
    }

    #[test]
    fn three_node_norms() {
        // nodes s = -2, -1, 0 with values 40, 5, 1
        let s = seg1(1.0, 1.0, &[40.0, 5.0, 1.0]);
        // brute force over nodes
        let brute = [40.0 * (-2.0f64).exp(), 5.0 * (-1.0f64).exp(), 1.0]
            .into_iter()
            .fold(0.0, f64::max);
        assert_eq!(s.tau_norm(), brute);
        assert!((s.tau_norm() - 5.41341).abs() < 1e-5);
        let n1 = s.truncated_norm(1.0).unwrap();
        assert!((n1 - 1.83940).abs() < 1e-5);
        assert_eq!(s.truncated_norm(2.0).unwrap(), s.tau_norm());
        assert!(matches!(s.truncated_norm(0.5), Err(Error::GridMismatch(_))));
    }

    #[test]
    fn zero_path_has_zero_norms() {
        let s = WeightedSegment::zero(2, 1.0, 0.5, 4).unwrap();
        for n in [0.5, 1.0, 2.0] {
            assert_eq!(s.truncated_norm(n).unwrap(), 0.0);
        }
    }

    #[test]
    fn malformed_segments_rejected() {
        assert!(matches!(
            WeightedSegment::from_flat(1.0, 0.1, 1, vec![]),
            Err(Error::MalformedSegment(_))
        ));
        let bad: std::result::Result<WeightedSegment, _> =
            serde_json::from_str(r#"{"tau":1.0,"h":0.5,"T_hist":1.0,"values":[]}"#);
        assert!(bad.is_err());
    }

    #[test]
    fn constant_extension_and_point_path() {
        let s = WeightedSegment::from_flat(1.0, 0.5, 2, vec![7.0, 7.0, 3.0, 3.0, 1.0, -2.0])
            .unwrap();
        let c = s.constant_extension();
        assert!(c.values().chunks(2).all(|v| v == [1.0, -2.0]));
        assert_eq!(c.tau_norm(), 5f64.sqrt());
        assert_eq!(c.constant_extension(), c);
        let z = WeightedSegment::point_path(&[0.0], 1.0, 0.5, 3).unwrap();
        assert_eq!(z.tau_norm(), 0.0);
    }

    #[test]
    fn tail_bound_follows_policy() {
        let s = seg1(1.0, 1.0, &[4.0, 0.0, 0.0]);
        assert_eq!(s.tail_bound(), 4.0 * (-2.0f64).exp());
        assert_eq!(s.clone().with_tail(TailPolicy::Zero).tail_bound(), 0.0);
        let r = s.tau_norm_report();
        assert!(r.tail_bound <= r.value);
    }

    fn traj_from(grid: GridSpec, tau: f64, f: impl Fn(f64) -> f64) -> Trajectory {
        let n = grid.hist_steps() as i64;
        let vals = (0..grid.total_nodes() as i64)
            .map(|a| f((a - n) as f64 * grid.h()))
            .collect();
        Trajectory::new(grid, tau, 1, vals).unwrap()
    }

    #[test]
    fn segment_at_slices_exactly() {
        let grid = GridSpec::new(0.5, 2.0, 3.0).unwrap();
        let tr = traj_from(grid, 1.0, |t| t * t - 1.0);
        assert_eq!(tr.segment_at(0.0).unwrap(), tr.initial_segment());
        let s1 = tr.segment_at(1.0).unwrap();
        assert_eq!(s1.at(-0.5).unwrap(), tr.at(0.5).unwrap());
        for k in 0..=grid.sim_steps() {
            let t = grid.time(k);
            let seg = tr.segment_at(t).unwrap();
            assert_eq!(seg.at_zero(), tr.at(t).unwrap());
        }
        assert!(matches!(tr.segment_at(3.5), Err(Error::OutOfRange { .. })));
        assert!(tr.segment_at(0.75).is_err());
    }

    #[test]
    fn shift_bound_on_constant_path_is_tight() {
        let grid = GridSpec::new(0.25, 1.0, 2.0).unwrap();
        let tr = traj_from(grid, 0.7, |_| -1.5);
        let p = 2.0;
        for k in 0..=grid.sim_steps() {
            let b = tr.shift_bound_check(p, grid.time(k)).unwrap();
            assert!(b.holds());
            // equality with the s = t node; the history term adds |c|^p
            let expected = (p * 0.7 * grid.time(k)).exp() * 1.5f64.powf(p);
            assert!((b.lhs - expected).abs() <= 1e-12 * expected);
        }
        let b0 = tr.shift_bound_check(p, 0.0).unwrap();
        assert_eq!(b0.lhs, tr.initial_segment().tau_norm().powf(p));
    }

    #[test]
    fn sliding_norms_match_direct() {
        let grid = GridSpec::new(0.1, 1.0, 4.0).unwrap();
        let tr = traj_from(grid, 1.3, |t| (3.0 * t).sin() * (1.0 + t.abs()));
        let fast = tr.segment_norms();
        for (k, v) in fast.iter().enumerate() {
            let direct = tr.segment_view(k).tau_norm();
            assert!((v - direct).abs() <= 4.0 * f64::EPSILON * direct, "{k}");
        }
    }

    fn arb_segment() -> impl Strategy<Value = (WeightedSegment, WeightedSegment)> {
        (1usize..12, 0.1f64..3.0, 1usize..3).prop_flat_map(|(n, tau, d)| {
            let len = (n + 1) * d;
            (
                prop::collection::vec(-50.0f64..50.0, len),
                prop::collection::vec(-50.0f64..50.0, len),
            )
                .prop_map(move |(a, b)| {
                    (
                        WeightedSegment::from_flat(tau, 0.25, d, a).unwrap(),
                        WeightedSegment::from_flat(tau, 0.25, d, b).unwrap(),
                    )
                })
        })
    }

    proptest! {
        #[test]
        fn truncated_norm_monotone_in_window((a, _b) in arb_segment()) {
            let mut prev = 0.0;
            for k in 1..=a.hist_steps() {
                let v = a.truncated_norm(k as f64 * 0.25).unwrap();
                prop_assert!(v >= prev);
                prev = v;
            }
            prop_assert_eq!(prev, a.tau_norm());
        }

        #[test]
        fn norm_axioms((a, b) in arb_segment(), c in -5.0f64..5.0) {
            let sum = a.axpy(1.0, &b).unwrap();
            prop_assert!(sum.tau_norm() <= (a.tau_norm() + b.tau_norm()) * (1.0 + 1e-14));
            let scaled = a.scaled(c).tau_norm();
            prop_assert!((scaled - c.abs() * a.tau_norm()).abs() <= 1e-13 * (1.0 + scaled));
        }

        #[test]
        fn json_round_trip_is_bit_exact((a, _b) in arb_segment()) {
            let s = serde_json::to_string(&a).unwrap();
            let back: WeightedSegment = serde_json::from_str(&s).unwrap();
            prop_assert_eq!(back, a);
        }

        #[test]
        fn shift_bound_holds_on_random_paths(vals in prop::collection::vec(-10.0f64..10.0, 21), p in 1.0f64..4.0) {
            let grid = GridSpec::new(0.5, 4.0, 6.0).unwrap();
            let tr = Trajectory::new(grid, 0.8, 1, vals).unwrap();
            for k in 0..=grid.sim_steps() {
                // brute force: split the max into nodes before and after time 0
                let b = tr.shift_bound_check(p, grid.time(k)).unwrap();
                prop_assert!(b.holds(), "k={} lhs={} rhs={}", k, b.lhs, b.rhs);
            }
            prop_assert_eq!(tr.shift_bound_violations(p), 0);
        }
    }
}
