//! Empirical measures on the weighted path space, Wasserstein distances
//! between equal-size ensembles, and time-weighted distances between flows.

use std::sync::Arc;

use rayon::prelude::*;

use crate::assignment::{self, Assignment};
use crate::error::{Error, Result};
use crate::grid::GridSpec;
use crate::segment::{
    diff_window_norm, euclid_diff, weight_table, window_steps, SegmentView, Trajectory,
    WeightedSegment, WindowMax,
};

/// Equal-weight measure on `M >= 1` segments sharing `tau`, `h`, and shape.
#[derive(Clone, Debug, PartialEq)]
pub struct EmpiricalMeasure {
    atoms: Vec<WeightedSegment>,
    mean0: Vec<f64>,
}

/// Mean of `x_i` over `i < len`, accumulated in index order.
pub(crate) fn index_order_mean<'a>(
    dim: usize,
    len: usize,
    mut at: impl FnMut(usize) -> &'a [f64],
) -> Vec<f64> {
    let mut acc = vec![0.0; dim];
    for i in 0..len {
        for (a, x) in acc.iter_mut().zip(at(i)) {
            *a += x;
        }
    }
    acc.iter_mut().for_each(|a| *a /= len as f64);
    acc
}

impl EmpiricalMeasure {
    pub fn new(atoms: Vec<WeightedSegment>) -> Result<Self> {
        let first = atoms
            .first()
            .ok_or_else(|| Error::InvalidParam("an empirical measure needs at least one atom".into()))?;
        for a in &atoms[1..] {
            first.view().check_compatible(&a.view())?;
        }
        let mean0 = index_order_mean(first.dim(), atoms.len(), |i| atoms[i].at_zero());
        Ok(EmpiricalMeasure { atoms, mean0 })
    }

    pub fn dirac(atom: WeightedSegment) -> Self {
        EmpiricalMeasure::new(vec![atom]).expect("single atom is always valid")
    }

    pub fn atoms(&self) -> &[WeightedSegment] {
        &self.atoms
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.atoms[0].dim()
    }

    pub fn tau(&self) -> f64 {
        self.atoms[0].tau()
    }

    pub fn hist_steps(&self) -> usize {
        self.atoms[0].hist_steps()
    }

    /// Mean of `xi(0)` under the measure.
    pub fn mean_at_zero(&self) -> &[f64] {
        &self.mean0
    }

    pub fn view(&self) -> MeasureView<'_> {
        MeasureView {
            source: Source::Segments(&self.atoms),
            mean0: &self.mean0,
        }
    }

    /// `||mu||_k = (mean ||xi||_tau^k)^{1/k}`, and 1 for `k = 0`.
    pub fn moment_norm(&self, k: f64) -> Result<f64> {
        self.view().moment_norm(k)
    }
}

#[derive(Clone, Copy, Debug)]
enum Source<'a> {
    Segments(&'a [WeightedSegment]),
    Paths { paths: &'a [Trajectory], step: usize },
    Views(&'a [SegmentView<'a>]),
}

/// Borrowed empirical measure; the form drift coefficients receive.
#[derive(Clone, Copy, Debug)]
pub struct MeasureView<'a> {
    source: Source<'a>,
    mean0: &'a [f64],
}

impl<'a> MeasureView<'a> {
    pub(crate) fn from_views(views: &'a [SegmentView<'a>], mean0: &'a [f64]) -> Self {
        MeasureView {
            source: Source::Views(views),
            mean0,
        }
    }

    pub fn len(&self) -> usize {
        match self.source {
            Source::Segments(s) => s.len(),
            Source::Paths { paths, .. } => paths.len(),
            Source::Views(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn atom(&self, i: usize) -> SegmentView<'a> {
        match self.source {
            Source::Segments(s) => s[i].view(),
            Source::Paths { paths, step } => paths[i].segment_view(step),
            Source::Views(v) => v[i],
        }
    }

    pub fn mean_at_zero(&self) -> &'a [f64] {
        self.mean0
    }

    pub fn dim(&self) -> usize {
        self.mean0.len()
    }

    pub fn to_owned(&self) -> EmpiricalMeasure {
        let atoms = (0..self.len())
            .map(|i| self.atom(i).to_owned(Default::default()))
            .collect();
        EmpiricalMeasure {
            atoms,
            mean0: self.mean0.to_vec(),
        }
    }

    pub fn moment_norm(&self, k: f64) -> Result<f64> {
        if !(k >= 0.0) {
            return Err(Error::Domain(format!("moment order k = {k} must be >= 0")));
        }
        if k == 0.0 {
            return Ok(1.0);
        }
        let m = self.len() as f64;
        let s: f64 = (0..self.len())
            .map(|i| pow_k(self.atom(i).tau_norm(), k))
            .sum();
        Ok((s / m).powf(1.0 / k))
    }

    fn check_against(&self, other: &MeasureView<'_>) -> Result<()> {
        if self.len() != other.len() {
            return Err(Error::UnsupportedCoupling(format!(
                "ensembles of {} and {} atoms; only equal sizes are supported",
                self.len(),
                other.len()
            )));
        }
        self.atom(0).check_compatible(&other.atom(0))
    }
}

#[inline]
pub(crate) fn pow_k(x: f64, k: f64) -> f64 {
    if k == 1.0 {
        x
    } else if k == 2.0 {
        x * x
    } else {
        x.powf(k)
    }
}

#[inline]
pub(crate) fn root_k(mean: f64, k: f64) -> f64 {
    if k <= 1.0 {
        mean
    } else if k == 2.0 {
        mean.sqrt()
    } else {
        mean.powf(1.0 / k)
    }
}

/// Cost matrix `||xi_i - eta_j||_{N,tau}^k`, row-major.
pub fn cost_matrix(
    mu: &MeasureView<'_>,
    nu: &MeasureView<'_>,
    k: f64,
    window_steps: usize,
) -> Vec<f64> {
    let m = mu.len();
    let mut cost = vec![0.0; m * m];
    cost.par_chunks_mut(m).enumerate().for_each(|(i, row)| {
        let a = mu.atom(i);
        for (j, c) in row.iter_mut().enumerate() {
            *c = pow_k(diff_window_norm(&a, &nu.atom(j), window_steps), k);
        }
    });
    cost
}

/// Optimal coupling between two equal-size ensembles, with its distance.
#[derive(Clone, Debug, PartialEq)]
pub struct Transport {
    pub distance: f64,
    pub assignment: Assignment,
}

/// `W_k(mu, nu)` over the window `[-N, 0]`: exact optimal assignment of
/// `sum_i ||xi_i - eta_pi(i)||_{N,tau}^k / M`, raised to `1/(1 v k)`.
pub fn wasserstein(mu: &EmpiricalMeasure, nu: &EmpiricalMeasure, k: f64, window: f64) -> Result<f64> {
    wasserstein_view(&mu.view(), &nu.view(), k, window)
}

pub fn wasserstein_view(
    mu: &MeasureView<'_>,
    nu: &MeasureView<'_>,
    k: f64,
    window: f64,
) -> Result<f64> {
    Ok(optimal_transport(mu, nu, k, window)?.distance)
}

pub fn optimal_transport(
    mu: &MeasureView<'_>,
    nu: &MeasureView<'_>,
    k: f64,
    window: f64,
) -> Result<Transport> {
    if !(k > 0.0) {
        return Err(Error::Domain(format!("Wasserstein order k = {k} must be > 0")));
    }
    mu.check_against(nu)?;
    let a0 = mu.atom(0);
    let steps = window_steps(window, a0.h(), a0.hist_steps())?;
    transport_steps(mu, nu, k, steps)
}

pub(crate) fn transport_steps(
    mu: &MeasureView<'_>,
    nu: &MeasureView<'_>,
    k: f64,
    steps: usize,
) -> Result<Transport> {
    let m = mu.len();
    let assignment = if is_point_mass(mu) || is_point_mass(nu) {
        // every pairing has the same cost
        let cost = (0..m)
            .map(|i| pow_k(diff_window_norm(&mu.atom(i), &nu.atom(i), steps), k))
            .sum();
        assignment::Assignment {
            row_to_col: (0..m).collect(),
            cost,
        }
    } else {
        assignment::solve(&cost_matrix(mu, nu, k, steps), m)?
    };
    Ok(Transport {
        distance: root_k(assignment.cost / m as f64, k),
        assignment,
    })
}

fn is_point_mass(mu: &MeasureView<'_>) -> bool {
    let first = mu.atom(0).raw();
    (1..mu.len()).all(|i| mu.atom(i).raw() == first)
}

#[derive(Clone, Debug)]
enum FlowStorage {
    Constant(EmpiricalMeasure),
    Paths(Arc<Vec<Trajectory>>),
}

/// One empirical measure per grid time in `[0, T]`.
///
/// Either a single measure held constant in time, or the time-`t` segments
/// of an ensemble of trajectories.
#[derive(Clone, Debug)]
pub struct EmpiricalMeasureFlow {
    grid: GridSpec,
    tau: f64,
    dim: usize,
    len: usize,
    storage: FlowStorage,
    means: Vec<f64>,
}

impl EmpiricalMeasureFlow {
    /// `mu_t = gamma` for every `t`.
    pub fn constant(grid: GridSpec, gamma: EmpiricalMeasure) -> Result<Self> {
        if gamma.hist_steps() != grid.hist_steps() || gamma.atoms()[0].h() != grid.h() {
            return Err(Error::GridMismatch(
                "constant flow atoms do not match the grid".into(),
            ));
        }
        let dim = gamma.dim();
        let mut means = Vec::with_capacity((grid.sim_steps() + 1) * dim);
        for _ in 0..=grid.sim_steps() {
            means.extend_from_slice(gamma.mean_at_zero());
        }
        Ok(EmpiricalMeasureFlow {
            grid,
            tau: gamma.tau(),
            dim,
            len: gamma.len(),
            storage: FlowStorage::Constant(gamma),
            means,
        })
    }

    /// Flow of segment laws of an ensemble.
    pub fn from_paths(paths: Arc<Vec<Trajectory>>) -> Result<Self> {
        let first = paths
            .first()
            .ok_or_else(|| Error::InvalidParam("flow needs at least one path".into()))?;
        let grid = *first.grid();
        let (tau, dim) = (first.tau(), first.dim());
        for p in paths.iter() {
            if !p.grid().same_shape(&grid) || p.tau() != tau || p.dim() != dim {
                return Err(Error::GridMismatch(
                    "flow paths do not share grid, tau, and dimension".into(),
                ));
            }
        }
        let mut means = Vec::with_capacity((grid.sim_steps() + 1) * dim);
        for k in 0..=grid.sim_steps() {
            means.extend(index_order_mean(dim, paths.len(), |i| paths[i].state(k)));
        }
        Ok(EmpiricalMeasureFlow {
            grid,
            tau,
            dim,
            len: paths.len(),
            storage: FlowStorage::Paths(paths),
            means,
        })
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

    /// Atoms per measure.
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn paths(&self) -> Option<&Arc<Vec<Trajectory>>> {
        match &self.storage {
            FlowStorage::Paths(p) => Some(p),
            FlowStorage::Constant(_) => None,
        }
    }

    /// Measure at step `k`.
    pub fn at(&self, step: usize) -> MeasureView<'_> {
        let mean0 = &self.means[step * self.dim..(step + 1) * self.dim];
        match &self.storage {
            FlowStorage::Constant(g) => MeasureView {
                source: Source::Segments(g.atoms()),
                mean0,
            },
            FlowStorage::Paths(p) => MeasureView {
                source: Source::Paths { paths: p, step },
                mean0,
            },
        }
    }

    /// Measure at grid time `t`.
    pub fn at_time(&self, t: f64) -> Result<MeasureView<'_>> {
        Ok(self.at(self.grid.step_of(t)?))
    }

    pub fn measure_at(&self, step: usize) -> EmpiricalMeasure {
        self.at(step).to_owned()
    }

    fn check_against(&self, other: &EmpiricalMeasureFlow) -> Result<()> {
        if !self.grid.same_shape(&other.grid) {
            return Err(Error::GridMismatch(format!(
                "flow grids differ: {:?} vs {:?}",
                self.grid, other.grid
            )));
        }
        if self.len != other.len {
            return Err(Error::UnsupportedCoupling(format!(
                "flows of {} and {} atoms",
                self.len, other.len
            )));
        }
        if self.tau != other.tau || self.dim != other.dim {
            return Err(Error::GridMismatch("flows differ in tau or dimension".into()));
        }
        Ok(())
    }
}

/// `W_2(F_t, G_t)` over the full window at every grid time, by exact assignment.
pub fn flow_w2_profile(f: &EmpiricalMeasureFlow, g: &EmpiricalMeasureFlow) -> Result<Vec<f64>> {
    f.check_against(g)?;
    let n = f.grid.hist_steps();
    (0..=f.grid.sim_steps())
        .map(|k| Ok(transport_steps(&f.at(k), &g.at(k), 2.0, n)?.distance))
        .collect()
}

/// Identity-pairing cost `||F_t[i] - G_t[i]||_tau` for every step and atom.
fn paired_norms(f: &EmpiricalMeasureFlow, g: &EmpiricalMeasureFlow) -> Vec<Vec<f64>> {
    let grid = f.grid;
    let n = grid.hist_steps();
    let steps = grid.sim_steps();
    match (&f.storage, &g.storage) {
        (FlowStorage::Paths(a), FlowStorage::Paths(b)) => {
            let weights = weight_table(f.tau, grid.h(), n);
            (0..f.len)
                .into_par_iter()
                .map(|i| {
                    let (pa, pb) = (&a[i], &b[i]);
                    let mut tracker = WindowMax::default();
                    (0..=steps)
                        .map(|k| {
                            tracker.advance(k, n, &weights, |node| {
                                euclid_diff(pa.node(node), pb.node(node))
                            })
                        })
                        .collect()
                })
                .collect()
        }
        _ => (0..f.len)
            .into_par_iter()
            .map(|i| {
                (0..=steps)
                    .map(|k| diff_window_norm(&f.at(k).atom(i), &g.at(k).atom(i), n))
                    .collect()
            })
            .collect(),
    }
}

/// `W_{2,theta}(F, G) = max_t e^{-theta t} W_2(F_t, G_t)`.
///
/// The maximum is exact: the identity pairing gives an upper bound at every
/// time, and exact assignments are solved in decreasing order of that bound
/// until no remaining time can beat the best value found.
pub fn flow_distance_theta(
    f: &EmpiricalMeasureFlow,
    g: &EmpiricalMeasureFlow,
    theta: f64,
) -> Result<f64> {
    Ok(flow_distance_detail(f, g, theta)?.distance)
}

/// Result of [`flow_distance_detail`].
#[derive(Clone, Debug, PartialEq)]
pub struct FlowDistance {
    pub distance: f64,
    /// Step attaining the maximum.
    pub argmax_step: usize,
    /// Number of exact assignments solved.
    pub solves: usize,
}

pub fn flow_distance_detail(
    f: &EmpiricalMeasureFlow,
    g: &EmpiricalMeasureFlow,
    theta: f64,
) -> Result<FlowDistance> {
    if !(theta >= 0.0) {
        return Err(Error::Domain(format!("theta = {theta} must be >= 0")));
    }
    f.check_against(g)?;
    let grid = f.grid;
    let n = grid.hist_steps();
    let m = f.len as f64;
    let paired = paired_norms(f, g);
    let discount = |k: usize| (-theta * grid.time(k)).exp();
    let steps: Vec<usize> = (0..=grid.sim_steps()).collect();
    let upper: Vec<f64> = steps
        .par_iter()
        .map(|&k| {
            let s: f64 = paired.iter().map(|row| row[k] * row[k]).sum();
            let s = s.min(rank_pairing_cost(&f.at(k), &g.at(k), n));
            discount(k) * (s / m).sqrt()
        })
        .collect();
    let lower: Vec<f64> = steps
        .par_iter()
        .map(|&k| discount(k) * marginal_lower_bound(&f.at(k), &g.at(k)))
        .collect();
    // descending bound, ties by earlier time
    let mut order = steps.clone();
    order.sort_by(|&a, &b| upper[b].total_cmp(&upper[a]).then(a.cmp(&b)));

    let solve = |k: usize| -> Result<f64> {
        Ok(discount(k) * transport_steps(&f.at(k), &g.at(k), 2.0, n)?.distance)
    };
    let mut best = FlowDistance {
        distance: 0.0,
        argmax_step: 0,
        solves: 0,
    };
    // the step with the largest lower bound is solved first so pruning starts high
    let seed = steps
        .iter()
        .copied()
        .reduce(|a, b| if lower[b] > lower[a] { b } else { a })
        .expect("grid has a node");
    if upper[seed] > 0.0 {
        best.distance = solve(seed)?;
        best.argmax_step = seed;
        best.solves = 1;
    }
    let mut rest = order.into_iter().filter(|&k| k != seed).peekable();
    loop {
        let cut = best.distance;
        let batch: Vec<usize> = std::iter::from_fn(|| {
            rest.next_if(|&k| !(upper[k] * (1.0 + 1e-12) <= cut || upper[k] == 0.0))
        })
        .take(SOLVE_BATCH)
        .collect();
        if batch.is_empty() {
            break;
        }
        let vals = batch.par_iter().map(|&k| solve(k)).collect::<Result<Vec<f64>>>()?;
        for (&k, v) in batch.iter().zip(vals) {
            best.solves += 1;
            if v > best.distance || (v == best.distance && k < best.argmax_step) {
                best.distance = v;
                best.argmax_step = k;
            }
        }
    }
    Ok(best)
}

/// Exact assignments solved concurrently per pruning round. Fixed, so the
/// work done does not depend on the worker count.
const SOLVE_BATCH: usize = 8;

/// Squared-norm cost of pairing atoms by the rank of their first coordinate
/// at time 0; an upper bound for `M W_2^2`. Infinite for `d > 1`.
fn rank_pairing_cost(mu: &MeasureView<'_>, nu: &MeasureView<'_>, n: usize) -> f64 {
    if mu.dim() != 1 {
        return f64::INFINITY;
    }
    let m = mu.len();
    let ranked = |v: &MeasureView<'_>| {
        let mut idx: Vec<usize> = (0..m).collect();
        idx.sort_by(|&i, &j| v.atom(i).at_zero()[0].total_cmp(&v.atom(j).at_zero()[0]));
        idx
    };
    let (a, b) = (ranked(mu), ranked(nu));
    a.iter()
        .zip(&b)
        .map(|(&i, &j)| {
            let d = diff_window_norm(&mu.atom(i), &nu.atom(j), n);
            d * d
        })
        .sum()
}

/// Lower bound on `W_2` over segments from the time-0 marginals: sorted
/// matching in one dimension, the gap of the means otherwise.
fn marginal_lower_bound(mu: &MeasureView<'_>, nu: &MeasureView<'_>) -> f64 {
    let m = mu.len();
    if mu.dim() == 1 {
        let mut a: Vec<f64> = (0..m).map(|i| mu.atom(i).at_zero()[0]).collect();
        let mut b: Vec<f64> = (0..m).map(|i| nu.atom(i).at_zero()[0]).collect();
        a.sort_by(f64::total_cmp);
        b.sort_by(f64::total_cmp);
        let s: f64 = a.iter().zip(&b).map(|(x, y)| (x - y) * (x - y)).sum();
        (s / m as f64).sqrt()
    } else {
        euclid_diff(mu.mean_at_zero(), nu.mean_at_zero())
    }
}
