//! Fixed-point iteration on measure flows: `flow -> law of the SDE driven by
//! flow`, started from the constant flow at the initial law.

use serde::{Deserialize, Serialize};

use crate::coefficients::CoefficientSet;
use crate::engine::{simulate_frozen, SimOptions};
use crate::error::{Error, Result};
use crate::measure::{flow_distance_theta, EmpiricalMeasure, EmpiricalMeasureFlow};
use crate::noise::{NoisePlan, Phase};
use crate::grid::GridSpec;
use crate::segment::WeightedSegment;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PicardConfig {
    pub tol: f64,
    pub max_iter: usize,
    /// Weight rate of the flow metric; `None` uses `2 (K1 + K2 + 1)`.
    pub theta: Option<f64>,
    /// Reuse the same driving noise in every iteration.
    pub common_noise: bool,
    pub taming: Option<bool>,
}

impl Default for PicardConfig {
    fn default() -> Self {
        PicardConfig {
            tol: 1e-3,
            max_iter: 15,
            theta: None,
            common_noise: true,
            taming: None,
        }
    }
}

impl PicardConfig {
    fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) {
            return Err(Error::InvalidParam(format!("tol = {} must be > 0", self.tol)));
        }
        if self.max_iter == 0 {
            return Err(Error::InvalidParam("max_iter must be >= 1".into()));
        }
        if let Some(t) = self.theta {
            if !(t >= 0.0 && t.is_finite()) {
                return Err(Error::InvalidParam(format!("theta = {t} must be finite and >= 0")));
            }
        }
        Ok(())
    }
}

/// Default weight rate `2 (K1 + K2 + 1)`.
pub fn default_theta(coeffs: &CoefficientSet) -> Result<f64> {
    let t = 2.0 * (coeffs.constants.k1 + coeffs.constants.k2 + 1.0);
    if t.is_finite() {
        Ok(t)
    } else {
        Err(Error::InvalidParam(format!(
            "model `{}` declares no finite K1, K2; set theta explicitly",
            coeffs.name()
        )))
    }
}

/// Iterates and their gaps.
#[derive(Clone, Debug)]
pub struct PicardTrace {
    /// `flows[0]` is the constant initial flow; the last entry comes from the
    /// certifying application when the iteration converged.
    pub flows: Vec<EmpiricalMeasureFlow>,
    /// `distances[j] = W_{2,theta}(flows[j + 1], flows[j])`.
    pub distances: Vec<f64>,
    /// `ratios[j] = distances[j + 1] / distances[j]` where `distances[j] > tol * 1e-3`.
    pub ratios: Vec<Option<f64>>,
    pub converged: bool,
    /// Index of the first gap below `tol`, i.e. the number of applications
    /// after which the iterate stopped moving.
    pub iterations_used: usize,
    /// Gap of the extra application made after convergence.
    pub certificate: Option<f64>,
    pub theta: f64,
    pub tol: f64,
}

/// Serializable part of a [`PicardTrace`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PicardSummary {
    pub theta: f64,
    pub tol: f64,
    pub distances: Vec<f64>,
    pub ratios: Vec<Option<f64>>,
    pub converged: bool,
    pub iterations_used: usize,
    pub certificate: Option<f64>,
    pub max_ratio: Option<f64>,
}

fn ratios(d: &[f64], tol: f64) -> Vec<Option<f64>> {
    d.windows(2)
        .map(|w| (w[0] > tol * 1e-3).then(|| w[1] / w[0]))
        .collect()
}

fn max_defined(r: &[Option<f64>]) -> Option<f64> {
    r.iter().flatten().copied().reduce(f64::max)
}

impl PicardTrace {
    /// Returned fixed-point approximation.
    pub fn fixed_point(&self) -> &EmpiricalMeasureFlow {
        let k = if self.converged && self.certificate.is_some() {
            self.flows.len() - 2
        } else {
            self.flows.len() - 1
        };
        &self.flows[k]
    }

    pub fn max_ratio(&self) -> Option<f64> {
        max_defined(&self.ratios)
    }

    pub fn summary(&self) -> PicardSummary {
        PicardSummary {
            theta: self.theta,
            tol: self.tol,
            distances: self.distances.clone(),
            ratios: self.ratios.clone(),
            converged: self.converged,
            iterations_used: self.iterations_used,
            certificate: self.certificate,
            max_ratio: self.max_ratio(),
        }
    }

    /// Gaps obey `d_{j+1} <= r_max d_j + floor` for every recorded `j`.
    pub fn is_contraction_trace(&self) -> bool {
        let Some(r) = self.max_ratio() else {
            return true;
        };
        let floor = self.tol * 1e-3;
        self.distances
            .windows(2)
            .all(|w| w[1] <= r * w[0] * (1.0 + 1e-12) + floor)
    }
}

/// Iterate the fixed-point map from `flow_0 = gamma`.
///
/// Non-convergence is reported in the trace, not as an error.
pub fn solve_fixed_point(
    coeffs: &CoefficientSet,
    gamma: &EmpiricalMeasure,
    grid: &GridSpec,
    cfg: &PicardConfig,
    noise: &NoisePlan,
) -> Result<PicardTrace> {
    cfg.validate()?;
    let theta = match cfg.theta {
        Some(t) => t,
        None => default_theta(coeffs)?,
    };
    let m2 = gamma.moment_norm(2.0)?;
    if !m2.is_finite() {
        return Err(Error::InvalidParam(format!(
            "initial law has non-finite second moment ({m2})"
        )));
    }
    let initials: &[WeightedSegment] = gamma.atoms();
    let mut flows = vec![EmpiricalMeasureFlow::constant(*grid, gamma.clone())?];
    let mut distances = Vec::new();
    let mut converged = false;
    let mut iterations_used = cfg.max_iter;
    let mut certificate = None;

    let apply = |j: usize, flow: &EmpiricalMeasureFlow| -> Result<EmpiricalMeasureFlow> {
        let phase = if cfg.common_noise {
            Phase::Dynamics
        } else {
            Phase::Iteration(j as u32)
        };
        let opts = SimOptions {
            taming: cfg.taming,
            phase,
            ..SimOptions::default()
        };
        simulate_frozen(coeffs, flow, initials, grid, noise, &opts)?.to_flow()
    };

    for j in 0..cfg.max_iter {
        let next = apply(j, flows.last().expect("nonempty"))?;
        let d = flow_distance_theta(&next, &flows[j], theta)?;
        flows.push(next);
        distances.push(d);
        if d < cfg.tol {
            converged = true;
            iterations_used = j;
            let extra = apply(j + 1, &flows[j + 1])?;
            let c = flow_distance_theta(&extra, &flows[j + 1], theta)?;
            flows.push(extra);
            distances.push(c);
            certificate = Some(c);
            break;
        }
    }
    let ratios = ratios(&distances, cfg.tol);
    Ok(PicardTrace {
        flows,
        distances,
        ratios,
        converged,
        iterations_used,
        certificate,
        theta,
        tol: cfg.tol,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContractionRow {
    pub theta: f64,
    pub distances: Vec<f64>,
    pub max_ratio: Option<f64>,
    pub iterations_to_tol: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContractionReport {
    pub rows: Vec<ContractionRow>,
    /// No gap beyond the first is above the noise floor.
    pub degenerate: bool,
    /// Smallest swept theta whose ratios all stay below 1.
    pub threshold: Option<f64>,
}

/// Re-evaluate the stored iterate gaps under each `theta`.
pub fn contraction_report(trace: &PicardTrace, thetas: &[f64]) -> Result<ContractionReport> {
    let mut rows = Vec::with_capacity(thetas.len());
    for &theta in thetas {
        let distances = trace
            .flows
            .windows(2)
            .map(|w| flow_distance_theta(&w[1], &w[0], theta))
            .collect::<Result<Vec<_>>>()?;
        let r = ratios(&distances, trace.tol);
        rows.push(ContractionRow {
            theta,
            max_ratio: max_defined(&r),
            iterations_to_tol: distances.iter().position(|d| *d < trace.tol),
            distances,
        });
    }
    let degenerate = rows
        .iter()
        .all(|row| row.distances.iter().skip(1).all(|d| *d <= trace.tol * 1e-3));
    if !degenerate && trace.distances.len() < 3 {
        return Err(Error::Insufficient(format!(
            "{} iterate gaps; the report needs at least 3",
            trace.distances.len()
        )));
    }
    let threshold = if degenerate {
        None
    } else {
        rows.iter()
            .filter(|r| r.max_ratio.is_some_and(|m| m < 1.0))
            .map(|r| r.theta)
            .reduce(f64::min)
    };
    Ok(ContractionReport {
        rows,
        degenerate,
        threshold,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coefficients::{builtin_model, ModelSpec};
    use crate::engine::{point_initials, simulate_interacting};
    use serde_json::json;

    fn setup(params: serde_json::Value, m: usize, grid: &GridSpec) -> (CoefficientSet, EmpiricalMeasure) {
        let c = builtin_model(&ModelSpec::new("linear_memory_meanfield", params), grid, 1.0, 1).unwrap();
        let pts: Vec<Vec<f64>> = (0..m).map(|i| vec![1.0 + 0.1 * (i % 5) as f64]).collect();
        let gamma = EmpiricalMeasure::new(point_initials(&pts, 1.0, grid).unwrap()).unwrap();
        (c, gamma)
    }

    #[test]
    fn distribution_free_model_stops_after_one_step() {
        let grid = GridSpec::new(0.05, 0.5, 1.0).unwrap();
        let (c, gamma) = setup(json!({"a": 1.0, "sigma0": 0.3}), 16, &grid);
        let tr = solve_fixed_point(&c, &gamma, &grid, &PicardConfig::default(), &NoisePlan::new(1)).unwrap();
        assert!(tr.converged);
        assert_eq!(tr.iterations_used, 1);
        assert_eq!(tr.distances[1], 0.0);
        assert_eq!(tr.flows[1].paths().unwrap(), tr.flows[2].paths().unwrap());
        let rep = contraction_report(&tr, &[0.0, 1.0]).unwrap();
        assert!(rep.degenerate && rep.threshold.is_none());
    }

    #[test]
    fn mean_field_model_contracts() {
        let grid = GridSpec::new(0.02, 0.2, 2.0).unwrap();
        let (c, gamma) = setup(json!({"a": 1.0, "gamma": 0.3, "sigma0": 0.2}), 64, &grid);
        let cfg = PicardConfig {
            tol: 1e-6,
            ..PicardConfig::default()
        };
        let tr = solve_fixed_point(&c, &gamma, &grid, &cfg, &NoisePlan::new(2)).unwrap();
        assert!(tr.converged, "{:?}", tr.distances);
        assert!(tr.max_ratio().unwrap() < 1.0);
        assert!(tr.is_contraction_trace());
        assert!(tr.certificate.unwrap() < cfg.tol);

        let rep = contraction_report(&tr, &[0.0, 1.0, 4.0]).unwrap();
        let r: Vec<f64> = rep.rows.iter().map(|r| r.max_ratio.unwrap()).collect();
        assert!(r[0] >= r[1] && r[1] >= r[2], "{r:?}");
        assert!(!rep.degenerate);

        // plain sup-in-time gaps at theta = 0
        let plain = flow_distance_theta(&tr.flows[2], &tr.flows[1], 0.0).unwrap();
        assert_eq!(rep.rows[0].distances[1], plain);
    }

    #[test]
    fn fixed_point_matches_interacting_system() {
        let grid = GridSpec::new(0.02, 0.2, 1.0).unwrap();
        let (c, gamma) = setup(json!({"a": 1.0, "gamma": 0.3, "sigma0": 0.2}), 32, &grid);
        let noise = NoisePlan::new(5);
        let cfg = PicardConfig {
            tol: 1e-8,
            ..PicardConfig::default()
        };
        let tr = solve_fixed_point(&c, &gamma, &grid, &cfg, &noise).unwrap();
        let (_, flow) = simulate_interacting(&c, gamma.atoms(), &grid, &noise, &SimOptions::default()).unwrap();
        let d = flow_distance_theta(tr.fixed_point(), &flow, 0.0).unwrap();
        assert!(d < 2.0 * cfg.tol, "{d}");
    }

    #[test]
    fn independent_noise_and_errors() {
        let grid = GridSpec::new(0.05, 0.5, 1.0).unwrap();
        let (c, gamma) = setup(json!({"a": 1.0, "sigma0": 0.3}), 8, &grid);
        let cfg = PicardConfig {
            common_noise: false,
            max_iter: 3,
            ..PicardConfig::default()
        };
        let tr = solve_fixed_point(&c, &gamma, &grid, &cfg, &NoisePlan::new(1)).unwrap();
        assert!(!tr.converged);
        assert_eq!(tr.distances.len(), 3);
        assert!(tr.distances.iter().all(|d| *d > 0.0));
        let bad = PicardConfig { tol: 0.0, ..PicardConfig::default() };
        assert!(solve_fixed_point(&c, &gamma, &grid, &bad, &NoisePlan::new(1)).is_err());
        let singular = builtin_model(&ModelSpec::new("singular_b0_toy", json!({})), &grid, 1.0, 1).unwrap();
        assert!(matches!(
            solve_fixed_point(&singular, &gamma, &grid, &PicardConfig::default(), &NoisePlan::new(1)),
            Err(Error::InvalidParam(_))
        ));
    }
}
