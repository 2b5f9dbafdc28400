//! Benchmark models with closed-form constants.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::singular::{kato_admissible, SingularityProfile};
use super::{CoefficientSet, Coefficients, Constants, Flags, FnModel, HFunction};
use crate::error::{Error, Result};
use crate::grid::GridSpec;
use crate::measure::MeasureView;
use crate::segment::SegmentView;

pub const LINEAR_MEMORY: &str = "linear_memory_meanfield";
pub const CUBIC_MEMORY: &str = "cubic_monotone_memory";
pub const SINGULAR_TOY: &str = "singular_b0_toy";
pub const ZERO: &str = "zero";

/// `{"id": ..., "params": {...}}` as written in run configs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub id: String,
    #[serde(default = "empty_object")]
    pub params: serde_json::Value,
}

fn empty_object() -> serde_json::Value {
    serde_json::Value::Object(Default::default())
}

impl ModelSpec {
    pub fn new(id: &str, params: serde_json::Value) -> Self {
        ModelSpec {
            id: id.to_string(),
            params,
        }
    }
}

/// Parameters of the linear and cubic memory models.
///
/// `b = -a x [- x^3] + beta * (int_{-inf}^0 e^{lambda r} xi(r) dr) + gamma * mean_mu eta(0)`,
/// `sigma = sigma0 * I`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LinearMemoryParams {
    pub a: f64,
    pub beta: f64,
    pub lambda: f64,
    pub gamma: f64,
    pub sigma0: f64,
    /// Overrides the default taming choice of the model.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub taming: Option<bool>,
}

impl Default for LinearMemoryParams {
    fn default() -> Self {
        LinearMemoryParams {
            a: 1.0,
            beta: 0.0,
            lambda: 2.0,
            gamma: 0.0,
            sigma0: 0.5,
            taming: None,
        }
    }
}

/// Parameters of the singular toy: `b0 = c 1_{|x|<=1} |x|^{-beta} sign(x)`, `b1 = -a xi(0)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SingularToyParams {
    pub c: f64,
    pub beta: f64,
    pub p: f64,
    pub q: f64,
    pub a: f64,
    pub sigma0: f64,
}

impl Default for SingularToyParams {
    fn default() -> Self {
        SingularToyParams {
            c: 1.0,
            beta: 0.2,
            p: 4.0,
            q: 4.0,
            a: 1.0,
            sigma0: 1.0,
        }
    }
}

fn parse<T: for<'de> Deserialize<'de>>(id: &str, params: &serde_json::Value) -> Result<T> {
    serde_json::from_value(params.clone())
        .map_err(|e| Error::Config(format!("model `{id}` params: {e}")))
}

/// Memory drift on a fixed history grid.
struct MemoryModel {
    dim: usize,
    a: f64,
    beta: f64,
    gamma: f64,
    sigma0: f64,
    cubic: bool,
    /// `h e^{-lambda lag h}` for lag `1..=N`, index `lag - 1`.
    weights: Vec<f64>,
    /// `e^{-lambda T_hist} / lambda`.
    tail: f64,
    hist_steps: usize,
}

impl MemoryModel {
    fn memory(&self, xi: &SegmentView<'_>, k: usize) -> f64 {
        debug_assert_eq!(xi.hist_steps(), self.hist_steps);
        let mut s = 0.0;
        for (i, w) in self.weights.iter().enumerate() {
            s += w * xi.lagged(i + 1)[k];
        }
        s + self.tail * xi.oldest()[k]
    }
}

impl Coefficients for MemoryModel {
    fn dim(&self) -> usize {
        self.dim
    }

    fn drift_b0(&self, _t: f64, x: &[f64], out: &mut [f64]) {
        for (o, &v) in out.iter_mut().zip(x) {
            *o = if self.cubic {
                -v * v * v - self.a * v
            } else {
                -self.a * v
            };
        }
    }

    fn drift_b1(&self, _t: f64, xi: &SegmentView<'_>, mu: &MeasureView<'_>, out: &mut [f64]) {
        let mean = mu.mean_at_zero();
        for (k, o) in out.iter_mut().enumerate() {
            let mut v = 0.0;
            if self.beta != 0.0 {
                v += self.beta * self.memory(xi, k);
            }
            if self.gamma != 0.0 {
                v += self.gamma * mean[k];
            }
            *o = v;
        }
    }

    fn sigma(&self, _t: f64, _xi: &SegmentView<'_>, out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        for i in 0..self.dim {
            out[i * self.dim + i] = self.sigma0;
        }
    }
}

/// Lipschitz constant of the memory functional in `||.||_tau`:
/// `h sum_lag e^{-(lambda - tau) lag h} + e^{-(lambda - tau) T_hist} / lambda`.
pub(crate) fn memory_lipschitz(lambda: f64, tau: f64, grid: &GridSpec) -> f64 {
    let h = grid.h();
    let n = grid.hist_steps();
    let s: f64 = (1..=n).map(|lag| h * (-(lambda - tau) * (lag as f64 * h)).exp()).sum();
    s + (-(lambda - tau) * grid.t_hist()).exp() / lambda
}

fn sigma_constants(k: &mut Constants, flags: &mut Flags, sigma0: f64) {
    if sigma0 != 0.0 {
        let s2 = sigma0 * sigma0;
        k.k_a = s2 + 1.0 / s2 + 1.0;
        k.sigma_inv = Some(1.0 / sigma0.abs());
        flags.sigma_invertible = true;
    }
}

fn memory_model(
    id: &str,
    p: LinearMemoryParams,
    grid: &GridSpec,
    tau: f64,
    dim: usize,
    cubic: bool,
) -> Result<CoefficientSet> {
    for (name, v) in [("a", p.a), ("beta", p.beta), ("lambda", p.lambda), ("gamma", p.gamma), ("sigma0", p.sigma0)] {
        if !v.is_finite() {
            return Err(Error::InvalidParam(format!("{id}: {name} = {v} must be finite")));
        }
    }
    if p.beta != 0.0 && !(p.lambda > tau) {
        return Err(Error::InvalidParam(format!(
            "{id}: memory rate lambda = {} must exceed tau = {tau} for the kernel to be summable in ||.||_tau",
            p.lambda
        )));
    }
    let h = grid.h();
    let n = grid.hist_steps();
    let weights = (1..=n)
        .map(|lag| h * (-(p.lambda * (lag as f64 * h))).exp())
        .collect();
    let tail = if p.beta != 0.0 {
        (-(p.lambda * grid.t_hist())).exp() / p.lambda
    } else {
        0.0
    };
    let model = MemoryModel {
        dim,
        a: p.a,
        beta: p.beta,
        gamma: p.gamma,
        sigma0: p.sigma0,
        cubic,
        weights,
        tail,
        hist_steps: n,
    };

    let lip = if p.beta != 0.0 {
        p.beta.abs() * memory_lipschitz(p.lambda, tau, grid)
    } else {
        0.0
    };
    let mut k = Constants::new(tau);
    k.k1 = (-p.a).max(0.0) + lip + p.gamma.abs() / 2.0;
    k.k2 = p.gamma.abs() / 2.0;
    k.k = (2.0 * lip).max(2.0 * lip * lip);
    k.alpha = 1.0;
    k.h_fn = HFunction::Constant(2.0 * p.gamma * p.gamma);
    let mut flags = Flags {
        distribution_dependent: p.gamma != 0.0,
        non_lipschitz: p.taming.unwrap_or(cubic),
        ..Flags::default()
    };
    sigma_constants(&mut k, &mut flags, p.sigma0);
    CoefficientSet::new(id, Arc::new(model), k, flags)
}

fn singular_toy(p: SingularToyParams, tau: f64, dim: usize) -> Result<CoefficientSet> {
    if dim != 1 {
        return Err(Error::InvalidParam(format!("{SINGULAR_TOY} is one-dimensional, got d = {dim}")));
    }
    if !kato_admissible(p.p, p.q, 1) {
        return Err(Error::InvalidParam(format!(
            "{SINGULAR_TOY}: (p, q) = ({}, {}) is not admissible in d = 1",
            p.p, p.q
        )));
    }
    if !(p.beta >= 0.0 && p.beta * p.p < 1.0) {
        return Err(Error::InvalidParam(format!(
            "{SINGULAR_TOY}: beta = {} must lie in [0, 1/p) = [0, {})",
            p.beta,
            1.0 / p.p
        )));
    }
    let (c, beta, a) = (p.c, p.beta, p.a);
    let model = FnModel::new(1)
        .with_b0(move |_, x, out| {
            let v = x[0];
            out[0] = if v == 0.0 || v.abs() > 1.0 {
                0.0
            } else {
                c * v.abs().powf(-beta) * v.signum()
            };
        })
        .with_b1(move |_, xi, _, out| out[0] = -a * xi.at_zero()[0])
        .with_constant_sigma(p.sigma0);
    let mut k = Constants::new(tau);
    k.k = a.abs();
    k.k1 = f64::INFINITY;
    k.alpha = 0.0;
    let mut flags = Flags {
        singular: true,
        ..Flags::default()
    };
    sigma_constants(&mut k, &mut flags, p.sigma0);
    let f0 = move |_t: f64, x: &[f64]| {
        let v = x[0].abs();
        if v == 0.0 || v > 1.0 {
            0.0
        } else {
            c.abs() * v.powf(-beta)
        }
    };
    Ok(
        CoefficientSet::new(SINGULAR_TOY, Arc::new(model), k, flags)?
            .with_profile(SingularityProfile::new(p.p, p.q, 1, f0)),
    )
}

impl ModelSpec {
    /// Same model with every default parameter written out.
    pub fn resolved(&self) -> Result<ModelSpec> {
        let params = match self.id.as_str() {
            LINEAR_MEMORY | CUBIC_MEMORY => {
                serde_json::to_value(parse::<LinearMemoryParams>(&self.id, &self.params)?)?
            }
            SINGULAR_TOY => serde_json::to_value(parse::<SingularToyParams>(&self.id, &self.params)?)?,
            ZERO => empty_object(),
            other => return Err(Error::UnknownModel(other.to_string())),
        };
        Ok(ModelSpec {
            id: self.id.clone(),
            params,
        })
    }
}

/// Build a catalogued model on the given grid.
pub fn builtin_model(spec: &ModelSpec, grid: &GridSpec, tau: f64, dim: usize) -> Result<CoefficientSet> {
    if dim == 0 {
        return Err(Error::InvalidParam("dimension d must be >= 1".into()));
    }
    match spec.id.as_str() {
        LINEAR_MEMORY => memory_model(LINEAR_MEMORY, parse(&spec.id, &spec.params)?, grid, tau, dim, false),
        CUBIC_MEMORY => memory_model(CUBIC_MEMORY, parse(&spec.id, &spec.params)?, grid, tau, dim, true),
        SINGULAR_TOY => singular_toy(parse(&spec.id, &spec.params)?, tau, dim),
        ZERO => {
            #[derive(Deserialize)]
            #[serde(deny_unknown_fields)]
            struct NoParams {}
            let _: NoParams = parse(&spec.id, &spec.params)?;
            CoefficientSet::zero(dim, tau)
        }
        other => Err(Error::UnknownModel(other.to_string())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measure::EmpiricalMeasure;
    use crate::segment::WeightedSegment;
    use serde_json::json;

    fn grid() -> GridSpec {
        GridSpec::new(0.25, 1.0, 2.0).unwrap()
    }

    fn point(x: f64) -> WeightedSegment {
        WeightedSegment::point_path(&[x], 1.0, 0.25, 4).unwrap()
    }

    #[test]
    fn linear_model_closed_form() {
        let spec = ModelSpec::new(LINEAR_MEMORY, json!({"a": 1.0, "beta": 0.0, "gamma": 0.0, "sigma0": 0.7}));
        let c = builtin_model(&spec, &grid(), 1.0, 1).unwrap();
        let e = c.evaluate(0.0, &point(1.0), &EmpiricalMeasure::dirac(point(0.0))).unwrap();
        assert_eq!(e.b, vec![-1.0]);
        assert_eq!(e.sigma, vec![0.7]);
        let e = c.evaluate(0.0, &point(2.0), &EmpiricalMeasure::dirac(point(0.0))).unwrap();
        assert_eq!(e.b, vec![-2.0]);
        assert_eq!(c.constants.k1, 0.0);
        assert!(!c.flags.distribution_dependent);
    }

    #[test]
    fn memory_sum_is_left_endpoint_with_tail() {
        let (beta, lambda) = (0.5, 3.0);
        let spec = ModelSpec::new(LINEAR_MEMORY, json!({"a": 0.0, "beta": beta, "lambda": lambda, "sigma0": 0.0}));
        let g = grid();
        let c = builtin_model(&spec, &g, 1.0, 1).unwrap();
        // xi(r) = r at nodes r = -1, -0.75, ..., 0
        let xi = WeightedSegment::from_fn(1.0, &g, 1, |r| vec![r]).unwrap();
        let mut expected = 0.0;
        for lag in 1..=4 {
            let r = -(lag as f64) * 0.25;
            expected += 0.25 * (lambda * r).exp() * r;
        }
        expected += (-lambda).exp() * -1.0 / lambda;
        let b = c.evaluate(0.0, &xi, &EmpiricalMeasure::dirac(point(0.0))).unwrap().b[0];
        assert!((b - beta * expected).abs() < 1e-15);
        // a constant path integrates exactly against the full kernel mass only in the limit
        let one = c.evaluate(0.0, &point(1.0), &EmpiricalMeasure::dirac(point(0.0))).unwrap().b[0];
        assert!((one - beta / lambda).abs() < 0.25);
    }

    #[test]
    fn mean_field_term_and_constants() {
        let spec = ModelSpec::new(LINEAR_MEMORY, json!({"a": 1.0, "gamma": 0.3, "sigma0": 0.2}));
        let c = builtin_model(&spec, &grid(), 1.0, 1).unwrap();
        let mu = EmpiricalMeasure::new(vec![point(1.0), point(3.0)]).unwrap();
        let b = c.evaluate(0.0, &point(0.0), &mu).unwrap().b[0];
        assert_eq!(b, 0.3 * 2.0);
        assert_eq!(c.constants.k1, 0.15);
        assert_eq!(c.constants.k2, 0.15);
        assert!(c.flags.distribution_dependent && c.flags.sigma_invertible);
    }

    #[test]
    fn cubic_is_odd_and_tamed_by_default() {
        let spec = ModelSpec::new(CUBIC_MEMORY, json!({"a": 0.5, "beta": 0.2, "lambda": 3.0}));
        let c = builtin_model(&spec, &grid(), 1.0, 1).unwrap();
        let zero = EmpiricalMeasure::dirac(point(0.0));
        assert_eq!(c.evaluate(0.0, &point(0.0), &zero).unwrap().b, vec![0.0]);
        assert!(c.flags.non_lipschitz);
        let off = ModelSpec::new(CUBIC_MEMORY, json!({"taming": false}));
        assert!(!builtin_model(&off, &grid(), 1.0, 1).unwrap().flags.non_lipschitz);
    }

    #[test]
    fn rejects_bad_models() {
        let g = grid();
        let slow = ModelSpec::new(LINEAR_MEMORY, json!({"beta": 1.0, "lambda": 0.5}));
        assert!(matches!(builtin_model(&slow, &g, 1.0, 1), Err(Error::InvalidParam(_))));
        let unknown = ModelSpec::new("nope", json!({}));
        assert!(matches!(builtin_model(&unknown, &g, 1.0, 1), Err(Error::UnknownModel(_))));
        let typo = ModelSpec::new(LINEAR_MEMORY, json!({"alpha": 1.0}));
        assert!(matches!(builtin_model(&typo, &g, 1.0, 1), Err(Error::Config(_))));
        let heavy = ModelSpec::new(SINGULAR_TOY, json!({"beta": 0.4, "p": 4.0}));
        assert!(matches!(builtin_model(&heavy, &g, 1.0, 1), Err(Error::InvalidParam(_))));
    }

    #[test]
    fn resolved_spec_writes_defaults() {
        let spec = ModelSpec::new(LINEAR_MEMORY, json!({"a": 2.0}));
        let r = spec.resolved().unwrap();
        assert_eq!(r.params["a"], 2.0);
        assert_eq!(r.params["lambda"], 2.0);
        let g = grid();
        let a = builtin_model(&spec, &g, 1.0, 1).unwrap();
        let b = builtin_model(&r, &g, 1.0, 1).unwrap();
        assert_eq!((a.constants.k1, a.constants.k2, a.constants.k), (b.constants.k1, b.constants.k2, b.constants.k));
    }

    #[test]
    fn singular_toy_profile() {
        let spec = ModelSpec::new(SINGULAR_TOY, json!({"beta": 0.2}));
        let c = builtin_model(&spec, &grid(), 1.0, 1).unwrap();
        let zero = EmpiricalMeasure::dirac(point(0.0));
        assert_eq!(c.evaluate(0.0, &point(0.0), &zero).unwrap().b, vec![0.0]);
        let b = c.evaluate(0.0, &point(0.5), &zero).unwrap().b[0];
        assert!((b - (0.5f64.powf(-0.2) - 0.5)).abs() < 1e-15);
        assert!(c.flags.singular);
        assert!(c.profile.is_some());
    }
}
