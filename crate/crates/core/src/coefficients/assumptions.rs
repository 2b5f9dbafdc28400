//! Sampled falsification of the structural assumptions on the coefficients.
//!
//! Each check maximizes a defect functional over random inputs; a maximum
//! `<= 0` means no counterexample was found.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::CoefficientSet;
use crate::error::{Error, Result};
use crate::grid::GridSpec;
use crate::linalg;
use crate::measure::{wasserstein, EmpiricalMeasure};
use crate::noise::{NoisePlan, Phase};
use crate::segment::WeightedSegment;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AssumptionId {
    /// Ellipticity and continuity of `a = sigma sigma^T`.
    A1,
    /// `|b0| <= f0` for the declared singularity profile.
    #[serde(rename = "A2-profile")]
    A2Profile,
    /// Lipschitz and growth bounds on `b1`.
    #[serde(rename = "A3'", alias = "A3′")]
    A3Prime,
    /// Lipschitz bound on `b1` in segment and measure.
    H2,
    /// Monotone condition.
    #[serde(rename = "H'", alias = "H′")]
    HPrime,
}

impl std::str::FromStr for AssumptionId {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        serde_json::from_value(serde_json::Value::String(s.to_string()))
            .map_err(|_| Error::Config(format!("unknown assumption id `{s}`")))
    }
}

/// One random input `(t, xi, eta, mu, nu)`.
#[derive(Clone, Debug)]
pub struct Sample {
    pub t: f64,
    pub xi: WeightedSegment,
    pub eta: WeightedSegment,
    pub mu: EmpiricalMeasure,
    pub nu: EmpiricalMeasure,
}

pub trait Sampler {
    /// `None` once the sampler has nothing left to offer.
    fn next_sample(&mut self) -> Option<Sample>;
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplerConfig {
    /// Atoms per sampled measure.
    pub atoms: usize,
    /// Segment amplitudes are log-uniform in `[scale_min, scale_max]`.
    pub scale_min: f64,
    pub scale_max: f64,
    /// Fraction of pairs where `eta` is a small perturbation of `xi`.
    pub local_fraction: f64,
    /// Stop after this many samples.
    pub limit: Option<usize>,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            atoms: 4,
            scale_min: 1e-2,
            scale_max: 10.0,
            local_fraction: 0.3,
            limit: None,
        }
    }
}

/// Random-walk segments on a model grid, drawn from a dedicated stream.
pub struct RandomSampler {
    grid: GridSpec,
    tau: f64,
    dim: usize,
    cfg: SamplerConfig,
    rng: rand_chacha::ChaCha8Rng,
    drawn: usize,
}

impl RandomSampler {
    pub fn new(grid: GridSpec, tau: f64, dim: usize, cfg: SamplerConfig, seed: u64) -> Result<Self> {
        if cfg.atoms == 0 || !(cfg.scale_min > 0.0 && cfg.scale_max >= cfg.scale_min) {
            return Err(Error::InvalidParam(format!("sampler config {cfg:?}")));
        }
        Ok(RandomSampler {
            grid,
            tau,
            dim,
            cfg,
            rng: NoisePlan::new(seed).stream(0, Phase::Sampler),
            drawn: 0,
        })
    }

    fn segment(&mut self) -> WeightedSegment {
        let (lo, hi) = (self.cfg.scale_min.ln(), self.cfg.scale_max.ln());
        let scale = self.rng.random_range(lo..=hi).exp();
        let n = self.grid.hist_steps() + 1;
        let step = self.grid.h().sqrt();
        let mut x: Vec<f64> = (0..self.dim).map(|_| self.normal()).collect();
        let mut values = Vec::with_capacity(n * self.dim);
        for _ in 0..n {
            values.extend(x.iter().map(|v| scale * v));
            for v in x.iter_mut() {
                *v += step * self.normal();
            }
        }
        WeightedSegment::from_flat(self.tau, self.grid.h(), self.dim, values)
            .expect("sampler shapes follow the grid")
    }

    fn perturb(&mut self, xi: &WeightedSegment) -> WeightedSegment {
        let eps = 10f64.powf(self.rng.random_range(-6.0..-1.0));
        let noise: Vec<f64> = (0..xi.values().len()).map(|_| eps * self.normal()).collect();
        let values = xi.values().iter().zip(noise).map(|(a, b)| a + b).collect();
        WeightedSegment::from_flat(self.tau, self.grid.h(), self.dim, values)
            .expect("sampler shapes follow the grid")
    }

    fn normal(&mut self) -> f64 {
        self.rng.sample(StandardNormal)
    }

    fn measure(&mut self) -> EmpiricalMeasure {
        let atoms = (0..self.cfg.atoms).map(|_| self.segment()).collect();
        EmpiricalMeasure::new(atoms).expect("sampler atoms share one grid")
    }
}

impl Sampler for RandomSampler {
    fn next_sample(&mut self) -> Option<Sample> {
        if self.cfg.limit.is_some_and(|l| self.drawn >= l) {
            return None;
        }
        self.drawn += 1;
        let t = self.rng.random_range(0.0..=self.grid.horizon().max(1.0));
        let xi = self.segment();
        let local = self.rng.random_range(0.0..1.0) < self.cfg.local_fraction;
        let eta = if local { self.perturb(&xi) } else { self.segment() };
        let mu = self.measure();
        let nu = self.measure();
        Some(Sample { t, xi, eta, mu, nu })
    }
}

/// Sup of `||a(x) - a(y)||` over sampled pairs with `|x - y| <= eps`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModulusRow {
    pub eps: f64,
    pub sup_diff: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AssumptionReport {
    pub id: AssumptionId,
    pub n_samples: usize,
    /// Maximum defect over the samples; `<= 0` is a pass.
    pub max_violation: f64,
    pub witness: serde_json::Value,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub modulus: Vec<ModulusRow>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kato_admissible: Option<bool>,
}

impl AssumptionReport {
    pub fn passed(&self) -> bool {
        self.max_violation <= 0.0 && self.kato_admissible != Some(false)
    }
}

struct Defect {
    value: f64,
    witness: serde_json::Value,
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn drift(c: &CoefficientSet, t: f64, xi: &WeightedSegment, mu: &EmpiricalMeasure) -> Vec<f64> {
    let d = c.dim();
    let (mut out, mut scratch) = (vec![0.0; d], vec![0.0; d]);
    c.drift_into(t, &xi.view(), &mu.view(), &mut out, &mut scratch);
    out
}

fn b1(c: &CoefficientSet, t: f64, xi: &WeightedSegment, mu: &EmpiricalMeasure) -> Vec<f64> {
    let mut out = vec![0.0; c.dim()];
    c.b1_into(t, &xi.view(), &mu.view(), &mut out);
    out
}

fn sigma(c: &CoefficientSet, t: f64, xi: &WeightedSegment) -> Vec<f64> {
    let d = c.dim();
    let mut out = vec![0.0; d * d];
    c.sigma_into(t, &xi.view(), &mut out);
    out
}

fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

fn window(s: &Sample) -> f64 {
    s.xi.t_hist()
}

fn h_prime(c: &CoefficientSet, i: usize, s: &Sample) -> Result<Defect> {
    let k = &c.constants;
    let db = sub(&drift(c, s.t, &s.xi, &s.mu), &drift(c, s.t, &s.eta, &s.nu));
    let d0 = sub(s.xi.at_zero(), s.eta.at_zero());
    let inner = dot(&db, &d0).max(0.0);
    let ds = linalg::frobenius_diff(&sigma(c, s.t, &s.xi), &sigma(c, s.t, &s.eta));
    let gap = s.xi.distance(&s.eta)?;
    let w2 = wasserstein(&s.mu, &s.nu, 2.0, window(s))?;
    let value = inner + ds * ds - k.k1 * gap * gap - k.k2 * w2 * w2;
    Ok(Defect {
        value,
        witness: json!({"index": i, "t": s.t, "xi_0": s.xi.at_zero(), "eta_0": s.eta.at_zero(),
            "gap_norm": gap, "w2": w2, "inner": inner, "sigma_diff": ds}),
    })
}

fn a_one(c: &CoefficientSet, i: usize, s: &Sample) -> Result<Defect> {
    let d = c.dim();
    let a = linalg::gram(&sigma(c, s.t, &s.xi), d);
    let (lo, hi) = linalg::sym_eigen_range(&a, d);
    if !(lo > 0.0) {
        return Err(Error::Singular(format!(
            "a = sigma sigma^T at t = {}, xi(0) = {:?} has smallest eigenvalue {lo}",
            s.t,
            s.xi.at_zero()
        )));
    }
    Ok(Defect {
        value: hi + 1.0 / lo - c.constants.k_a,
        witness: json!({"index": i, "t": s.t, "x": s.xi.at_zero(), "norm_a": hi, "norm_a_inv": 1.0 / lo}),
    })
}

fn a_two(c: &CoefficientSet, i: usize, s: &Sample) -> Result<Defect> {
    let profile = c.profile.as_ref().ok_or_else(|| {
        Error::InvalidParam(format!("model `{}` declares no singularity profile", c.name()))
    })?;
    let mut best = Defect {
        value: f64::NEG_INFINITY,
        witness: serde_json::Value::Null,
    };
    for x in [s.xi.at_zero(), s.eta.at_zero()] {
        let mut b0 = vec![0.0; c.dim()];
        c.b0_into(s.t, x, &mut b0);
        let v = norm(&b0) - profile.f0(s.t, x);
        if v > best.value {
            best = Defect {
                value: v,
                witness: json!({"index": i, "t": s.t, "x": x, "b0": b0}),
            };
        }
    }
    Ok(best)
}

fn a_three(c: &CoefficientSet, i: usize, s: &Sample) -> Result<Defect> {
    let k = &c.constants;
    let lip = norm(&sub(&b1(c, s.t, &s.xi, &s.mu), &b1(c, s.t, &s.eta, &s.mu))) - k.k * s.xi.distance(&s.eta)?;
    let xi0 = s.xi.constant_extension();
    let grow = norm(&sub(&b1(c, s.t, &s.xi, &s.mu), &b1(c, s.t, &xi0, &s.mu)))
        - k.k * (1.0 + s.xi.tau_norm().powf(k.alpha));
    Ok(Defect {
        value: lip.max(grow),
        witness: json!({"index": i, "t": s.t, "lipschitz_defect": lip, "growth_defect": grow,
            "xi_norm": s.xi.tau_norm()}),
    })
}

fn h_two(c: &CoefficientSet, i: usize, s: &Sample) -> Result<Defect> {
    let k = &c.constants;
    let diff = norm(&sub(&b1(c, s.t, &s.xi, &s.mu), &b1(c, s.t, &s.eta, &s.nu)));
    let gap = s.xi.distance(&s.eta)?;
    let w2 = wasserstein(&s.mu, &s.nu, 2.0, window(s))?;
    let lip = diff * diff - k.k * gap * gap - k.h_fn.eval(s.t) * w2 * w2;
    let xi0 = s.xi.constant_extension();
    let grow = norm(&sub(&b1(c, s.t, &s.xi, &s.mu), &b1(c, s.t, &xi0, &s.mu)))
        - k.k * (1.0 + s.xi.tau_norm().powf(k.alpha) + s.mu.moment_norm(k.moment_k)?);
    Ok(Defect {
        value: lip.max(grow),
        witness: json!({"index": i, "t": s.t, "lipschitz_defect": lip, "growth_defect": grow,
            "gap_norm": gap, "w2": w2}),
    })
}

fn modulus_table(c: &CoefficientSet, samples: &[Sample]) -> Vec<ModulusRow> {
    let d = c.dim();
    [1e-1, 1e-2, 1e-3]
        .into_iter()
        .map(|eps| {
            let sup = samples
                .par_iter()
                .map(|s| {
                    let x = s.xi.at_zero();
                    let dir = sub(s.eta.at_zero(), x);
                    let len = norm(&dir);
                    let y: Vec<f64> = if len > 0.0 {
                        x.iter().zip(&dir).map(|(a, u)| a + eps * u / len).collect()
                    } else {
                        x.iter().map(|a| a + eps / (d as f64).sqrt()).collect()
                    };
                    let (tau, h, n) = (s.xi.tau(), s.xi.h(), s.xi.hist_steps());
                    let px = WeightedSegment::point_path(x, tau, h, n).expect("valid shape");
                    let py = WeightedSegment::point_path(&y, tau, h, n).expect("valid shape");
                    let ax = linalg::gram(&sigma(c, s.t, &px), d);
                    let ay = linalg::gram(&sigma(c, s.t, &py), d);
                    linalg::frobenius_diff(&ax, &ay)
                })
                .collect::<Vec<_>>()
                .into_iter()
                .fold(0.0, f64::max);
            ModulusRow { eps, sup_diff: sup }
        })
        .collect()
}

/// Maximize the defect of assumption `id` over `n_pairs` samples.
///
/// Defects are evaluated in parallel and reduced in sample order, so the
/// report does not depend on the worker count.
pub fn check_assumption(
    coeffs: &CoefficientSet,
    id: AssumptionId,
    sampler: &mut dyn Sampler,
    n_pairs: usize,
) -> Result<AssumptionReport> {
    if n_pairs == 0 {
        return Err(Error::InvalidParam("n_pairs must be >= 1".into()));
    }
    let mut samples = Vec::with_capacity(n_pairs);
    for k in 0..n_pairs {
        match sampler.next_sample() {
            Some(s) => samples.push(s),
            None => return Err(Error::SamplerExhausted(k)),
        }
    }
    let f = match id {
        AssumptionId::HPrime => h_prime,
        AssumptionId::A1 => a_one,
        AssumptionId::A2Profile => a_two,
        AssumptionId::A3Prime => a_three,
        AssumptionId::H2 => h_two,
    };
    let defects: Vec<Result<Defect>> = samples
        .par_iter()
        .enumerate()
        .map(|(i, s)| f(coeffs, i, s))
        .collect();
    let mut best: Option<Defect> = None;
    for (i, d) in defects.into_iter().enumerate() {
        let d = d?;
        if !d.value.is_finite() && d.value != f64::NEG_INFINITY {
            return Err(Error::NonFinite(format!("defect of sample {i} is {}", d.value)));
        }
        if best.as_ref().is_none_or(|b| d.value > b.value) {
            best = Some(d);
        }
    }
    let best = best.expect("n_pairs >= 1");
    let mut report = AssumptionReport {
        id,
        n_samples: n_pairs,
        max_violation: best.value,
        witness: best.witness,
        note: None,
        modulus: Vec::new(),
        kato_admissible: None,
    };
    match id {
        AssumptionId::A1 => report.modulus = modulus_table(coeffs, &samples),
        AssumptionId::A2Profile => {
            report.kato_admissible = coeffs.profile.as_ref().map(|p| p.admissible());
        }
        AssumptionId::H2 => {
            report.note = Some(
                "measure term uses W_2 in place of the weighted variation distance".into(),
            )
        }
        _ => {}
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coefficients::{builtin_model, Constants, Flags, FnModel, ModelSpec};
    use serde_json::json;
    use std::sync::Arc;

    fn grid() -> GridSpec {
        GridSpec::new(0.1, 1.0, 1.0).unwrap()
    }

    fn sampler(seed: u64) -> RandomSampler {
        RandomSampler::new(grid(), 1.0, 1, SamplerConfig::default(), seed).unwrap()
    }

    fn model(id: &str, params: serde_json::Value) -> CoefficientSet {
        builtin_model(&ModelSpec::new(id, params), &grid(), 1.0, 1).unwrap()
    }

    #[test]
    fn monotone_builtins_pass_h_prime() {
        for (id, params) in [
            ("linear_memory_meanfield", json!({"a": 1.0, "beta": 0.5, "lambda": 3.0, "gamma": 0.3})),
            ("cubic_monotone_memory", json!({"a": 0.5, "beta": 0.4, "lambda": 2.5, "gamma": -0.2})),
        ] {
            let c = model(id, params);
            let r = check_assumption(&c, AssumptionId::HPrime, &mut sampler(1), 4000).unwrap();
            assert!(r.max_violation <= 0.0, "{id}: {r:?}");
        }
    }

    #[test]
    fn square_drift_violates_h_prime_with_witness() {
        let m = FnModel::new(1).with_b0(|_, x, out| out[0] = x[0] * x[0]);
        let c = CoefficientSet::new("square", Arc::new(m), Constants::new(1.0), Flags::default()).unwrap();
        let r = check_assumption(&c, AssumptionId::HPrime, &mut sampler(2), 200).unwrap();
        assert!(r.max_violation > 0.0);
        assert!(r.witness["xi_0"].is_array());
        assert!(!r.passed());
    }

    #[test]
    fn growth_and_lipschitz_bounds_hold_for_linear_model() {
        let c = model("linear_memory_meanfield", json!({"beta": 0.8, "lambda": 2.0, "gamma": 0.5}));
        for id in [AssumptionId::A3Prime, AssumptionId::H2] {
            let r = check_assumption(&c, id, &mut sampler(3), 2000).unwrap();
            assert!(r.max_violation <= 0.0, "{id:?}: {r:?}");
        }
        let r = check_assumption(&c, AssumptionId::H2, &mut sampler(3), 10).unwrap();
        assert!(r.note.unwrap().contains("W_2"));
    }

    #[test]
    fn ellipticity_and_modulus() {
        let c = model("linear_memory_meanfield", json!({"sigma0": 0.4}));
        let r = check_assumption(&c, AssumptionId::A1, &mut sampler(4), 100).unwrap();
        assert!(r.max_violation < 0.0);
        assert_eq!(r.modulus.len(), 3);
        assert!(r.modulus.iter().all(|m| m.sup_diff == 0.0));
        let degenerate = model("linear_memory_meanfield", json!({"sigma0": 0.0}));
        assert!(matches!(
            check_assumption(&degenerate, AssumptionId::A1, &mut sampler(4), 5),
            Err(Error::Singular(_))
        ));
    }

    #[test]
    fn singular_profile_check() {
        let c = model("singular_b0_toy", json!({"beta": 0.2}));
        let r = check_assumption(&c, AssumptionId::A2Profile, &mut sampler(5), 500).unwrap();
        assert!(r.max_violation <= 0.0);
        assert_eq!(r.kato_admissible, Some(true));
        let lin = model("linear_memory_meanfield", json!({}));
        assert!(check_assumption(&lin, AssumptionId::A2Profile, &mut sampler(5), 5).is_err());
    }

    #[test]
    fn exhaustion_and_determinism() {
        let cfg = SamplerConfig {
            limit: Some(3),
            ..SamplerConfig::default()
        };
        let mut s = RandomSampler::new(grid(), 1.0, 1, cfg, 9).unwrap();
        let c = model("linear_memory_meanfield", json!({}));
        assert!(matches!(
            check_assumption(&c, AssumptionId::HPrime, &mut s, 10),
            Err(Error::SamplerExhausted(3))
        ));
        let a = check_assumption(&c, AssumptionId::H2, &mut sampler(7), 300).unwrap();
        let b = check_assumption(&c, AssumptionId::H2, &mut sampler(7), 300).unwrap();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    }

    #[test]
    fn ids_parse_in_both_spellings() {
        assert_eq!("H'".parse::<AssumptionId>().unwrap(), AssumptionId::HPrime);
        assert_eq!("H′".parse::<AssumptionId>().unwrap(), AssumptionId::HPrime);
        assert_eq!("A2-profile".parse::<AssumptionId>().unwrap(), AssumptionId::A2Profile);
        assert!("B7".parse::<AssumptionId>().is_err());
    }
}
