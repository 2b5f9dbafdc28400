//! Drift and diffusion coefficients `b = b0(t, xi(0)) + b1(t, xi, mu)` and
//! `sigma(t, xi)`, with their declared structural constants.

mod assumptions;
mod builtin;
mod singular;

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measure::{EmpiricalMeasure, MeasureView};
use crate::segment::{SegmentView, WeightedSegment};

pub use assumptions::{
    check_assumption, AssumptionId, AssumptionReport, RandomSampler, Sample, Sampler,
    SamplerConfig,
};
pub use builtin::{builtin_model, ModelSpec, LINEAR_MEMORY, CUBIC_MEMORY, SINGULAR_TOY, ZERO};
pub use builtin::{LinearMemoryParams, SingularToyParams};
pub use singular::{kato_admissible, lpq_norm, LpqGrid, LpqReport, SingularityProfile};

/// A coefficient model. Implementations must be pure: equal inputs give
/// bit-identical outputs.
pub trait Coefficients: Send + Sync {
    fn dim(&self) -> usize;

    /// `b0(t, x)` written into `out`.
    fn drift_b0(&self, t: f64, x: &[f64], out: &mut [f64]);

    /// `b1(t, xi, mu)` written into `out`.
    fn drift_b1(&self, t: f64, xi: &SegmentView<'_>, mu: &MeasureView<'_>, out: &mut [f64]);

    /// `sigma(t, xi)`, row-major `d x d`.
    fn sigma(&self, t: f64, xi: &SegmentView<'_>, out: &mut [f64]);
}

type B0Fn = dyn Fn(f64, &[f64], &mut [f64]) + Send + Sync;
type B1Fn = dyn Fn(f64, &SegmentView<'_>, &MeasureView<'_>, &mut [f64]) + Send + Sync;
type SigmaFn = dyn Fn(f64, &SegmentView<'_>, &mut [f64]) + Send + Sync;

/// Coefficients assembled from closures; unset parts are zero.
#[derive(Clone)]
pub struct FnModel {
    dim: usize,
    b0: Option<Arc<B0Fn>>,
    b1: Option<Arc<B1Fn>>,
    sigma: Option<Arc<SigmaFn>>,
}

impl FnModel {
    pub fn new(dim: usize) -> Self {
        FnModel {
            dim,
            b0: None,
            b1: None,
            sigma: None,
        }
    }

    pub fn with_b0(mut self, f: impl Fn(f64, &[f64], &mut [f64]) + Send + Sync + 'static) -> Self {
        self.b0 = Some(Arc::new(f));
        self
    }

    pub fn with_b1(
        mut self,
        f: impl Fn(f64, &SegmentView<'_>, &MeasureView<'_>, &mut [f64]) + Send + Sync + 'static,
    ) -> Self {
        self.b1 = Some(Arc::new(f));
        self
    }

    pub fn with_sigma(
        mut self,
        f: impl Fn(f64, &SegmentView<'_>, &mut [f64]) + Send + Sync + 'static,
    ) -> Self {
        self.sigma = Some(Arc::new(f));
        self
    }

    /// Constant `sigma = s * I`.
    pub fn with_constant_sigma(self, s: f64) -> Self {
        let d = self.dim;
        self.with_sigma(move |_, _, out| {
            out.iter_mut().for_each(|v| *v = 0.0);
            for i in 0..d {
                out[i * d + i] = s;
            }
        })
    }
}

impl Coefficients for FnModel {
    fn dim(&self) -> usize {
        self.dim
    }

    fn drift_b0(&self, t: f64, x: &[f64], out: &mut [f64]) {
        match &self.b0 {
            Some(f) => f(t, x, out),
            None => out.iter_mut().for_each(|v| *v = 0.0),
        }
    }

    fn drift_b1(&self, t: f64, xi: &SegmentView<'_>, mu: &MeasureView<'_>, out: &mut [f64]) {
        match &self.b1 {
            Some(f) => f(t, xi, mu, out),
            None => out.iter_mut().for_each(|v| *v = 0.0),
        }
    }

    fn sigma(&self, t: f64, xi: &SegmentView<'_>, out: &mut [f64]) {
        match &self.sigma {
            Some(f) => f(t, xi, out),
            None => out.iter_mut().for_each(|v| *v = 0.0),
        }
    }
}

/// The function `H` bounding the measure dependence of `b1`.
#[derive(Clone)]
pub enum HFunction {
    Constant(f64),
    Custom(Arc<dyn Fn(f64) -> f64 + Send + Sync>),
}

impl HFunction {
    pub fn eval(&self, t: f64) -> f64 {
        match self {
            HFunction::Constant(c) => *c,
            HFunction::Custom(f) => f(t),
        }
    }
}

impl fmt::Debug for HFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            HFunction::Constant(c) => write!(f, "Constant({c})"),
            HFunction::Custom(_) => f.write_str("Custom(..)"),
        }
    }
}

impl Serialize for HFunction {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            HFunction::Constant(c) => s.serialize_f64(*c),
            HFunction::Custom(_) => s.serialize_str("custom"),
        }
    }
}

/// Declared structural constants of a model.
#[derive(Clone, Debug, Serialize)]
pub struct Constants {
    /// Lipschitz-type constant of `b1`.
    pub k: f64,
    /// Segment constant of the monotone condition.
    pub k1: f64,
    /// Measure constant of the monotone condition.
    pub k2: f64,
    pub alpha: f64,
    pub tau: f64,
    #[serde(rename = "H")]
    pub h_fn: HFunction,
    /// Moment order of `||mu||_k` in the growth bound.
    pub moment_k: f64,
    /// Bound on `||a|| + ||a^{-1}||` for `a = sigma sigma^T`.
    pub k_a: f64,
    /// Bound on `||sigma^{-1}||`, when sigma is invertible.
    pub sigma_inv: Option<f64>,
}

impl Constants {
    pub fn new(tau: f64) -> Self {
        Constants {
            k: 0.0,
            k1: 0.0,
            k2: 0.0,
            alpha: 1.0,
            tau,
            h_fn: HFunction::Constant(0.0),
            moment_k: 2.0,
            k_a: f64::INFINITY,
            sigma_inv: None,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::InvalidParam(format!("alpha = {} not in [0, 1]", self.alpha)));
        }
        if !(self.tau > 0.0) {
            return Err(Error::InvalidParam(format!("tau = {} must be > 0", self.tau)));
        }
        for (name, v) in [("K", self.k), ("K1", self.k1), ("K2", self.k2)] {
            if !(v >= 0.0) {
                return Err(Error::InvalidParam(format!("{name} = {v} must be >= 0")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Flags {
    pub distribution_dependent: bool,
    pub sigma_invertible: bool,
    pub path_dependent_sigma: bool,
    /// Drift grows superlinearly; the engine tames it by default.
    pub non_lipschitz: bool,
    /// `b0` is unbounded; the engine caps it.
    pub singular: bool,
}

/// Value of the coefficients at one input.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Evaluation {
    pub b: Vec<f64>,
    /// Row-major `d x d`.
    pub sigma: Vec<f64>,
}

/// A model together with its constants and metadata.
#[derive(Clone)]
pub struct CoefficientSet {
    name: String,
    model: Arc<dyn Coefficients>,
    pub constants: Constants,
    pub flags: Flags,
    /// Declared `|b0| <= f0` profile.
    pub profile: Option<SingularityProfile>,
    b1_cutoff: Option<f64>,
}

impl fmt::Debug for CoefficientSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CoefficientSet")
            .field("name", &self.name)
            .field("dim", &self.dim())
            .field("constants", &self.constants)
            .field("flags", &self.flags)
            .field("b1_cutoff", &self.b1_cutoff)
            .finish()
    }
}

/// Cutoff `psi` with `psi = 1` on `[0, 1]`, `0` on `[2, inf)`, and a
/// quintic smoothstep in between.
pub fn psi(u: f64) -> f64 {
    if u <= 1.0 {
        1.0
    } else if u >= 2.0 {
        0.0
    } else {
        let s = u - 1.0;
        1.0 - s * s * s * (s * (6.0 * s - 15.0) + 10.0)
    }
}

impl CoefficientSet {
    pub fn new(
        name: impl Into<String>,
        model: Arc<dyn Coefficients>,
        constants: Constants,
        flags: Flags,
    ) -> Result<Self> {
        constants.validate()?;
        if model.dim() == 0 {
            return Err(Error::InvalidParam("model dimension must be >= 1".into()));
        }
        Ok(CoefficientSet {
            name: name.into(),
            model,
            constants,
            flags,
            profile: None,
            b1_cutoff: None,
        })
    }

    /// `b = 0`, `sigma = 0`.
    pub fn zero(dim: usize, tau: f64) -> Result<Self> {
        CoefficientSet::new(
            "zero",
            Arc::new(FnModel::new(dim)),
            Constants::new(tau),
            Flags::default(),
        )
    }

    pub fn with_profile(mut self, profile: SingularityProfile) -> Self {
        self.profile = Some(profile);
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim(&self) -> usize {
        self.model.dim()
    }

    pub fn tau(&self) -> f64 {
        self.constants.tau
    }

    pub fn b1_cutoff(&self) -> Option<f64> {
        self.b1_cutoff
    }

    /// Replace `b1` by `b1 * psi(||xi||_tau / n)`.
    pub fn truncate_b1(&self, n: f64) -> Result<CoefficientSet> {
        if !(n > 0.0) {
            return Err(Error::InvalidParam(format!("cutoff level n = {n} must be > 0")));
        }
        let mut out = self.clone();
        out.b1_cutoff = Some(n);
        Ok(out)
    }

    #[inline]
    pub fn b0_into(&self, t: f64, x: &[f64], out: &mut [f64]) {
        self.model.drift_b0(t, x, out);
    }

    /// `b1` including the cutoff factor, if any.
    #[inline]
    pub fn b1_into(&self, t: f64, xi: &SegmentView<'_>, mu: &MeasureView<'_>, out: &mut [f64]) {
        let factor = match self.b1_cutoff {
            Some(n) => psi(xi.tau_norm() / n),
            None => 1.0,
        };
        if factor == 0.0 {
            out.iter_mut().for_each(|v| *v = 0.0);
            return;
        }
        self.model.drift_b1(t, xi, mu, out);
        if factor != 1.0 {
            out.iter_mut().for_each(|v| *v *= factor);
        }
    }

    /// `b = b0(t, xi(0)) + b1(t, xi, mu)`; `scratch` has length `d`.
    #[inline]
    pub fn drift_into(
        &self,
        t: f64,
        xi: &SegmentView<'_>,
        mu: &MeasureView<'_>,
        out: &mut [f64],
        scratch: &mut [f64],
    ) {
        self.b0_into(t, xi.at_zero(), out);
        self.b1_into(t, xi, mu, scratch);
        for (o, s) in out.iter_mut().zip(scratch.iter()) {
            *o += s;
        }
    }

    #[inline]
    pub fn sigma_into(&self, t: f64, xi: &SegmentView<'_>, out: &mut [f64]) {
        self.model.sigma(t, xi, out);
    }

    fn check_inputs(&self, xi: &SegmentView<'_>, mu: &MeasureView<'_>) -> Result<()> {
        let d = self.dim();
        if xi.dim() != d || mu.dim() != d {
            return Err(Error::Shape(format!(
                "model dimension {d}, segment {}, measure {}",
                xi.dim(),
                mu.dim()
            )));
        }
        if !mu.is_empty() {
            xi.check_compatible(&mu.atom(0))?;
        }
        if xi.tau() != self.tau() {
            return Err(Error::GridMismatch(format!(
                "segment tau {} differs from model tau {}",
                xi.tau(),
                self.tau()
            )));
        }
        Ok(())
    }

    /// `b(t, xi, mu)` and `sigma(t, xi)`, checked for shape and finiteness.
    pub fn evaluate(&self, t: f64, xi: &WeightedSegment, mu: &EmpiricalMeasure) -> Result<Evaluation> {
        self.evaluate_view(t, &xi.view(), &mu.view())
    }

    pub fn evaluate_view(
        &self,
        t: f64,
        xi: &SegmentView<'_>,
        mu: &MeasureView<'_>,
    ) -> Result<Evaluation> {
        self.check_inputs(xi, mu)?;
        let d = self.dim();
        let mut b = vec![0.0; d];
        let mut scratch = vec![0.0; d];
        let mut sigma = vec![0.0; d * d];
        self.drift_into(t, xi, mu, &mut b, &mut scratch);
        self.sigma_into(t, xi, &mut sigma);
        if b.iter().chain(&sigma).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!(
                "{}: b = {b:?}, sigma = {sigma:?} at t = {t}, xi(0) = {:?}, mean_mu(0) = {:?}",
                self.name,
                xi.at_zero(),
                mu.mean_at_zero()
            )));
        }
        Ok(Evaluation { b, sigma })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::GridSpec;

    #[test]
    fn psi_plateau_cutoff_and_midpoint() {
        assert_eq!(psi(0.5), 1.0);
        assert_eq!(psi(1.0), 1.0);
        assert_eq!(psi(2.0), 0.0);
        assert_eq!(psi(3.0), 0.0);
        assert_eq!(psi(1.5), 0.5);
        let mut prev = 1.0;
        for i in 0..=100 {
            let v = psi(1.0 + i as f64 / 100.0);
            assert!(v <= prev && (0.0..=1.0).contains(&v));
            prev = v;
        }
    }

    fn unit_b1() -> CoefficientSet {
        let model = FnModel::new(1).with_b1(|_, xi, _, out| out[0] = 3.0 + xi.at_zero()[0]);
        CoefficientSet::new("probe", Arc::new(model), Constants::new(1.0), Flags::default())
            .unwrap()
    }

    #[test]
    fn truncation_is_exact_outside_the_transition() {
        let grid = GridSpec::new(0.5, 1.0, 1.0).unwrap();
        let base = unit_b1();
        let n = 2.0;
        let cut = base.truncate_b1(n).unwrap();
        let mu = EmpiricalMeasure::dirac(WeightedSegment::zero(1, 1.0, 0.5, 2).unwrap());
        for (level, factor) in [(1.0, Some(1.0)), (2.0, Some(1.0)), (3.0, Some(0.5)), (4.0, Some(0.0)), (6.0, Some(0.0))] {
            let xi = WeightedSegment::point_path(&[level], 1.0, grid.h(), grid.hist_steps()).unwrap();
            let full = base.evaluate(0.0, &xi, &mu).unwrap().b[0];
            let got = cut.evaluate(0.0, &xi, &mu).unwrap().b[0];
            assert_eq!(got, factor.unwrap() * full, "norm {level}");
        }
        assert!(base.truncate_b1(0.0).is_err());
    }

    #[test]
    fn zero_model_and_shape_errors() {
        let z = CoefficientSet::zero(2, 1.0).unwrap();
        let xi = WeightedSegment::point_path(&[1.0, -4.0], 1.0, 0.5, 2).unwrap();
        let mu = EmpiricalMeasure::dirac(xi.clone());
        let e = z.evaluate(0.3, &xi, &mu).unwrap();
        assert_eq!(e.b, vec![0.0; 2]);
        assert_eq!(e.sigma, vec![0.0; 4]);
        let bad = WeightedSegment::point_path(&[1.0], 1.0, 0.5, 2).unwrap();
        assert!(matches!(
            z.evaluate(0.0, &bad, &EmpiricalMeasure::dirac(bad.clone())),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn non_finite_output_is_reported() {
        let model = FnModel::new(1).with_b0(|_, x, out| out[0] = 1.0 / x[0]);
        let c = CoefficientSet::new("recip", Arc::new(model), Constants::new(1.0), Flags::default())
            .unwrap();
        let xi = WeightedSegment::zero(1, 1.0, 0.5, 2).unwrap();
        let mu = EmpiricalMeasure::dirac(xi.clone());
        let err = c.evaluate(0.0, &xi, &mu).unwrap_err();
        assert!(matches!(err, Error::NonFinite(ref s) if s.contains("xi(0) = [0.0]")));
    }

    #[test]
    fn invalid_constants_rejected() {
        let mut k = Constants::new(1.0);
        k.alpha = 1.5;
        assert!(CoefficientSet::new("x", Arc::new(FnModel::new(1)), k, Flags::default()).is_err());
    }
}
