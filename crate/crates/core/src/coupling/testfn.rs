//! Test functions of the current state `xi(0)` with known gradient bounds.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestFunctionKind {
    /// `exp(<c, x>)`.
    ExpLinear,
    /// `offset + tanh(<c, x>)`, `offset > 1`.
    BoundedSmooth,
    /// `value`.
    Constant,
    /// `offset + <c, x>`; not positive, so only for gradient checks.
    Linear,
}

/// `{"kind": ..., "params": {...}, "grad_sup": .., "grad_log_sup": ..}`.
///
/// `params.c` is a number (applied to every coordinate) or a vector of
/// length `d`. Declared suprema default to the exact values and may only be
/// raised.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TestFunction {
    pub kind: TestFunctionKind,
    #[serde(default = "empty")]
    pub params: serde_json::Value,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grad_sup: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grad_log_sup: Option<f64>,
}

fn empty() -> serde_json::Value {
    serde_json::Value::Object(Default::default())
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct Params {
    #[serde(default)]
    c: Option<serde_json::Value>,
    #[serde(default)]
    offset: Option<f64>,
    #[serde(default)]
    value: Option<f64>,
}

/// Parsed form, ready to evaluate.
#[derive(Clone, Debug, PartialEq)]
pub(crate) struct Compiled {
    kind: TestFunctionKind,
    c: Vec<f64>,
    offset: f64,
    pub grad_sup: f64,
    pub grad_log_sup: f64,
}

impl TestFunction {
    pub fn new(kind: TestFunctionKind, params: serde_json::Value) -> Self {
        TestFunction {
            kind,
            params,
            grad_sup: None,
            grad_log_sup: None,
        }
    }

    pub(crate) fn compile(&self, d: usize) -> Result<Compiled> {
        let p: Params = serde_json::from_value(self.params.clone())
            .map_err(|e| Error::Config(format!("test function params: {e}")))?;
        let c = match &p.c {
            None => vec![1.0; d],
            Some(serde_json::Value::Number(n)) => vec![n.as_f64().unwrap_or(f64::NAN); d],
            Some(v) => {
                let c: Vec<f64> = serde_json::from_value(v.clone())
                    .map_err(|e| Error::Config(format!("test function c: {e}")))?;
                if c.len() != d {
                    return Err(Error::Shape(format!("test function c has {} entries, d = {d}", c.len())));
                }
                c
            }
        };
        if c.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParam("test function c must be finite".into()));
        }
        let cn = c.iter().map(|v| v * v).sum::<f64>().sqrt();
        let (offset, grad, grad_log) = match self.kind {
            TestFunctionKind::ExpLinear => (0.0, f64::INFINITY, cn),
            TestFunctionKind::BoundedSmooth => {
                let o = p.offset.unwrap_or(2.0);
                if !(o > 1.0) {
                    return Err(Error::InvalidParam(format!("bounded_smooth offset {o} must exceed 1")));
                }
                (o, cn, cn / (o - 1.0))
            }
            TestFunctionKind::Constant => {
                let v = p.value.unwrap_or(1.0);
                if !v.is_finite() {
                    return Err(Error::InvalidParam("constant value must be finite".into()));
                }
                (v, 0.0, 0.0)
            }
            TestFunctionKind::Linear => (p.offset.unwrap_or(0.0), cn, f64::INFINITY),
        };
        let raise = |declared: Option<f64>, exact: f64, name: &str| -> Result<f64> {
            match declared {
                None => Ok(exact),
                Some(v) if v >= exact => Ok(v),
                Some(v) => Err(Error::InvalidParam(format!(
                    "declared {name} = {v} is below the exact value {exact}"
                ))),
            }
        };
        Ok(Compiled {
            kind: self.kind,
            c,
            offset,
            grad_sup: raise(self.grad_sup, grad, "grad_sup")?,
            grad_log_sup: raise(self.grad_log_sup, grad_log, "grad_log_sup")?,
        })
    }
}

impl Compiled {
    pub(crate) fn eval(&self, x: &[f64]) -> f64 {
        let lin = || self.c.iter().zip(x).map(|(c, v)| c * v).sum::<f64>();
        match self.kind {
            TestFunctionKind::ExpLinear => lin().exp(),
            TestFunctionKind::BoundedSmooth => self.offset + lin().tanh(),
            TestFunctionKind::Constant => self.offset,
            TestFunctionKind::Linear => self.offset + lin(),
        }
    }
}
