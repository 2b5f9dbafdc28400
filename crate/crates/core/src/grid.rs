//! Uniform time grids for the history window and the simulation horizon.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative slack when deciding whether a time lies on the grid.
const GRID_SLACK: f64 = 1e-9;

/// A uniform grid: `hist_steps` nodes of history before time 0 and
/// `sim_steps` steps after it, all spaced `h` apart.
///
/// All time arithmetic goes through integer node indices, so two grids
/// built from the same `(h, T_hist, T)` are identical.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(into = "GridRepr", try_from = "GridRepr")]
pub struct GridSpec {
    h: f64,
    hist_steps: usize,
    sim_steps: usize,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GridRepr {
    h: f64,
    #[serde(rename = "T_hist")]
    t_hist: f64,
    #[serde(rename = "T")]
    t: f64,
}

impl From<GridSpec> for GridRepr {
    fn from(g: GridSpec) -> Self {
        GridRepr {
            h: g.h,
            t_hist: g.t_hist(),
            t: g.horizon(),
        }
    }
}

impl TryFrom<GridRepr> for GridSpec {
    type Error = Error;
    fn try_from(r: GridRepr) -> Result<Self> {
        GridSpec::new(r.h, r.t_hist, r.t)
    }
}

fn steps_of(span: f64, h: f64, what: &str) -> Result<usize> {
    let n = (span / h).round();
    if !(n.is_finite() && n >= 0.0) || (n * h - span).abs() > GRID_SLACK * span.abs().max(h) {
        return Err(Error::GridMismatch(format!(
            "{what} = {span} is not an integer multiple of h = {h}"
        )));
    }
    Ok(n as usize)
}

impl GridSpec {
    pub fn new(h: f64, t_hist: f64, horizon: f64) -> Result<Self> {
        if !(h > 0.0 && h.is_finite()) {
            return Err(Error::InvalidParam(format!("step h must be > 0, got {h}")));
        }
        if !(t_hist > 0.0) {
            return Err(Error::InvalidParam(format!(
                "history horizon must be > 0, got {t_hist}"
            )));
        }
        if !(horizon >= 0.0) {
            return Err(Error::InvalidParam(format!(
                "simulation horizon must be >= 0, got {horizon}"
            )));
        }
        Ok(GridSpec {
            h,
            hist_steps: steps_of(t_hist, h, "T_hist")?,
            sim_steps: steps_of(horizon, h, "T")?,
        })
    }

    pub fn from_steps(h: f64, hist_steps: usize, sim_steps: usize) -> Result<Self> {
        if !(h > 0.0 && h.is_finite()) {
            return Err(Error::InvalidParam(format!("step h must be > 0, got {h}")));
        }
        if hist_steps == 0 {
            return Err(Error::InvalidParam("history needs at least one step".into()));
        }
        Ok(GridSpec {
            h,
            hist_steps,
            sim_steps,
        })
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn hist_steps(&self) -> usize {
        self.hist_steps
    }

    pub fn sim_steps(&self) -> usize {
        self.sim_steps
    }

    pub fn t_hist(&self) -> f64 {
        self.hist_steps as f64 * self.h
    }

    pub fn horizon(&self) -> f64 {
        self.sim_steps as f64 * self.h
    }

    /// Number of nodes in one segment, `T_hist/h + 1`.
    pub fn segment_len(&self) -> usize {
        self.hist_steps + 1
    }

    /// Number of nodes in a full trajectory, history included.
    pub fn total_nodes(&self) -> usize {
        self.hist_steps + self.sim_steps + 1
    }

    /// Simulation time of step `k` (k = 0 is time 0).
    pub fn time(&self, step: usize) -> f64 {
        step as f64 * self.h
    }

    /// Grid step index of a simulation time in `[0, T]`.
    pub fn step_of(&self, t: f64) -> Result<usize> {
        if !(t >= -GRID_SLACK * self.h) || t > self.horizon() + GRID_SLACK * self.h.max(t) {
            return Err(Error::OutOfRange {
                t,
                horizon: self.horizon(),
            });
        }
        steps_of(t.max(0.0), self.h, "t")
    }

    /// Number of history steps contained in a window of length `n_time`.
    pub fn window_steps(&self, n_time: f64) -> Result<usize> {
        if !(n_time > 0.0) {
            return Err(Error::GridMismatch(format!("window {n_time} must be > 0")));
        }
        let k = steps_of(n_time, self.h, "window")?;
        if k > self.hist_steps {
            return Err(Error::GridMismatch(format!(
                "window {n_time} exceeds T_hist = {}",
                self.t_hist()
            )));
        }
        Ok(k)
    }

    /// Grid with every `stride`-th node; spans must stay grid multiples.
    pub fn coarsen(&self, stride: usize) -> Result<GridSpec> {
        if stride == 0 || self.hist_steps % stride != 0 || self.sim_steps % stride != 0 {
            return Err(Error::GridMismatch(format!(
                "stride {stride} does not divide {} history and {} simulation steps",
                self.hist_steps, self.sim_steps
            )));
        }
        Ok(GridSpec {
            h: self.h * stride as f64,
            hist_steps: self.hist_steps / stride,
            sim_steps: self.sim_steps / stride,
        })
    }

    pub fn same_shape(&self, other: &GridSpec) -> bool {
        self.h == other.h
            && self.hist_steps == other.hist_steps
            && self.sim_steps == other.sim_steps
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counts_steps_exactly() {
        let g = GridSpec::new(0.01, 2.0, 5.0).unwrap();
        assert_eq!(g.hist_steps(), 200);
        assert_eq!(g.sim_steps(), 500);
        assert_eq!(g.segment_len(), 201);
        assert_eq!(g.total_nodes(), 701);
        assert_eq!(g.step_of(0.5).unwrap(), 50);
    }

    #[test]
    fn rejects_off_grid() {
        assert!(GridSpec::new(0.3, 1.0, 3.0).is_err());
        let g = GridSpec::new(0.5, 1.0, 3.0).unwrap();
        assert!(matches!(g.step_of(0.25), Err(Error::GridMismatch(_))));
        assert!(matches!(g.step_of(3.5), Err(Error::OutOfRange { .. })));
        assert!(g.window_steps(1.5).is_err());
    }

    #[test]
    fn json_uses_time_fields() {
        let g = GridSpec::new(0.25, 1.0, 2.0).unwrap();
        let s = serde_json::to_string(&g).unwrap();
        assert_eq!(s, r#"{"h":0.25,"T_hist":1.0,"T":2.0}"#);
        let back: GridSpec = serde_json::from_str(&s).unwrap();
        assert_eq!(back, g);
    }
}
