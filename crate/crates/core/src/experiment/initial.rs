use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::engine::point_initials;
use crate::error::{Error, Result};
use crate::grid::GridSpec;
use crate::noise::{NoisePlan, Phase};
use crate::segment::WeightedSegment;

/// Initial law of the particles. Every particle starts from a constant
/// history `phi^x`.
///
/// A vector of length 1 is broadcast to all `d` coordinates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialLaw {
    /// All particles at `x`.
    Point { x: Vec<f64> },
    /// Independent `N(mean, std^2 I)` per particle.
    Gaussian { mean: Vec<f64>, std: f64 },
    /// Particle `i` at `x[i mod len]`.
    Points { x: Vec<Vec<f64>> },
}

impl Default for InitialLaw {
    fn default() -> Self {
        InitialLaw::Point { x: vec![1.0] }
    }
}

fn broadcast(v: &[f64], d: usize, what: &str) -> Result<Vec<f64>> {
    let out = match v.len() {
        1 => vec![v[0]; d],
        n if n == d => v.to_vec(),
        n => return Err(Error::Config(format!("initial.{what} has {n} entries, d = {d}"))),
    };
    if out.iter().any(|x| !x.is_finite()) {
        return Err(Error::Config(format!("initial.{what} must be finite")));
    }
    Ok(out)
}

impl InitialLaw {
    /// Same law with vectors expanded to length `d`.
    pub fn resolved(&self, d: usize) -> Result<InitialLaw> {
        Ok(match self {
            InitialLaw::Point { x } => InitialLaw::Point { x: broadcast(x, d, "x")? },
            InitialLaw::Gaussian { mean, std } => {
                if !(*std >= 0.0 && std.is_finite()) {
                    return Err(Error::Config(format!("initial.std = {std} must be finite and >= 0")));
                }
                InitialLaw::Gaussian {
                    mean: broadcast(mean, d, "mean")?,
                    std: *std,
                }
            }
            InitialLaw::Points { x } => {
                if x.is_empty() {
                    return Err(Error::Config("initial.x lists no points".into()));
                }
                InitialLaw::Points {
                    x: x.iter().map(|p| broadcast(p, d, "x")).collect::<Result<_>>()?,
                }
            }
        })
    }

    /// Mean of the first coordinate under the law itself (not the sample).
    pub fn mean0(&self) -> f64 {
        match self {
            InitialLaw::Point { x } => x[0],
            InitialLaw::Gaussian { mean, .. } => mean[0],
            InitialLaw::Points { x } => x.iter().map(|p| p[0]).sum::<f64>() / x.len() as f64,
        }
    }

    /// `m` initial segments; Gaussian draws use stream `(i, phase)`.
    pub fn sample(
        &self,
        m: usize,
        d: usize,
        tau: f64,
        grid: &GridSpec,
        noise: &NoisePlan,
        phase: Phase,
    ) -> Result<Vec<WeightedSegment>> {
        let law = self.resolved(d)?;
        let points: Vec<Vec<f64>> = match &law {
            InitialLaw::Point { x } => vec![x.clone(); m],
            InitialLaw::Points { x } => (0..m).map(|i| x[i % x.len()].clone()).collect(),
            InitialLaw::Gaussian { mean, std } => (0..m)
                .map(|i| {
                    let mut rng = noise.stream(i, phase);
                    mean.iter()
                        .map(|mu| {
                            let z: f64 = StandardNormal.sample(&mut rng);
                            mu + std * z
                        })
                        .collect()
                })
                .collect(),
        };
        point_initials(&points, tau, grid)
    }
}
