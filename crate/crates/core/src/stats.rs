//! Summary statistics with fixed summation order.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::noise::{NoisePlan, Phase};
use rand::Rng;

/// Mean and standard error of the mean.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    pub stderr: f64,
}

/// Mean computed as `x_0 + sum (x_i - x_0) / n`, so equal inputs return
/// their common value exactly.
pub fn shifted_mean(xs: &[f64]) -> f64 {
    let Some(&x0) = xs.first() else {
        return f64::NAN;
    };
    let s: f64 = xs.iter().map(|x| x - x0).sum();
    x0 + s / xs.len() as f64
}

pub fn estimate(xs: &[f64]) -> Estimate {
    let n = xs.len();
    let mean = shifted_mean(xs);
    if n < 2 {
        return Estimate { mean, stderr: 0.0 };
    }
    let ss: f64 = xs.iter().map(|x| (x - mean) * (x - mean)).sum();
    Estimate {
        mean,
        stderr: (ss / (n - 1) as f64 / n as f64).sqrt(),
    }
}

/// Self-normalized weighted mean and its delta-method standard error.
pub fn weighted_estimate(xs: &[f64], w: &[f64]) -> Estimate {
    let sw: f64 = w.iter().sum();
    if !(sw > 0.0) {
        return Estimate {
            mean: f64::NAN,
            stderr: f64::NAN,
        };
    }
    let x0 = xs[0];
    let mean = x0 + xs.iter().zip(w).map(|(x, wi)| wi * (x - x0)).sum::<f64>() / sw;
    let var: f64 = xs
        .iter()
        .zip(w)
        .map(|(x, wi)| (wi / sw) * (wi / sw) * (x - mean) * (x - mean))
        .sum();
    Estimate {
        mean,
        stderr: var.sqrt(),
    }
}

/// Effective sample size `(sum w)^2 / sum w^2`.
pub fn ess(w: &[f64]) -> f64 {
    let s: f64 = w.iter().sum();
    let s2: f64 = w.iter().map(|x| x * x).sum();
    if s2 > 0.0 {
        s * s / s2
    } else {
        0.0
    }
}

/// Normalized weights `exp(l_i - max l)`.
pub fn weights_from_logs(logs: &[f64]) -> Vec<f64> {
    let m = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    logs.iter().map(|l| (l - m).exp()).collect()
}

/// Least-squares fit `y = intercept + slope * x`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub slope_stderr: f64,
}

pub fn linear_fit(x: &[f64], y: &[f64]) -> Result<LinearFit> {
    let n = x.len();
    if n != y.len() {
        return Err(Error::Shape(format!("{n} abscissae, {} ordinates", y.len())));
    }
    if n < 2 {
        return Err(Error::Insufficient(format!("{n} points for a line fit")));
    }
    let mx = shifted_mean(x);
    let my = shifted_mean(y);
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    if !(sxx > 0.0) {
        return Err(Error::Insufficient("abscissae are all equal".into()));
    }
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let syy: f64 = y.iter().map(|b| (b - my) * (b - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let sse: f64 = x
        .iter()
        .zip(y)
        .map(|(a, b)| {
            let r = b - intercept - slope * a;
            r * r
        })
        .sum();
    let r_squared = if syy > 0.0 { 1.0 - sse / syy } else { 1.0 };
    let slope_stderr = if n > 2 {
        (sse / (n - 2) as f64 / sxx).sqrt()
    } else {
        0.0
    };
    Ok(LinearFit {
        slope,
        intercept,
        r_squared,
        slope_stderr,
    })
}

/// Least-squares coefficient of `y = c x` through the origin.
pub fn origin_fit(x: &[f64], y: &[f64]) -> f64 {
    let sxx: f64 = x.iter().map(|a| a * a).sum();
    if sxx > 0.0 {
        x.iter().zip(y).map(|(a, b)| a * b).sum::<f64>() / sxx
    } else {
        0.0
    }
}

/// Percentile interval of a statistic under resampling of `n` units.
///
/// `stat` receives the resampled unit indices. Resamples use the
/// bootstrap stream of `seed`, so the interval is reproducible.
pub fn bootstrap_interval(
    n: usize,
    reps: usize,
    level: f64,
    seed: u64,
    mut stat: impl FnMut(&[usize]) -> Option<f64>,
) -> Result<(f64, f64)> {
    if n == 0 || reps < 10 {
        return Err(Error::Insufficient(format!("bootstrap over {n} units, {reps} reps")));
    }
    let mut rng = NoisePlan::new(seed).stream(0, Phase::Bootstrap);
    let mut idx = vec![0usize; n];
    let mut vals = Vec::with_capacity(reps);
    for _ in 0..reps {
        for v in idx.iter_mut() {
            *v = rng.random_range(0..n);
        }
        if let Some(s) = stat(&idx) {
            if s.is_finite() {
                vals.push(s);
            }
        }
    }
    if vals.len() < reps / 2 {
        return Err(Error::Insufficient(format!(
            "only {} of {reps} bootstrap replicates were finite",
            vals.len()
        )));
    }
    vals.sort_by(f64::total_cmp);
    let q = |p: f64| {
        let pos = p * (vals.len() - 1) as f64;
        let lo = pos.floor() as usize;
        let hi = pos.ceil() as usize;
        vals[lo] + (pos - lo as f64) * (vals[hi] - vals[lo])
    };
    let tail = (1.0 - level) / 2.0;
    Ok((q(tail), q(1.0 - tail)))
}

/// Mann-Kendall trend test.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrendTest {
    pub s: f64,
    pub z: f64,
    /// `z > 1.96`: significant increase at the 95% level.
    pub increasing: bool,
    /// `z < -1.96`.
    pub decreasing: bool,
}

pub fn mann_kendall(y: &[f64]) -> TrendTest {
    let n = y.len();
    let mut s = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            s += (y[j] - y[i]).signum() * ((y[j] != y[i]) as i32 as f64);
        }
    }
    let nf = n as f64;
    let var = nf * (nf - 1.0) * (2.0 * nf + 5.0) / 18.0;
    let z = if var <= 0.0 {
        0.0
    } else if s > 0.0 {
        (s - 1.0) / var.sqrt()
    } else if s < 0.0 {
        (s + 1.0) / var.sqrt()
    } else {
        0.0
    };
    TrendTest {
        s,
        z,
        increasing: z > 1.96,
        decreasing: z < -1.96,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shifted_mean_is_exact_on_constants() {
        assert_eq!(shifted_mean(&[0.1, 0.1, 0.1]), 0.1);
        assert_eq!(estimate(&[2.0, 2.0]).stderr, 0.0);
        let e = estimate(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(e.mean, 2.5);
        assert!((e.stderr - (5.0f64 / 12.0).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn fits() {
        let x = [0.0, 1.0, 2.0, 3.0];
        let y: Vec<f64> = x.iter().map(|v| 2.0 - 0.5 * v).collect();
        let f = linear_fit(&x, &y).unwrap();
        assert!((f.slope + 0.5).abs() < 1e-15 && (f.intercept - 2.0).abs() < 1e-15);
        assert_eq!(f.r_squared, 1.0);
        assert!(linear_fit(&[1.0], &[1.0]).is_err());
        assert_eq!(origin_fit(&[1.0, 2.0], &[3.0, 6.0]), 3.0);
    }

    #[test]
    fn weighted_and_ess() {
        let e = weighted_estimate(&[1.0, 3.0], &[1.0, 1.0]);
        assert_eq!(e.mean, 2.0);
        assert_eq!(ess(&[1.0; 8]), 8.0);
        assert_eq!(ess(&[1.0, 0.0, 0.0]), 1.0);
        assert_eq!(weights_from_logs(&[0.0, 0.0]), vec![1.0, 1.0]);
    }

    #[test]
    fn trend_test_detects_monotone_series() {
        let up: Vec<f64> = (0..30).map(|i| i as f64).collect();
        assert!(mann_kendall(&up).increasing);
        let down: Vec<f64> = up.iter().map(|v| -v).collect();
        let t = mann_kendall(&down);
        assert!(t.decreasing && !t.increasing);
        assert!(!mann_kendall(&[1.0; 10]).increasing);
    }

    #[test]
    fn bootstrap_interval_brackets_the_mean() {
        let xs: Vec<f64> = (0..200).map(|i| (i % 7) as f64).collect();
        let (lo, hi) = bootstrap_interval(xs.len(), 400, 0.95, 1, |idx| {
            Some(idx.iter().map(|&i| xs[i]).sum::<f64>() / idx.len() as f64)
        })
        .unwrap();
        let m = shifted_mean(&xs);
        assert!(lo < m && m < hi);
    }
}
