//! Small dense helpers for `d x d` row-major matrices.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// `out = m * v`.
#[inline]
pub fn mat_vec(m: &[f64], v: &[f64], out: &mut [f64]) {
    let d = v.len();
    if d == 1 {
        out[0] = m[0] * v[0];
        return;
    }
    for (i, o) in out.iter_mut().enumerate() {
        *o = m[i * d..(i + 1) * d].iter().zip(v).map(|(a, b)| a * b).sum();
    }
}

/// Inverse of a row-major square matrix.
pub fn invert(m: &[f64], d: usize) -> Result<Vec<f64>> {
    if m.len() != d * d {
        return Err(Error::Shape(format!("{} entries for a {d}x{d} matrix", m.len())));
    }
    if d == 1 {
        if m[0] == 0.0 || !m[0].is_finite() {
            return Err(Error::Singular(format!("1x1 matrix [{}]", m[0])));
        }
        return Ok(vec![1.0 / m[0]]);
    }
    let mat = DMatrix::from_row_slice(d, d, m);
    let inv = mat
        .try_inverse()
        .ok_or_else(|| Error::Singular(format!("{d}x{d} matrix {m:?}")))?;
    if inv.iter().any(|x| !x.is_finite()) {
        return Err(Error::Singular(format!("{d}x{d} matrix {m:?}")));
    }
    Ok(inv.transpose().as_slice().to_vec())
}

/// `a = s s^T`.
pub fn gram(s: &[f64], d: usize) -> Vec<f64> {
    let mut a = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..d {
            a[i * d + j] = (0..d).map(|k| s[i * d + k] * s[j * d + k]).sum();
        }
    }
    a
}

/// Extreme eigenvalues of a symmetric matrix.
pub fn sym_eigen_range(a: &[f64], d: usize) -> (f64, f64) {
    if d == 1 {
        return (a[0], a[0]);
    }
    let eig = DMatrix::from_row_slice(d, d, a).symmetric_eigenvalues();
    let lo = eig.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = eig.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    (lo, hi)
}

/// Frobenius norm of the difference of two equal-size matrices.
pub fn frobenius_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Operator norm of a square matrix, via the largest eigenvalue of `m m^T`.
pub fn op_norm(m: &[f64], d: usize) -> f64 {
    if d == 1 {
        return m[0].abs();
    }
    sym_eigen_range(&gram(m, d), d).1.max(0.0).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inverse_round_trip() {
        let m = [2.0, 1.0, 0.5, 3.0];
        let inv = invert(&m, 2).unwrap();
        let mut e = [0.0; 2];
        mat_vec(&inv, &[2.0, 0.5], &mut e);
        // inv * (first column of m) = e_1
        assert!((e[0] - 1.0).abs() < 1e-14 && e[1].abs() < 1e-14);
        assert!(matches!(invert(&[1.0, 2.0, 2.0, 4.0], 2), Err(Error::Singular(_))));
        assert!(matches!(invert(&[0.0], 1), Err(Error::Singular(_))));
    }

    #[test]
    fn norms() {
        assert_eq!(op_norm(&[-3.0], 1), 3.0);
        assert!((op_norm(&[2.0, 0.0, 0.0, -5.0], 2) - 5.0).abs() < 1e-12);
        assert_eq!(sym_eigen_range(&[2.0, 0.0, 0.0, 7.0], 2), (2.0, 7.0));
        assert_eq!(frobenius_diff(&[1.0, 2.0], &[1.0, 0.0]), 2.0);
    }
}
