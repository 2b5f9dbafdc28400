//! Exact linear assignment on dense square cost matrices.
//!
//! Shortest augmenting paths with dual potentials (the Hungarian method in
//! its O(n^3) form). Costs must be finite.

use crate::error::{Error, Result};

/// Optimal permutation and its cost.
#[derive(Clone, Debug, PartialEq)]
pub struct Assignment {
    /// `row_to_col[i]` is the column matched to row `i`.
    pub row_to_col: Vec<usize>,
    /// Sum of matched costs, accumulated in row order.
    pub cost: f64,
}

/// Minimise `sum_i cost[i][perm(i)]` over permutations.
///
/// `cost` is row-major `n x n`.
pub fn solve(cost: &[f64], n: usize) -> Result<Assignment> {
    if cost.len() != n * n {
        return Err(Error::Shape(format!(
            "cost matrix has {} entries, expected {n}x{n}",
            cost.len()
        )));
    }
    if let Some(pos) = cost.iter().position(|c| !c.is_finite()) {
        return Err(Error::NonFinite(format!(
            "cost[{}][{}] = {}",
            pos / n,
            pos % n,
            cost[pos]
        )));
    }
    if n == 0 {
        return Ok(Assignment {
            row_to_col: Vec::new(),
            cost: 0.0,
        });
    }

    // 1-based: column 0 and row 0 are sentinels.
    let mut u = vec![0.0f64; n + 1];
    // column reduction: feasible starting duals
    let mut v = vec![0.0f64; n + 1];
    for j in 1..=n {
        v[j] = (0..n).map(|i| cost[i * n + j - 1]).fold(f64::INFINITY, f64::min);
    }
    let mut matched_row = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    let mut minv = vec![0.0f64; n + 1];
    let mut used = vec![false; n + 1];

    for i in 1..=n {
        matched_row[0] = i;
        let mut j0 = 0usize;
        minv.iter_mut().for_each(|m| *m = f64::INFINITY);
        used.iter_mut().for_each(|b| *b = false);
        loop {
            used[j0] = true;
            let i0 = matched_row[j0];
            let row = &cost[(i0 - 1) * n..i0 * n];
            let ui0 = u[i0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = row[j - 1] - ui0 - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[matched_row[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if matched_row[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            matched_row[j0] = matched_row[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }

    let mut row_to_col = vec![0usize; n];
    for j in 1..=n {
        row_to_col[matched_row[j] - 1] = j - 1;
    }
    let total = row_to_col
        .iter()
        .enumerate()
        .map(|(i, &j)| cost[i * n + j])
        .sum();
    Ok(Assignment {
        row_to_col,
        cost: total,
    })
}

/// Cost of a given permutation, summed in row order.
pub fn permutation_cost(cost: &[f64], n: usize, perm: &[usize]) -> f64 {
    perm.iter().enumerate().map(|(i, &j)| cost[i * n + j]).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn brute_force(cost: &[f64], n: usize) -> f64 {
        fn rec(cost: &[f64], n: usize, perm: &mut Vec<usize>, used: &mut [bool], best: &mut f64) {
            if perm.len() == n {
                let c = permutation_cost(cost, n, perm);
                if c < *best {
                    *best = c;
                }
                return;
            }
            for j in 0..n {
                if !used[j] {
                    used[j] = true;
                    perm.push(j);
                    rec(cost, n, perm, used, best);
                    perm.pop();
                    used[j] = false;
                }
            }
        }
        let mut best = f64::INFINITY;
        rec(cost, n, &mut Vec::new(), &mut vec![false; n], &mut best);
        best
    }

    #[test]
    fn matches_enumeration_on_random_matrices() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for n in 1..=7 {
            for _ in 0..40 {
                let cost: Vec<f64> = (0..n * n).map(|_| rng.random_range(0.0..10.0)).collect();
                let a = solve(&cost, n).unwrap();
                let mut seen = a.row_to_col.clone();
                seen.sort_unstable();
                assert_eq!(seen, (0..n).collect::<Vec<_>>());
                assert_eq!(a.cost, brute_force(&cost, n));
            }
        }
    }

    #[test]
    fn handles_ties_and_negative_costs() {
        let cost = vec![-1.0, -1.0, -1.0, -1.0];
        let a = solve(&cost, 2).unwrap();
        assert_eq!(a.cost, -2.0);
        let cost = vec![0.0, 5.0, 9.0, 5.0, 0.0, 9.0, 9.0, 9.0, 0.0];
        assert_eq!(solve(&cost, 3).unwrap().row_to_col, vec![0, 1, 2]);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(matches!(solve(&[1.0, 2.0], 2), Err(Error::Shape(_))));
        assert!(matches!(
            solve(&[1.0, f64::NAN, 0.0, 1.0], 2),
            Err(Error::NonFinite(_))
        ));
    }
}
