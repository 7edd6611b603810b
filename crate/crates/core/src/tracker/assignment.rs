//! Minimum-cost rectangular assignment (Hungarian method with potentials).

use crate::error::{Error, Result};

/// Solves the linear assignment problem for an `n x m` cost matrix given as
/// rows. Returns `min(n, m)` `(row, col)` pairs sorted by row that minimize
/// the total cost, each row and column used at most once.
///
/// Pivot selection takes the first minimum encountered, so ties resolve
/// toward lower indices and the result is deterministic.
pub fn solve_assignment(cost: &[Vec<f64>]) -> Result<Vec<(usize, usize)>> {
    let n = cost.len();
    let m = cost.first().map_or(0, Vec::len);
    for (r, row) in cost.iter().enumerate() {
        if row.len() != m {
            return Err(Error::Shape(format!(
                "cost row {r} has {} columns, expected {m}",
                row.len()
            )));
        }
        if let Some(c) = row.iter().position(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::validation(format!(
                "cost[{r}][{c}] = {} is not a finite non-negative number",
                row[c]
            )));
        }
    }
    if n == 0 || m == 0 {
        return Ok(Vec::new());
    }
    if n <= m {
        Ok(solve_rows_le_cols(n, m, |i, j| cost[i][j]))
    } else {
        let mut pairs: Vec<(usize, usize)> = solve_rows_le_cols(m, n, |i, j| cost[j][i])
            .into_iter()
            .map(|(c, r)| (r, c))
            .collect();
        pairs.sort_unstable();
        Ok(pairs)
    }
}

/// Sum of `cost[r][c]` over `pairs`, accumulated in pair order.
pub fn assignment_total(cost: &[Vec<f64>], pairs: &[(usize, usize)]) -> f64 {
    pairs.iter().map(|&(r, c)| cost[r][c]).sum()
}

// Shortest augmenting path formulation; every row is assigned since n <= m.
fn solve_rows_le_cols(n: usize, m: usize, a: impl Fn(usize, usize) -> f64) -> Vec<(usize, usize)> {
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; m + 1];
    // p[j]: row (1-based) assigned to column j; column 0 is the virtual root.
    let mut p = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];

    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=m {
                if used[j] {
                    continue;
                }
                let cur = a(i0 - 1, j - 1) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }

    let mut pairs: Vec<(usize, usize)> = (1..=m)
        .filter(|&j| p[j] != 0)
        .map(|j| (p[j] - 1, j - 1))
        .collect();
    pairs.sort_unstable();
    pairs
}
