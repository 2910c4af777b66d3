//! Minimum-cost injective assignment (Kuhn-Munkres with potentials, O(n^2 m)).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Assignment {
    /// (row, column) pairs sorted by row.
    pub pairs: Vec<(usize, usize)>,
    /// Rows left without a column.
    pub unmatched_rows: Vec<usize>,
}

impl Assignment {
    pub fn column_of(&self, row: usize) -> Option<usize> {
        self.pairs.iter().find(|p| p.0 == row).map(|p| p.1)
    }

    pub fn total_cost(&self, cost: &[Vec<f64>]) -> f64 {
        let mut by_col = self.pairs.clone();
        by_col.sort_by_key(|p| p.1);
        by_col.iter().map(|&(r, c)| cost[r][c]).sum()
    }
}

/// Solve for `rows <= cols`: returns the column of each row and the optimum.
fn solve_wide(cost: &[Vec<f64>], cols: usize) -> (Vec<usize>, f64) {
    let n = cost.len();
    let m = cols;
    if n == 0 {
        return (Vec::new(), 0.0);
    }
    // 1-based arrays as in the textbook formulation; column 0 is a sentinel.
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; m + 1];
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
                if !used[j] {
                    let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
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
    let mut row_to_col = vec![usize::MAX; n];
    for j in 1..=m {
        if p[j] != 0 {
            row_to_col[p[j] - 1] = j - 1;
        }
    }
    let total = row_to_col.iter().enumerate().map(|(r, &c)| cost[r][c]).sum();
    (row_to_col, total)
}

fn optimum(cost: &[Vec<f64>], rows: &[usize], cols: &[usize]) -> f64 {
    let sub: Vec<Vec<f64>> = rows
        .iter()
        .map(|&r| cols.iter().map(|&c| cost[r][c]).collect())
        .collect();
    solve_wide(&sub, cols.len()).1
}

/// Optimal assignment for `rows <= cols`, lexicographically smallest column sequence
/// (row 0's column first) among all optima.
fn lexicographic_wide(cost: &[Vec<f64>], cols: usize) -> Vec<usize> {
    let n = cost.len();
    let mut free_cols: Vec<usize> = (0..cols).collect();
    let mut chosen = Vec::with_capacity(n);
    for r in 0..n {
        let rest_rows: Vec<usize> = (r + 1..n).collect();
        let target = optimum(cost, &(r..n).collect::<Vec<_>>(), &free_cols);
        let tol = 1e-9 * (1.0 + target.abs());
        let mut pick = None;
        for (idx, &c) in free_cols.iter().enumerate() {
            let mut remaining = free_cols.clone();
            remaining.remove(idx);
            let value = cost[r][c] + optimum(cost, &rest_rows, &remaining);
            if value <= target + tol {
                pick = Some(idx);
                break;
            }
        }
        // the optimum is always attained by some column
        let idx = pick.unwrap_or(0);
        chosen.push(free_cols.remove(idx));
    }
    chosen
}

/// Minimum-total-cost injective assignment of rows to columns. With more rows than
/// columns the surplus rows stay unmatched, and vice versa. Ties are resolved towards
/// the lexicographically smallest assignment (scanning the smaller side in index order).
pub fn hungarian_match(cost: &[Vec<f64>]) -> Result<Assignment> {
    let rows = cost.len();
    let cols = cost.first().map(Vec::len).unwrap_or(0);
    if cost.iter().any(|r| r.len() != cols) {
        return Err(Error::invalid("cost matrix rows have different lengths"));
    }
    if let Some((r, c)) = cost
        .iter()
        .enumerate()
        .find_map(|(r, row)| row.iter().position(|v| !v.is_finite()).map(|c| (r, c)))
    {
        return Err(Error::NonFinite(format!("cost matrix entry ({r}, {c})")));
    }
    if rows == 0 || cols == 0 {
        return Ok(Assignment {
            pairs: Vec::new(),
            unmatched_rows: (0..rows).collect(),
        });
    }
    let mut pairs: Vec<(usize, usize)> = if rows <= cols {
        lexicographic_wide(cost, cols)
            .into_iter()
            .enumerate()
            .collect()
    } else {
        let transposed: Vec<Vec<f64>> = (0..cols).map(|c| (0..rows).map(|r| cost[r][c]).collect()).collect();
        lexicographic_wide(&transposed, rows)
            .into_iter()
            .enumerate()
            .map(|(c, r)| (r, c))
            .collect()
    };
    pairs.sort_unstable();
    let unmatched_rows = (0..rows).filter(|r| !pairs.iter().any(|p| p.0 == *r)).collect();
    Ok(Assignment {
        pairs,
        unmatched_rows,
    })
}
