//! Exact square linear assignment.
//!
//! Shortest augmenting paths with double-precision potentials (O(n³)).
//! Among all optimal assignments the lexicographically smallest permutation
//! is returned: the optimal duals define the tight-edge graph, whose perfect
//! matchings are exactly the optima, and rows are then fixed in order to
//! their smallest feasible column.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sense {
    Minimize,
    Maximize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Assignment {
    /// `perm[i]` is the column assigned to row `i`.
    pub perm: Vec<usize>,
    pub objective: f64,
}

pub fn solve_lap(cost: &[Vec<f64>], sense: Sense) -> Result<Assignment> {
    let n = cost.len();
    if let Some(row) = cost.iter().find(|r| r.len() != n) {
        return Err(Error::Shape(format!("cost matrix is not square: {n} rows, a row of {}", row.len())));
    }
    let flat: Vec<f64> = cost.iter().flatten().copied().collect();
    solve_lap_flat(n, &flat, sense)
}

/// Row-major `n × n` variant of [`solve_lap`].
pub fn solve_lap_flat(n: usize, cost: &[f64], sense: Sense) -> Result<Assignment> {
    if n == 0 {
        return Err(Error::InvalidArgument("empty cost matrix".into()));
    }
    if cost.len() != n * n {
        return Err(Error::Shape(format!("{} entries for a {n}×{n} matrix", cost.len())));
    }
    if let Some(k) = cost.iter().position(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument(format!("non-finite cost at ({}, {})", k / n, k % n)));
    }
    let c: Vec<f64> = match sense {
        Sense::Minimize => cost.to_vec(),
        Sense::Maximize => cost.iter().map(|v| -v).collect(),
    };
    let (mut row_of_col, u, v) = hungarian(n, &c);
    let scale = c.iter().fold(1.0f64, |m, x| m.max(x.abs()));
    let tol = 1e-11 * scale * n as f64;
    let tight: Vec<bool> = (0..n * n).map(|k| c[k] - u[k / n] - v[k % n] <= tol).collect();
    let mut col_of_row = vec![0usize; n];
    for (j, &i) in row_of_col.iter().enumerate() {
        col_of_row[i] = j;
    }
    lexicographic(n, &tight, &mut col_of_row, &mut row_of_col);
    let objective = col_of_row.iter().enumerate().map(|(i, &j)| cost[i * n + j]).sum();
    Ok(Assignment {
        perm: col_of_row,
        objective,
    })
}

/// Minimum-cost assignment. Returns (row assigned to each column, row
/// potentials, column potentials) with `c[i][j] − u[i] − v[j] ≥ 0`, equal
/// to 0 on the assignment.
fn hungarian(n: usize, c: &[f64]) -> (Vec<usize>, Vec<f64>, Vec<f64>) {
    // 1-based with a virtual column 0, after the classic formulation
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = c[(i0 - 1) * n + (j - 1)] - u[i0] - v[j];
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
    let row_of_col = (1..=n).map(|j| p[j] - 1).collect();
    (row_of_col, u[1..].to_vec(), v[1..].to_vec())
}

/// Rewrites a perfect matching inside the tight graph into the
/// lexicographically smallest one.
fn lexicographic(n: usize, tight: &[bool], col_of_row: &mut [usize], row_of_col: &mut [usize]) {
    let mut fixed = vec![false; n];
    let mut parent = vec![usize::MAX; n];
    let mut reach = vec![false; n];
    let mut queue = Vec::with_capacity(n);
    for i in 0..n {
        let target = col_of_row[i];
        // rows that can hand their column on along tight edges until `target` frees up
        reach.fill(false);
        queue.clear();
        queue.push(target);
        let mut head = 0;
        while head < queue.len() {
            let col = queue[head];
            head += 1;
            for r in 0..n {
                if r == i || fixed[r] || reach[r] || col_of_row[r] == col || !tight[r * n + col] {
                    continue;
                }
                reach[r] = true;
                parent[r] = col;
                queue.push(col_of_row[r]);
            }
        }
        let best = (0..n)
            .find(|&j| tight[i * n + j] && (j == target || (!fixed[row_of_col[j]] && reach[row_of_col[j]])))
            .expect("current column is always feasible");
        if best != target {
            let mut r = row_of_col[best];
            col_of_row[i] = best;
            row_of_col[best] = i;
            loop {
                let next = parent[r];
                let displaced = row_of_col[next];
                col_of_row[r] = next;
                row_of_col[next] = r;
                if next == target {
                    break;
                }
                r = displaced;
            }
        }
        fixed[i] = true;
    }
}
