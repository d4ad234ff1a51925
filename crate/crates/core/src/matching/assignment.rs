//! Rectangular linear assignment by shortest augmenting paths.
//!
//! Each row is inserted in turn and routed to a free column along a
//! Dijkstra shortest path in reduced costs (the Jonker–Volgenant scheme, in
//! the form popularized by Crouse). Dual potentials keep every reduced cost
//! nonnegative, so each augmentation preserves optimality of the partial
//! assignment. Runs in `O(rows² · cols)`.

use crate::error::{Error, Result};

const NONE: usize = usize::MAX;

/// Dense row-major cost matrix with `rows <= cols`.
#[derive(Debug, Clone)]
pub struct CostMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl CostMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::contract(format!(
                "cost buffer has {} entries, expected {rows}x{cols}",
                data.len()
            )));
        }
        if data.iter().any(|c| !c.is_finite()) {
            return Err(Error::contract("costs must be finite"));
        }
        Ok(CostMatrix { rows, cols, data })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Result<Self> {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self::new(rows, cols, data)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }
}

/// Minimum-cost injective assignment of rows to columns.
///
/// Returns `col_for_row`. Ties are resolved by scan order: lower column
/// indices win, and free columns win over assigned ones at equal distance.
pub fn solve(cost: &CostMatrix) -> Result<Vec<usize>> {
    let (nr, nc) = (cost.rows, cost.cols);
    if nr > nc {
        return Err(Error::contract(format!(
            "assignment needs rows <= cols, got {nr}x{nc}"
        )));
    }
    let mut u = vec![0.0; nr];
    let mut v = vec![0.0; nc];
    let mut col_for_row = vec![NONE; nr];
    let mut row_for_col = vec![NONE; nc];

    let mut path = vec![NONE; nc];
    let mut shortest = vec![f64::INFINITY; nc];
    let mut scanned_row = vec![false; nr];
    let mut scanned_col = vec![false; nc];
    let mut remaining: Vec<usize> = Vec::with_capacity(nc);

    for cur_row in 0..nr {
        shortest.fill(f64::INFINITY);
        scanned_row.fill(false);
        scanned_col.fill(false);
        remaining.clear();
        remaining.extend((0..nc).rev());

        let mut min_val = 0.0;
        let mut i = cur_row;
        let sink = loop {
            scanned_row[i] = true;
            let row = cost.row(i);
            let ui = u[i];
            let mut best_at = NONE;
            let mut lowest = f64::INFINITY;
            for (pos, &j) in remaining.iter().enumerate() {
                let r = min_val + row[j] - ui - v[j];
                if r < shortest[j] {
                    path[j] = i;
                    shortest[j] = r;
                }
                if shortest[j] < lowest
                    || (shortest[j] == lowest && row_for_col[j] == NONE)
                {
                    lowest = shortest[j];
                    best_at = pos;
                }
            }
            if best_at == NONE || !lowest.is_finite() {
                return Err(Error::contract("assignment problem is infeasible"));
            }
            min_val = lowest;
            let j = remaining.swap_remove(best_at);
            scanned_col[j] = true;
            if row_for_col[j] == NONE {
                break j;
            }
            i = row_for_col[j];
        };

        u[cur_row] += min_val;
        for r in 0..nr {
            if scanned_row[r] && r != cur_row {
                u[r] += min_val - shortest[col_for_row[r]];
            }
        }
        for j in 0..nc {
            if scanned_col[j] {
                v[j] -= min_val - shortest[j];
            }
        }

        let mut j = sink;
        loop {
            let r = path[j];
            row_for_col[j] = r;
            std::mem::swap(&mut col_for_row[r], &mut j);
            if r == cur_row {
                break;
            }
        }
    }
    Ok(col_for_row)
}
