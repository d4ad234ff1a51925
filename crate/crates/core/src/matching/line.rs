//! Exact optimal pair matching for scalar covariates.
//!
//! With one covariate the assignment problem becomes a min-cost flow on a
//! path: treated points emit one unit, each control may absorb one, and
//! moving `f` units across a gap of length `g` costs `g·|f|`. The value
//! function over the flow `f` is convex and piecewise linear, so it is
//! carried as two ordered maps of breakpoints (slope trick) in
//! `O(n log n)`. A backward pass recovers which controls absorb flow, and
//! sorted order pairs treated with the chosen controls.

use std::collections::BTreeMap;

use crate::error::{Error, Result};

const WALL: f64 = 1e300;

/// Weighted breakpoints `Σ w·max(0, p - f)` (left) or `Σ w·max(0, f - p)`
/// (right), stored at `key = position - offset`.
#[derive(Debug, Default)]
struct Side {
    points: BTreeMap<i64, f64>,
    offset: i64,
}

impl Side {
    fn add(&mut self, pos: i64, w: f64) {
        if w > 0.0 {
            *self.points.entry(pos - self.offset).or_insert(0.0) += w;
        }
    }

    fn max(&self) -> i64 {
        self.points.last_key_value().map(|(k, _)| k + self.offset).unwrap()
    }

    fn min(&self) -> i64 {
        self.points.first_key_value().map(|(k, _)| k + self.offset).unwrap()
    }

    fn pop_max(&mut self) -> (i64, f64) {
        let (k, w) = self.points.pop_last().unwrap();
        (k + self.offset, w)
    }

    fn pop_min(&mut self) -> (i64, f64) {
        let (k, w) = self.points.pop_first().unwrap();
        (k + self.offset, w)
    }
}

/// Adds `g·|f|` to the function described by `left`/`right`.
fn add_abs(left: &mut Side, right: &mut Side, g: f64) {
    if g <= 0.0 {
        return;
    }
    let a = 0;
    if a < left.max() {
        let mut remaining = g;
        while remaining > 0.0 && left.max() > a {
            let (l0, wl) = left.pop_max();
            let m = remaining.min(wl);
            right.add(l0, m);
            left.add(a, m);
            left.add(l0, wl - m);
            remaining -= m;
        }
        left.add(a, g);
        right.add(a, remaining);
    } else if a > right.min() {
        let mut remaining = g;
        while remaining > 0.0 && right.min() < a {
            let (r0, wr) = right.pop_min();
            let m = remaining.min(wr);
            left.add(r0, m);
            right.add(a, m);
            right.add(r0, wr - m);
            remaining -= m;
        }
        right.add(a, g);
        left.add(a, remaining);
    } else {
        left.add(a, g);
        right.add(a, g);
    }
}

/// Optimal matching of `treated` positions to distinct `controls` positions
/// under cost `|t - c|`. Returns the control index for each treated index.
pub fn solve(treated: &[f64], controls: &[f64]) -> Result<Vec<usize>> {
    let (n1, n0) = (treated.len(), controls.len());
    if n1 > n0 {
        return Err(Error::contract(format!(
            "line matching needs at most as many treated ({n1}) as controls ({n0})"
        )));
    }
    // (position, is_control, index)
    let mut points: Vec<(f64, bool, usize)> = treated
        .iter()
        .enumerate()
        .map(|(i, &p)| (p, false, i))
        .chain(controls.iter().enumerate().map(|(j, &p)| (p, true, j)))
        .collect();
    points.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));

    let mut left = Side::default();
    let mut right = Side::default();
    left.add(0, WALL);
    right.add(0, WALL);

    // left end of the argmin set just before each control is processed
    let mut argmin_left = vec![0i64; points.len()];
    for (k, &(pos, is_control, _)) in points.iter().enumerate() {
        if k > 0 {
            add_abs(&mut left, &mut right, pos - points[k - 1].0);
        }
        if is_control {
            argmin_left[k] = left.max();
            left.offset -= 1;
        } else {
            left.offset += 1;
            right.offset += 1;
        }
    }

    let mut chosen = Vec::with_capacity(n1);
    let mut flow = 0i64;
    for (k, &(_, is_control, idx)) in points.iter().enumerate().rev() {
        if is_control {
            if flow < argmin_left[k] {
                chosen.push(idx);
                flow += 1;
            }
        } else {
            flow -= 1;
        }
    }
    debug_assert_eq!(flow, 0);
    debug_assert_eq!(chosen.len(), n1);

    let mut t_order: Vec<usize> = (0..n1).collect();
    t_order.sort_by(|&a, &b| treated[a].total_cmp(&treated[b]).then(a.cmp(&b)));
    chosen.sort_by(|&a, &b| controls[a].total_cmp(&controls[b]).then(a.cmp(&b)));

    let mut out = vec![0; n1];
    for (t, c) in t_order.into_iter().zip(chosen) {
        out[t] = c;
    }
    Ok(out)
}
