//! Optimal pair matching and nearest-neighbor matching with replacement on
//! Mahalanobis distance.

pub mod assignment;
pub mod line;

use std::io::Write;
use std::path::Path;

use rand::Rng;
use serde::Serialize;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::linalg::Metric;
use crate::rng;

/// Distances within this relative gap of the minimum count as ties in
/// matching with replacement.
pub const TIE_RTOL: f64 = 1e-12;

/// A treated unit and the control it was matched to, as dataset row indices.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MatchedPair {
    pub treated: usize,
    pub control: usize,
    pub distance: f64,
}

/// Shared view of a matching: one entry per treated unit, in treated-index
/// order.
pub trait Matching {
    fn pairs(&self) -> &[MatchedPair];

    /// Multiplicity weight of a matched unit, zero if the unit is unmatched.
    fn weight(&self, index: usize) -> u32;

    fn n_treated(&self) -> usize {
        self.pairs().len()
    }
}

/// Every treated unit paired with a distinct control.
#[derive(Debug, Clone, PartialEq)]
pub struct PairMatching {
    pairs: Vec<MatchedPair>,
    total_cost: f64,
}

impl PairMatching {
    pub fn total_cost(&self) -> f64 {
        self.total_cost
    }

    /// Matched units in pair order: `t₀, c₀, t₁, c₁, ...`.
    pub fn matched_set(&self) -> Vec<usize> {
        self.pairs
            .iter()
            .flat_map(|p| [p.treated, p.control])
            .collect()
    }
}

impl Matching for PairMatching {
    fn pairs(&self) -> &[MatchedPair] {
        &self.pairs
    }

    fn weight(&self, index: usize) -> u32 {
        u32::from(
            self.pairs
                .iter()
                .any(|p| p.treated == index || p.control == index),
        )
    }
}

/// Each treated unit mapped to a nearest control; controls may be reused.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplacementMatching {
    pairs: Vec<MatchedPair>,
    weights: Vec<u32>,
}

impl ReplacementMatching {
    /// Units with positive weight, in index order.
    pub fn matched_set(&self) -> Vec<usize> {
        (0..self.weights.len())
            .filter(|&i| self.weights[i] > 0)
            .collect()
    }

    /// Per-unit weights over the whole dataset (zero for unmatched units).
    pub fn weights(&self) -> &[u32] {
        &self.weights
    }

    pub fn total_cost(&self) -> f64 {
        self.pairs.iter().map(|p| p.distance).sum()
    }
}

impl Matching for ReplacementMatching {
    fn pairs(&self) -> &[MatchedPair] {
        &self.pairs
    }

    fn weight(&self, index: usize) -> u32 {
        self.weights[index]
    }
}

struct Whitened {
    treated: Vec<usize>,
    controls: Vec<usize>,
    coords: Vec<Vec<f64>>,
}

fn whiten_all(dataset: &Dataset, metric: &Metric) -> Result<Whitened> {
    if metric.dim() != dataset.dim() {
        return Err(Error::contract(format!(
            "metric dimension {} does not match dataset dimension {}",
            metric.dim(),
            dataset.dim()
        )));
    }
    Ok(Whitened {
        treated: dataset.treated_indices(),
        controls: dataset.control_indices(),
        coords: (0..dataset.len()).map(|i| metric.whiten(dataset.x(i))).collect(),
    })
}

fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(p, q)| (p - q) * (p - q))
        .sum::<f64>()
        .sqrt()
}

/// Pairs every treated unit with a distinct control so the total
/// Mahalanobis distance is minimal.
///
/// Scalar covariates use the exact path-flow solver; otherwise the dense
/// shortest-augmenting-path assignment is solved on the `N1 × N0` distance
/// matrix.
pub fn optimal_pair_match(dataset: &Dataset, metric: &Metric) -> Result<PairMatching> {
    let (n1, n0) = (dataset.n_treated(), dataset.n_control());
    if n1 == 0 {
        return Err(Error::DegenerateDesign("no treated units".into()));
    }
    if n1 > n0 {
        return Err(Error::DegenerateDesign(format!(
            "more treated than control units ({n1} > {n0}); pair matching is undefined"
        )));
    }
    let w = whiten_all(dataset, metric)?;
    let col_for_row = if dataset.dim() == 1 {
        let t: Vec<f64> = w.treated.iter().map(|&i| w.coords[i][0]).collect();
        let c: Vec<f64> = w.controls.iter().map(|&j| w.coords[j][0]).collect();
        line::solve(&t, &c)?
    } else {
        let cost = assignment::CostMatrix::from_fn(n1, n0, |a, b| {
            euclidean(&w.coords[w.treated[a]], &w.coords[w.controls[b]])
        })?;
        assignment::solve(&cost)?
    };
    let pairs: Vec<MatchedPair> = col_for_row
        .into_iter()
        .enumerate()
        .map(|(a, b)| {
            let (t, c) = (w.treated[a], w.controls[b]);
            MatchedPair {
                treated: t,
                control: c,
                distance: euclidean(&w.coords[t], &w.coords[c]),
            }
        })
        .collect();
    let total_cost = pairs.iter().map(|p| p.distance).sum();
    Ok(PairMatching { pairs, total_cost })
}

/// Matches each treated unit to a control at minimal Mahalanobis distance.
///
/// Exact ties are broken by auxiliary uniforms `U_j` drawn per unit from
/// `tiebreak_seed`: the tied control minimizing `|U_i - U_j|` wins.
pub fn match_with_replacement(
    dataset: &Dataset,
    metric: &Metric,
    tiebreak_seed: u64,
) -> Result<ReplacementMatching> {
    let n0 = dataset.n_control();
    if n0 == 0 {
        return Err(Error::DegenerateDesign("no control units".into()));
    }
    if dataset.n_treated() == 0 {
        return Err(Error::DegenerateDesign("no treated units".into()));
    }
    let w = whiten_all(dataset, metric)?;
    let mut stream = rng::stream(tiebreak_seed);
    let uniforms: Vec<f64> = (0..dataset.len()).map(|_| stream.random::<f64>()).collect();

    let mut weights = vec![0u32; dataset.len()];
    let mut dist = vec![0.0; n0];
    let mut pairs = Vec::with_capacity(w.treated.len());
    for &t in &w.treated {
        for (slot, &c) in dist.iter_mut().zip(&w.controls) {
            *slot = euclidean(&w.coords[t], &w.coords[c]);
        }
        let min = dist.iter().copied().fold(f64::INFINITY, f64::min);
        let cutoff = min + TIE_RTOL * min;
        let mut best: Option<(f64, usize)> = None;
        for (b, &c) in w.controls.iter().enumerate() {
            if dist[b] <= cutoff {
                let gap = (uniforms[t] - uniforms[c]).abs();
                if best.is_none_or(|(g, _)| gap < g) {
                    best = Some((gap, b));
                }
            }
        }
        let b = best.expect("at least one control attains the minimum").1;
        let c = w.controls[b];
        weights[t] = 1;
        weights[c] += 1;
        pairs.push(MatchedPair {
            treated: t,
            control: c,
            distance: dist[b],
        });
    }
    Ok(ReplacementMatching { pairs, weights })
}

/// Mean treated-minus-matched-control covariate difference.
pub fn covariate_imbalance(dataset: &Dataset, matching: &impl Matching) -> Vec<f64> {
    let d = dataset.dim();
    let pairs = matching.pairs();
    let mut delta = vec![0.0; d];
    for p in pairs {
        for ((acc, xt), xc) in delta.iter_mut().zip(dataset.x(p.treated)).zip(dataset.x(p.control)) {
            *acc += xt - xc;
        }
    }
    if !pairs.is_empty() {
        delta.iter_mut().for_each(|v| *v /= pairs.len() as f64);
    }
    delta
}

/// Writes `treated_index,control_index,distance,weight` rows, where weight is
/// the matched control's multiplicity.
pub fn write_matching_csv(matching: &impl Matching, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = std::io::BufWriter::new(
        std::fs::File::create(path).map_err(|e| Error::io(path, e))?,
    );
    let io = |e| Error::io(path, e);
    writeln!(out, "treated_index,control_index,distance,weight").map_err(io)?;
    for p in matching.pairs() {
        writeln!(
            out,
            "{},{},{},{}",
            p.treated,
            p.control,
            p.distance,
            matching.weight(p.control)
        )
        .map_err(io)?;
    }
    out.flush().map_err(io)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Unit;
    use crate::linalg::{build_metric, mahalanobis_distance, sample_covariance};
    use rand::SeedableRng;

    fn ds(rows: &[(&[f64], bool)]) -> Dataset {
        Dataset::new(
            rows.iter()
                .map(|(x, t)| Unit::new(x.to_vec(), 0.0, *t))
                .collect(),
        )
        .unwrap()
    }

    fn random_dataset(rng: &mut impl Rng, n1: usize, n0: usize, d: usize) -> Dataset {
        let units = (0..n1 + n0)
            .map(|i| {
                Unit::new(
                    (0..d).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect(),
                    rng.random(),
                    i < n1,
                )
            })
            .collect::<Vec<_>>();
        // interleave so indices are not sorted by group
        let mut units = units;
        for i in (1..units.len()).rev() {
            let j = rng.random_range(0..=i);
            units.swap(i, j);
        }
        Dataset::new(units).unwrap()
    }

    fn brute_force_cost(dataset: &Dataset, metric: &Metric) -> f64 {
        let t = dataset.treated_indices();
        let c = dataset.control_indices();
        fn rec(
            dataset: &Dataset,
            metric: &Metric,
            t: &[usize],
            c: &[usize],
            k: usize,
            used: &mut [bool],
            acc: f64,
            best: &mut f64,
        ) {
            if k == t.len() {
                *best = best.min(acc);
                return;
            }
            for j in 0..c.len() {
                if !used[j] {
                    used[j] = true;
                    let dist =
                        mahalanobis_distance(dataset.x(t[k]), dataset.x(c[j]), metric).unwrap();
                    rec(dataset, metric, t, c, k + 1, used, acc + dist, best);
                    used[j] = false;
                }
            }
        }
        let mut best = f64::INFINITY;
        rec(dataset, metric, &t, &c, 0, &mut vec![false; c.len()], 0.0, &mut best);
        best
    }

    #[test]
    fn single_treated_takes_nearest() {
        let d = ds(&[(&[0.0], true), (&[0.9], false), (&[0.2], false)]);
        let m = optimal_pair_match(&d, &Metric::identity(1)).unwrap();
        assert_eq!(m.pairs()[0].control, 2);
        assert!((m.total_cost() - 0.2).abs() < 1e-15);
    }

    #[test]
    fn two_pair_example() {
        let d = ds(&[(&[0.0], true), (&[2.0], true), (&[1.0], false), (&[3.0], false)]);
        let m = optimal_pair_match(&d, &Metric::identity(1)).unwrap();
        let got: Vec<(usize, usize)> = m.pairs().iter().map(|p| (p.treated, p.control)).collect();
        assert_eq!(got, vec![(0, 2), (1, 3)]);
        assert_eq!(m.total_cost(), 2.0);
        assert_eq!(m.matched_set(), vec![0, 2, 1, 3]);
    }

    #[test]
    fn degenerate_designs() {
        let none_treated = ds(&[(&[0.0], false), (&[1.0], false)]);
        assert!(matches!(
            optimal_pair_match(&none_treated, &Metric::identity(1)),
            Err(Error::DegenerateDesign(_))
        ));
        let too_many = ds(&[(&[0.0], true), (&[1.0], true), (&[2.0], false)]);
        assert!(matches!(
            optimal_pair_match(&too_many, &Metric::identity(1)),
            Err(Error::DegenerateDesign(_))
        ));
        let no_controls = ds(&[(&[0.0], true)]);
        assert!(matches!(
            match_with_replacement(&no_controls, &Metric::identity(1), 1),
            Err(Error::DegenerateDesign(_))
        ));
    }

    #[test]
    fn optimal_matching_equals_brute_force() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(31);
        for _ in 0..200 {
            let d = rng.random_range(1..4);
            let n1 = rng.random_range(1..6);
            let n0 = rng.random_range(n1..8);
            let data = random_dataset(&mut rng, n1, n0, d);
            let metric = build_metric(&sample_covariance(&data).unwrap()).unwrap();
            let m = optimal_pair_match(&data, &metric).unwrap();
            let mut controls: Vec<usize> = m.pairs().iter().map(|p| p.control).collect();
            controls.sort();
            controls.dedup();
            assert_eq!(controls.len(), n1);
            assert!(m.pairs().iter().all(|p| data.is_treated(p.treated) && !data.is_treated(p.control)));
            assert!((m.total_cost() - brute_force_cost(&data, &metric)).abs() < 1e-9);
        }
    }

    #[test]
    fn exact_matches_cost_nothing() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(32);
        for d in 1..4 {
            let mut units = Vec::new();
            for _ in 0..6 {
                let x: Vec<f64> = (0..d).map(|_| rng.random_range(0..3) as f64).collect();
                units.push(Unit::new(x.clone(), 0.0, true));
                units.push(Unit::new(x, 1.0, false));
            }
            units.push(Unit::new(vec![9.0; d], 0.0, false));
            let data = Dataset::new(units).unwrap();
            let metric = build_metric(&sample_covariance(&data).unwrap()).unwrap();
            let m = optimal_pair_match(&data, &metric).unwrap();
            assert_eq!(m.total_cost(), 0.0);
            assert!(covariate_imbalance(&data, &m).iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn replacement_is_nearest_and_never_worse_than_pairs() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(33);
        for _ in 0..100 {
            let d = rng.random_range(1..4);
            let n1 = rng.random_range(1..15);
            let n0 = rng.random_range(n1..25);
            let data = random_dataset(&mut rng, n1, n0, d);
            let metric = build_metric(&sample_covariance(&data).unwrap()).unwrap();
            let r = match_with_replacement(&data, &metric, rng.random()).unwrap();
            let p = optimal_pair_match(&data, &metric).unwrap();
            for (rp, pp) in r.pairs().iter().zip(p.pairs()) {
                assert_eq!(rp.treated, pp.treated);
                let linear_min = data
                    .control_indices()
                    .into_iter()
                    .map(|c| mahalanobis_distance(data.x(rp.treated), data.x(c), &metric).unwrap())
                    .fold(f64::INFINITY, f64::min);
                assert!((rp.distance - linear_min).abs() < 1e-9);
                assert!(rp.distance <= pp.distance + 1e-12);
            }
            let control_weight: u32 = data.control_indices().iter().map(|&c| r.weight(c)).sum();
            assert_eq!(control_weight as usize, n1);
            assert!(data.treated_indices().iter().all(|&t| r.weight(t) == 1));
            assert!(r.matched_set().iter().all(|&i| r.weight(i) > 0));
        }
    }

    #[test]
    fn single_strict_nearest_control_gets_all_weight() {
        let d = ds(&[
            (&[0.0], true),
            (&[0.1], true),
            (&[0.2], true),
            (&[0.05], false),
            (&[5.0], false),
        ]);
        let r = match_with_replacement(&d, &Metric::identity(1), 0).unwrap();
        assert_eq!(r.weight(3), 3);
        assert_eq!(r.weight(4), 0);
        assert_eq!(r.matched_set(), vec![0, 1, 2, 3]);
    }

    #[test]
    fn tiebreak_seed_only_matters_for_ties() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(34);
        let data = random_dataset(&mut rng, 10, 20, 2);
        let metric = Metric::identity(2);
        assert_eq!(
            match_with_replacement(&data, &metric, 1).unwrap(),
            match_with_replacement(&data, &metric, 2).unwrap()
        );

        // one treated unit equidistant from two controls
        let tied = ds(&[(&[0.0], true), (&[-1.0], false), (&[1.0], false)]);
        let picks: std::collections::BTreeSet<usize> = (0..40)
            .map(|s| match_with_replacement(&tied, &Metric::identity(1), s).unwrap().pairs()[0].control)
            .collect();
        assert_eq!(picks.len(), 2);
    }

    #[test]
    fn imbalance_example() {
        let d = ds(&[(&[1.0], true), (&[3.0], true), (&[0.5], false), (&[2.5], false)]);
        let m = optimal_pair_match(&d, &Metric::identity(1)).unwrap();
        assert!((covariate_imbalance(&d, &m)[0] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn csv_export() {
        let d = ds(&[(&[0.0], true), (&[0.1], true), (&[0.05], false), (&[4.0], false)]);
        let r = match_with_replacement(&d, &Metric::identity(1), 0).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        write_matching_csv(&r, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(
            text,
            "treated_index,control_index,distance,weight\n0,2,0.05,2\n1,2,0.05,2\n"
        );
    }
}
