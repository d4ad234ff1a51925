//! Paired Fisher randomization test: flip treatment within matched pairs and
//! compare the observed statistic with its randomization distribution.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::estimators::FeatureSpec;
use crate::linalg::{Metric, PivotedQr, SINGULAR_PIVOT_RTOL};
use crate::matching::{optimal_pair_match, Matching, PairMatching};
use crate::rng;

/// Largest number of pairs enumerated in exhaustive mode.
pub const MAX_EXHAUSTIVE_PAIRS: usize = 20;

/// `|τ*| ≥ |τ̂|` is tested with this relative slack so that draws equal to the
/// observed value up to rounding count as ties.
pub const TIE_RTOL: f64 = 1e-12;

pub const DEFAULT_PERMUTATIONS: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Mode {
    /// All `2^N1` within-pair assignments.
    Exhaustive,
    /// `b` assignments drawn from `seed`; the p-value is `(1 + count)/(b + 1)`.
    Sampled { b: usize, seed: u64 },
}

/// Matched units laid out pair by pair: position `2p` is the treated unit of
/// pair `p` and `2p + 1` its control.
#[derive(Debug, Clone)]
pub struct MatchedSample<'a> {
    dataset: &'a Dataset,
    units: Vec<usize>,
}

impl<'a> MatchedSample<'a> {
    pub fn new(dataset: &'a Dataset, pairs: &PairMatching) -> Self {
        MatchedSample {
            dataset,
            units: pairs.matched_set(),
        }
    }

    pub fn dataset(&self) -> &'a Dataset {
        self.dataset
    }

    pub fn n_pairs(&self) -> usize {
        self.units.len() / 2
    }

    /// Dataset indices of the matched units in pair order.
    pub fn units(&self) -> &[usize] {
        &self.units
    }

    /// The observed assignment `(1, 0, 1, 0, ...)`.
    pub fn observed(&self) -> Vec<bool> {
        self.from_flips(&vec![false; self.n_pairs()])
    }

    /// Assignment in which pair `p` is swapped when `flips[p]` is set.
    pub fn from_flips(&self, flips: &[bool]) -> Vec<bool> {
        flips.iter().flat_map(|&f| [!f, f]).collect()
    }
}

/// Draws `Z*`: within every pair one unit is pseudo-treated, each with
/// probability one half, independently across pairs.
pub fn permute_within_pairs(sample: &MatchedSample<'_>, rng: &mut impl Rng) -> Vec<bool> {
    let flips: Vec<bool> = (0..sample.n_pairs()).map(|_| rng.random()).collect();
    sample.from_flips(&flips)
}

/// A statistic of the matched data under an assignment over
/// [`MatchedSample::units`].
pub trait PairedStatistic: Sync {
    fn name(&self) -> &'static str;

    fn evaluate(&self, z: &[bool]) -> Result<f64>;
}

/// Difference of means across pairs.
#[derive(Debug, Clone)]
pub struct DmStatistic {
    y: Vec<f64>,
}

impl DmStatistic {
    pub fn new(sample: &MatchedSample<'_>) -> Self {
        DmStatistic {
            y: sample.units().iter().map(|&i| sample.dataset().y(i)).collect(),
        }
    }
}

impl PairedStatistic for DmStatistic {
    fn name(&self) -> &'static str {
        "dm"
    }

    fn evaluate(&self, z: &[bool]) -> Result<f64> {
        if z.len() != self.y.len() {
            return Err(Error::contract("assignment length differs from matched sample"));
        }
        let pairs = self.y.len() / 2;
        if pairs == 0 {
            return Ok(0.0);
        }
        let mut sum = 0.0;
        for p in 0..pairs {
            let (a, b) = (2 * p, 2 * p + 1);
            sum += match (z[a], z[b]) {
                (true, false) => self.y[a] - self.y[b],
                (false, true) => self.y[b] - self.y[a],
                _ => return Err(Error::contract(format!("pair {p} is not split by the assignment"))),
            };
        }
        Ok(sum / pairs as f64)
    }
}

/// Treatment coefficient of `Y ~ Z + 1 + X + g_S(X)` on the matched sample,
/// recomputed for each assignment by partialling `Z` out of the fixed
/// covariate design.
#[derive(Debug, Clone)]
pub struct RegStatistic {
    qr: PivotedQr,
    resid_y: Vec<f64>,
}

impl RegStatistic {
    pub fn new(sample: &MatchedSample<'_>, spec: &FeatureSpec) -> Result<Self> {
        let data = sample.dataset();
        let d = data.dim();
        spec.validate(d)?;
        let p = spec.ncols(d) - 1;
        let m = sample.units().len();
        let mut design = nalgebra::DMatrix::zeros(m, p);
        let mut row = vec![0.0; p];
        for (r, &i) in sample.units().iter().enumerate() {
            spec.fill_controls(data.x(i), &mut row);
            for (c, v) in row.iter().enumerate() {
                design[(r, c)] = *v;
            }
        }
        let qr = PivotedQr::new(design);
        if !qr.is_full_rank(SINGULAR_PIVOT_RTOL) {
            return Err(Error::SingularDesign(format!(
                "covariate design on the matched sample has rank {} < {p}",
                qr.rank(SINGULAR_PIVOT_RTOL)
            )));
        }
        let mut resid_y: Vec<f64> = sample.units().iter().map(|&i| data.y(i)).collect();
        qr.project_out(&mut resid_y);
        Ok(RegStatistic { qr, resid_y })
    }
}

impl PairedStatistic for RegStatistic {
    fn name(&self) -> &'static str {
        "reg"
    }

    fn evaluate(&self, z: &[bool]) -> Result<f64> {
        if z.len() != self.resid_y.len() {
            return Err(Error::contract("assignment length differs from matched sample"));
        }
        let mut rz: Vec<f64> = z.iter().map(|&t| if t { 0.5 } else { -0.5 }).collect();
        let total = 0.25 * rz.len() as f64;
        self.qr.project_out(&mut rz);
        let den: f64 = rz.iter().map(|v| v * v).sum();
        if den <= SINGULAR_PIVOT_RTOL * SINGULAR_PIVOT_RTOL * total {
            return Err(Error::SingularDesign(
                "assignment lies in the covariate span".into(),
            ));
        }
        let num: f64 = rz.iter().zip(&self.resid_y).map(|(a, b)| a * b).sum();
        Ok(num / den)
    }
}

/// Which registered statistic to use.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StatisticKind {
    Dm,
    Reg { spec: FeatureSpec },
}

impl StatisticKind {
    pub fn reg_baseline() -> Self {
        StatisticKind::Reg {
            spec: FeatureSpec::baseline(),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            StatisticKind::Dm => "dm",
            StatisticKind::Reg { .. } => "reg",
        }
    }

    pub fn build<'s>(&self, sample: &MatchedSample<'_>) -> Result<Box<dyn PairedStatistic + 's>> {
        Ok(match self {
            StatisticKind::Dm => Box::new(DmStatistic::new(sample)),
            StatisticKind::Reg { spec } => Box::new(RegStatistic::new(sample, spec)?),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RandomizationResult {
    pub statistic: String,
    pub mode: Mode,
    pub alpha: f64,
    pub n_pairs: usize,
    /// `None` when the matched set is undefined.
    pub tau_obs: Option<f64>,
    #[serde(skip)]
    pub draws: Vec<f64>,
    pub p_value: f64,
    /// `q̂_{1-α}` of `|τ*|`; `None` without draws.
    pub critical_value: Option<f64>,
    pub degenerate: bool,
}

impl RandomizationResult {
    /// The `p̂ = 1` answer for an undefined matched set.
    pub fn degenerate(statistic: &str, mode: Mode, alpha: f64) -> Self {
        RandomizationResult {
            statistic: statistic.to_string(),
            mode,
            alpha,
            n_pairs: 0,
            tau_obs: None,
            draws: Vec::new(),
            p_value: 1.0,
            critical_value: None,
            degenerate: true,
        }
    }

    pub fn rejects(&self) -> bool {
        self.p_value < self.alpha
    }
}

fn at_least(draw: f64, observed: f64) -> bool {
    draw.abs() >= observed.abs() * (1.0 - TIE_RTOL)
}

/// Randomization p-value of `tau_obs` against `draws`.
pub fn pvalue_from_draws(tau_obs: f64, draws: &[f64], mode: Mode) -> f64 {
    let count = draws.iter().filter(|&&t| at_least(t, tau_obs)).count();
    match mode {
        Mode::Exhaustive => count as f64 / draws.len() as f64,
        Mode::Sampled { .. } => (1 + count) as f64 / (draws.len() + 1) as f64,
    }
}

/// `inf { t : (1/m) #{|τ*_b| ≤ t} ≥ 1 - α }`.
pub fn critical_value(draws: &[f64], alpha: f64) -> Option<f64> {
    if draws.is_empty() {
        return None;
    }
    let mut abs: Vec<f64> = draws.iter().map(|t| t.abs()).collect();
    abs.sort_by(f64::total_cmp);
    let m = abs.len();
    let target = 1.0 - alpha;
    let k = (1..=m).find(|&k| k as f64 / m as f64 >= target).unwrap_or(m);
    Some(abs[k - 1])
}

fn validate_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(Error::contract(format!("alpha must lie in (0, 1), got {alpha}")))
    }
}

/// Runs the paired randomization test of `statistic` on a matched sample.
pub fn randomization_pvalue(
    sample: &MatchedSample<'_>,
    statistic: &dyn PairedStatistic,
    mode: Mode,
    alpha: f64,
) -> Result<RandomizationResult> {
    validate_alpha(alpha)?;
    let n_pairs = sample.n_pairs();
    let tau_obs = statistic.evaluate(&sample.observed())?;
    let draws: Vec<f64> = match mode {
        Mode::Exhaustive => {
            if n_pairs > MAX_EXHAUSTIVE_PAIRS {
                return Err(Error::ExhaustiveTooLarge {
                    pairs: n_pairs,
                    max: MAX_EXHAUSTIVE_PAIRS,
                });
            }
            (0u64..1 << n_pairs)
                .into_par_iter()
                .map(|mask| {
                    let flips: Vec<bool> = (0..n_pairs).map(|p| mask >> p & 1 == 1).collect();
                    statistic.evaluate(&sample.from_flips(&flips))
                })
                .collect::<Result<_>>()?
        }
        Mode::Sampled { b, seed } => {
            if b == 0 {
                return Err(Error::contract("sampled mode needs at least one permutation"));
            }
            (0..b as u64)
                .into_par_iter()
                .map(|k| {
                    let mut stream = rng::substream(seed, k);
                    statistic.evaluate(&permute_within_pairs(sample, &mut stream))
                })
                .collect::<Result<_>>()?
        }
    };
    Ok(RandomizationResult {
        statistic: statistic.name().to_string(),
        mode,
        alpha,
        n_pairs,
        tau_obs: Some(tau_obs),
        p_value: pvalue_from_draws(tau_obs, &draws, mode),
        critical_value: critical_value(&draws, alpha),
        draws,
        degenerate: false,
    })
}

/// Matches `dataset` optimally and tests the sharp null. An undefined matched
/// set or a degenerate statistic yields `p̂ = 1`.
pub fn randomization_test(
    dataset: &Dataset,
    metric: &Metric,
    statistic: &StatisticKind,
    mode: Mode,
    alpha: f64,
) -> Result<RandomizationResult> {
    validate_alpha(alpha)?;
    let pairs = match optimal_pair_match(dataset, metric) {
        Ok(p) => p,
        Err(Error::DegenerateDesign(_)) => {
            return Ok(RandomizationResult::degenerate(statistic.name(), mode, alpha))
        }
        Err(e) => return Err(e),
    };
    test_matched(dataset, &pairs, statistic, mode, alpha)
}

/// As [`randomization_test`] for an existing pairing.
pub fn test_matched(
    dataset: &Dataset,
    pairs: &PairMatching,
    statistic: &StatisticKind,
    mode: Mode,
    alpha: f64,
) -> Result<RandomizationResult> {
    if pairs.n_treated() == 0 {
        return Ok(RandomizationResult::degenerate(statistic.name(), mode, alpha));
    }
    let sample = MatchedSample::new(dataset, pairs);
    let outcome = statistic
        .build(&sample)
        .and_then(|s| randomization_pvalue(&sample, s.as_ref(), mode, alpha));
    match outcome {
        Err(Error::SingularDesign(_)) => {
            let mut r = RandomizationResult::degenerate(statistic.name(), mode, alpha);
            r.n_pairs = sample.n_pairs();
            Ok(r)
        }
        other => other,
    }
}
