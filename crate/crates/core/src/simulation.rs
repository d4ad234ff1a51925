//! Seeded Monte Carlo harness: replicate sample → match → test, aggregate per
//! sample size, and write plot data.

use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;

use crate::config::{ExperimentConfig, MatchingScheme, Pipeline, RandomizationStatistic};
use crate::data::Dataset;
use crate::dgp::DgpSpec;
use crate::error::{Error, Result};
use crate::estimators::{
    dm_statistic, fit_linear, hc_pvalue, hotelling_t2, select_model, FeatureSpec, Sidedness,
};
use crate::linalg::{build_metric, sample_covariance, Metric};
use crate::matching::{
    covariate_imbalance, match_with_replacement, optimal_pair_match, Matching,
};
use crate::randomization::{test_matched, Mode, StatisticKind};
use crate::rng::{self, purpose};

pub const PLOT_HEADER: &str = "n,mean_abs_bias,reject_rate_dm,reject_rate_reg,reject_rate_hc1,reject_rate_hc2,reject_rate_hc3,agreement_rate,balance_detect_rate";

/// Environment variable holding the worker count.
pub const THREADS_ENV: &str = "MATCHINF_THREADS";

/// Worker count from [`THREADS_ENV`], else the available parallelism.
pub fn threads_from_env() -> Result<usize> {
    match std::env::var(THREADS_ENV) {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(n),
            _ => Err(Error::Config(format!("{THREADS_ENV} must be a positive integer, got `{v}`"))),
        },
        Err(_) => Ok(std::thread::available_parallelism().map_or(1, |n| n.get())),
    }
}

/// Significance level and permutation count shared by every trial.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TestSettings {
    pub alpha: f64,
    pub permutations: usize,
}

/// One end-to-end replication. Tests that could not be computed because the
/// design was degenerate carry `p = 1`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrialRecord {
    pub n: usize,
    pub trial: usize,
    pub seed: u64,
    pub n_treated: usize,
    pub n_control: usize,
    pub degenerate: bool,
    pub tau_dm: Option<f64>,
    /// `τ̂DM` minus the true effect, which is zero under the sharp null.
    pub bias_dm: Option<f64>,
    pub tau_reg: Option<f64>,
    pub p_rand_dm: Option<f64>,
    pub p_rand_reg: Option<f64>,
    /// Baseline, saturated and model-selector HC p-values.
    pub p_hc: Option<[f64; 3]>,
    pub decisions: Option<[bool; 3]>,
    pub selected_spec: Option<String>,
    pub balance_p: Option<f64>,
    pub balance_test_reject: Option<bool>,
    pub total_cost: Option<f64>,
    pub delta_norm: Option<f64>,
}

impl TrialRecord {
    fn empty(n: usize, trial: usize, seed: u64, data: &Dataset) -> Self {
        TrialRecord {
            n,
            trial,
            seed,
            n_treated: data.n_treated(),
            n_control: data.n_control(),
            degenerate: false,
            tau_dm: None,
            bias_dm: None,
            tau_reg: None,
            p_rand_dm: None,
            p_rand_reg: None,
            p_hc: None,
            decisions: None,
            selected_spec: None,
            balance_p: None,
            balance_test_reject: None,
            total_cost: None,
            delta_norm: None,
        }
    }

    fn mark_degenerate(&mut self, pipeline: &Pipeline, alpha: f64) {
        self.degenerate = true;
        for stat in &pipeline.randomization {
            match stat {
                RandomizationStatistic::Dm => self.p_rand_dm = Some(1.0),
                RandomizationStatistic::Reg => self.p_rand_reg = Some(1.0),
            }
        }
        if pipeline.hc.is_some() {
            self.p_hc = Some([1.0; 3]);
            self.decisions = Some([1.0 < alpha; 3]);
        }
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

/// `p = 1` for designs the estimator cannot handle.
fn p_or_one(p: Result<f64>) -> Result<f64> {
    match p {
        Ok(p) => Ok(p),
        Err(Error::SingularDesign(_) | Error::ZeroVariance | Error::DegenerateDesign(_)) => Ok(1.0),
        Err(e) => Err(e),
    }
}

/// Runs a single replication with seed `seed`.
pub fn run_trial(
    spec: &DgpSpec,
    pipeline: &Pipeline,
    n: usize,
    trial: usize,
    seed: u64,
    settings: TestSettings,
) -> Result<TrialRecord> {
    let sample = spec.sample(n, &mut rng::stream(rng::derive_seed(seed, &[purpose::SAMPLE])))?;
    let data = &sample.dataset;
    let mut rec = TrialRecord::empty(n, trial, seed, data);
    let alpha = settings.alpha;

    let metric = match sample_covariance(data) {
        Ok(cov) => build_metric(&cov)?,
        Err(Error::DegenerateDesign(_)) => Metric::identity(data.dim()),
        Err(e) => return Err(e),
    };

    let (index_set, weights): (Vec<usize>, Vec<f64>) = match pipeline.matching {
        MatchingScheme::Pairs => {
            let pairs = match optimal_pair_match(data, &metric) {
                Ok(p) => p,
                Err(Error::DegenerateDesign(_)) => {
                    rec.mark_degenerate(pipeline, alpha);
                    return Ok(rec);
                }
                Err(e) => return Err(e),
            };
            let tau = dm_statistic(data, &pairs);
            rec.tau_dm = Some(tau);
            rec.bias_dm = Some(tau);
            rec.total_cost = Some(pairs.total_cost());
            rec.delta_norm = Some(norm(&covariate_imbalance(data, &pairs)));
            for stat in &pipeline.randomization {
                let (kind, tag) = match stat {
                    RandomizationStatistic::Dm => (StatisticKind::Dm, purpose::RANDOMIZATION_DM),
                    RandomizationStatistic::Reg => (StatisticKind::reg_baseline(), purpose::RANDOMIZATION_REG),
                };
                let mode = if pipeline.exhaustive {
                    Mode::Exhaustive
                } else {
                    Mode::Sampled {
                        b: settings.permutations,
                        seed: rng::derive_seed(seed, &[tag]),
                    }
                };
                let result = test_matched(data, &pairs, &kind, mode, alpha)?;
                match stat {
                    RandomizationStatistic::Dm => rec.p_rand_dm = Some(result.p_value),
                    RandomizationStatistic::Reg => {
                        rec.p_rand_reg = Some(result.p_value);
                        rec.tau_reg = result.tau_obs;
                    }
                }
            }
            let set = pairs.matched_set();
            let w = vec![1.0; set.len()];
            (set, w)
        }
        MatchingScheme::Replacement => {
            let m = match match_with_replacement(
                data,
                &metric,
                rng::derive_seed(seed, &[purpose::TIEBREAK]),
            ) {
                Ok(m) => m,
                Err(Error::DegenerateDesign(_)) => {
                    rec.mark_degenerate(pipeline, alpha);
                    return Ok(rec);
                }
                Err(e) => return Err(e),
            };
            let tau = m
                .pairs()
                .iter()
                .map(|p| data.y(p.treated) - data.y(p.control))
                .sum::<f64>()
                / m.n_treated() as f64;
            rec.tau_dm = Some(tau);
            rec.bias_dm = Some(tau);
            rec.total_cost = Some(m.total_cost());
            rec.delta_norm = Some(norm(&covariate_imbalance(data, &m)));
            let set = m.matched_set();
            let w = set.iter().map(|&i| f64::from(m.weight(i))).collect();
            (set, w)
        }
        MatchingScheme::Unmatched => {
            if data.n_treated() == 0 || data.n_control() == 0 {
                rec.mark_degenerate(pipeline, alpha);
                return Ok(rec);
            }
            ((0..data.len()).collect(), vec![1.0; data.len()])
        }
    };

    if let Some(hc) = &pipeline.hc {
        let d = data.dim();
        let baseline = FeatureSpec::baseline();
        let saturated = FeatureSpec::saturated(hc.basis, d);
        let fit_p = |spec: &FeatureSpec| -> Result<(Option<f64>, f64)> {
            match fit_linear(data, &index_set, &weights, spec) {
                Ok(fit) => Ok((Some(fit.tau_hat()), p_or_one(hc_pvalue(&fit, Sidedness::Two))?)),
                Err(e) => Ok((None, p_or_one(Err(e))?)),
            }
        };
        let (tau1, p1) = fit_p(&baseline)?;
        let (_, p2) = fit_p(&saturated)?;
        let (p3, chosen) = match select_model(data, &index_set, &weights, hc.basis, hc.selection_level) {
            Ok(spec) => (fit_p(&spec)?.1, Some(spec.id())),
            Err(e) => (p_or_one(Err(e))?, None),
        };
        if rec.tau_reg.is_none() {
            rec.tau_reg = tau1;
        }
        rec.p_hc = Some([p1, p2, p3]);
        rec.decisions = Some([p1 < alpha, p2 < alpha, p3 < alpha]);
        rec.selected_spec = chosen;
    }

    if pipeline.balance_check {
        match hotelling_t2(data, &index_set) {
            Ok(h) => {
                rec.balance_p = Some(h.p_value);
                rec.balance_test_reject = Some(h.p_value < pipeline.balance_level);
            }
            Err(Error::SingularDesign(_) | Error::DegenerateDesign(_)) => {}
            Err(e) => return Err(e),
        }
    }
    Ok(rec)
}

/// Aggregates over the `R` trials at one sample size. Rates are `None` when
/// the pipeline does not compute the quantity.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SizeSummary {
    pub n: usize,
    pub trials: usize,
    pub degenerate_trials: usize,
    /// `|mean τ̂DM|` over trials.
    pub mean_abs_bias: Option<f64>,
    pub mean_delta_norm: Option<f64>,
    pub reject_rate_dm: Option<f64>,
    pub reject_rate_reg: Option<f64>,
    pub reject_rate_hc: Option<[f64; 3]>,
    pub agreement_rate: Option<f64>,
    pub balance_detect_rate: Option<f64>,
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (s, c) = values.fold((0.0, 0usize), |(s, c), v| (s + v, c + 1));
    (c > 0).then(|| s / c as f64)
}

fn rate(values: impl Iterator<Item = bool>) -> Option<f64> {
    mean(values.map(|b| f64::from(u8::from(b))))
}

/// Summarizes records in trial order.
pub fn summarize(n: usize, records: &[TrialRecord], alpha: f64) -> SizeSummary {
    let hc = records.iter().all(|r| r.p_hc.is_some()) && !records.is_empty();
    SizeSummary {
        n,
        trials: records.len(),
        degenerate_trials: records.iter().filter(|r| r.degenerate).count(),
        mean_abs_bias: mean(records.iter().filter_map(|r| r.bias_dm)).map(f64::abs),
        mean_delta_norm: mean(records.iter().filter_map(|r| r.delta_norm)),
        reject_rate_dm: rate(records.iter().filter_map(|r| r.p_rand_dm.map(|p| p < alpha))),
        reject_rate_reg: rate(records.iter().filter_map(|r| r.p_rand_reg.map(|p| p < alpha))),
        reject_rate_hc: hc.then(|| {
            let mut out = [0.0; 3];
            for (k, slot) in out.iter_mut().enumerate() {
                *slot = rate(records.iter().map(|r| r.p_hc.unwrap()[k] < alpha)).unwrap();
            }
            out
        }),
        agreement_rate: hc.then(|| {
            rate(records.iter().map(|r| {
                let d = r.decisions.unwrap();
                d[0] == d[1] && d[1] == d[2]
            }))
            .unwrap()
        }),
        balance_detect_rate: rate(records.iter().filter_map(|r| r.balance_test_reject)),
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SimulationReport {
    pub config: ExperimentConfig,
    pub threads: usize,
    pub summaries: Vec<SizeSummary>,
    pub bias_slope: Option<f64>,
    pub records: Vec<TrialRecord>,
}

impl SimulationReport {
    pub fn summary(&self, n: usize) -> Option<&SizeSummary> {
        self.summaries.iter().find(|s| s.n == n)
    }

    pub fn plot_csv(&self) -> String {
        let cell = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());
        let mut out = String::from(PLOT_HEADER);
        out.push('\n');
        for s in &self.summaries {
            let hc = |k: usize| cell(s.reject_rate_hc.map(|r| r[k]));
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{}\n",
                s.n,
                cell(s.mean_abs_bias),
                cell(s.reject_rate_dm),
                cell(s.reject_rate_reg),
                hc(0),
                hc(1),
                hc(2),
                cell(s.agreement_rate),
                cell(s.balance_detect_rate),
            ));
        }
        out
    }

    pub fn write_plot_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        write_text(path.as_ref(), &self.plot_csv())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        write_text(path.as_ref(), &self.to_json()?)
    }
}

pub(crate) fn write_text(path: &Path, text: &str) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))
}

/// Seed of trial `trial` at sample size `n`.
pub fn trial_seed(master: u64, n: usize, trial: usize) -> u64 {
    rng::derive_seed(master, &[n as u64, trial as u64])
}

/// Runs `R` trials per sample size on a pool of `threads` workers. Output is
/// independent of `threads`.
pub fn run_experiment(config: &ExperimentConfig, threads: usize) -> Result<SimulationReport> {
    config.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let settings = TestSettings {
        alpha: config.alpha,
        permutations: config.permutations,
    };
    let jobs: Vec<(usize, usize)> = config
        .sample_sizes
        .iter()
        .flat_map(|&n| (0..config.replications).map(move |t| (n, t)))
        .collect();
    let records: Vec<TrialRecord> = pool.install(|| {
        jobs.par_iter()
            .map(|&(n, t)| {
                run_trial(
                    &config.dgp,
                    &config.pipeline,
                    n,
                    t,
                    trial_seed(config.seed, n, t),
                    settings,
                )
            })
            .collect::<Result<_>>()
    })?;
    let summaries: Vec<SizeSummary> = config
        .sample_sizes
        .iter()
        .enumerate()
        .map(|(k, &n)| {
            let chunk = &records[k * config.replications..(k + 1) * config.replications];
            summarize(n, chunk, config.alpha)
        })
        .collect();
    let mut report = SimulationReport {
        config: config.clone(),
        threads: threads.max(1),
        summaries,
        bias_slope: None,
        records,
    };
    report.bias_slope = bias_slope(&report).ok();
    Ok(report)
}

/// Least-squares slope of `ln y` on `ln n`.
pub fn log_log_slope(points: &[(usize, f64)]) -> Result<f64> {
    if points.len() < 2 {
        return Err(Error::contract("a slope needs at least two sample sizes"));
    }
    if points.iter().any(|&(n, y)| n == 0 || !(y > 0.0)) {
        return Err(Error::contract("log-log slope needs positive sizes and biases"));
    }
    let xs: Vec<f64> = points.iter().map(|&(n, _)| (n as f64).ln()).collect();
    let ys: Vec<f64> = points.iter().map(|&(_, y)| y.ln()).collect();
    let mx = xs.iter().sum::<f64>() / xs.len() as f64;
    let my = ys.iter().sum::<f64>() / ys.len() as f64;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::contract("a slope needs at least two distinct sample sizes"));
    }
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    Ok(sxy / sxx)
}

/// Slope of `ln(mean |bias|)` on `ln n` across the report's sample sizes.
pub fn bias_slope(report: &SimulationReport) -> Result<f64> {
    let points: Vec<(usize, f64)> = report
        .summaries
        .iter()
        .map(|s| {
            s.mean_abs_bias
                .map(|b| (s.n, b))
                .ok_or_else(|| Error::contract(format!("no bias recorded at n = {}", s.n)))
        })
        .collect::<Result<_>>()?;
    log_log_slope(&points)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModelDependence {
    pub n: usize,
    pub agreement_rate: f64,
    pub reject_rate_hc: [f64; 3],
}

/// Agreement `P(φ¹ = φ² = φ³)` and per-strategy Type I error at each size.
pub fn model_dependence_experiment(config: &ExperimentConfig, threads: usize) -> Result<Vec<ModelDependence>> {
    if config.pipeline.hc.is_none() {
        return Err(Error::Config("model dependence needs `pipeline.hc`".into()));
    }
    if config.dgp.local_misspec.is_none() {
        return Err(Error::Config("model dependence needs `dgp.local_misspec`".into()));
    }
    let report = run_experiment(config, threads)?;
    Ok(report
        .summaries
        .iter()
        .map(|s| ModelDependence {
            n: s.n,
            agreement_rate: s.agreement_rate.unwrap(),
            reject_rate_hc: s.reject_rate_hc.unwrap(),
        })
        .collect())
}
