//! Subcommands of the `matchinf` binary.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use matchinf::config::ExperimentConfig;
use matchinf::data::{load_dataset, Dataset};
use matchinf::linalg::{build_metric, sample_covariance, Metric};
use matchinf::matching::{
    covariate_imbalance, match_with_replacement, optimal_pair_match, write_matching_csv,
};
use matchinf::presets::{self, Scale};
use matchinf::randomization::{randomization_test, Mode, RandomizationResult, StatisticKind};
use matchinf::simulation::{self, run_experiment};
use matchinf::{Error, Result};

pub const EXIT_OK: u8 = 0;
pub const EXIT_USER: u8 = 1;
pub const EXIT_INTERNAL: u8 = 2;

#[derive(Debug, Parser)]
#[command(name = "matchinf", version, about = "Matching, randomization tests and matched-sample simulations")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// Master seed (overrides the config's seed for simulate and reproduce).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads; defaults to $MATCHINF_THREADS, then the core count.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Output file (match, test) or directory (simulate, reproduce).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Print the resolved configuration and exit without writing anything.
    #[arg(long, global = true)]
    pub dry_run: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Match treated units to controls and write the pairs as CSV.
    Match {
        dataset: PathBuf,
        #[arg(long, value_enum, default_value_t = SchemeArg::Pairs)]
        scheme: SchemeArg,
    },
    /// Paired randomization test of the sharp null on the optimal pair match.
    Test {
        dataset: PathBuf,
        #[arg(long, value_enum, default_value_t = StatisticArg::Dm)]
        statistic: StatisticArg,
        /// Enumerate all 2^N1 assignments instead of sampling.
        #[arg(long)]
        exhaustive: bool,
        #[arg(long, default_value_t = matchinf::randomization::DEFAULT_PERMUTATIONS)]
        permutations: usize,
        #[arg(long, default_value_t = 0.05)]
        alpha: f64,
    },
    /// Run a Monte Carlo experiment described by a JSON config.
    Simulate { config: PathBuf },
    /// Run the experiment behind a figure or example id.
    Reproduce {
        id: String,
        #[arg(long, default_value = "desk")]
        scale: String,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SchemeArg {
    Pairs,
    Replacement,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum StatisticArg {
    Dm,
    Reg,
}

/// Result of one command: exit code, a summary line and the files written.
#[derive(Debug, Clone, PartialEq)]
pub struct CommandOutcome {
    pub code: u8,
    pub summary: String,
    pub artifacts: Vec<PathBuf>,
}

impl CommandOutcome {
    fn ok(summary: String, artifacts: Vec<PathBuf>) -> Self {
        CommandOutcome {
            code: EXIT_OK,
            summary,
            artifacts,
        }
    }

    pub fn from_error(err: &Error) -> Self {
        let code = match err {
            Error::Parse { .. }
            | Error::Io { .. }
            | Error::DegenerateDesign(_)
            | Error::ExhaustiveTooLarge { .. }
            | Error::Config(_)
            | Error::Json(_) => EXIT_USER,
            _ => EXIT_INTERNAL,
        };
        CommandOutcome {
            code,
            summary: format!("error: {err}"),
            artifacts: Vec::new(),
        }
    }
}

pub fn run(cli: &Cli) -> CommandOutcome {
    let g = &cli.global;
    let result = match &cli.command {
        Command::Match { dataset, scheme } => cmd_match(dataset, *scheme, g),
        Command::Test {
            dataset,
            statistic,
            exhaustive,
            permutations,
            alpha,
        } => cmd_test(dataset, *statistic, *exhaustive, *permutations, *alpha, g),
        Command::Simulate { config } => ExperimentConfig::load(config).and_then(|c| cmd_simulate(c, g)),
        Command::Reproduce { id, scale } => cmd_reproduce(id, scale, g),
    };
    result.unwrap_or_else(|e| CommandOutcome::from_error(&e))
}

fn full_sample_metric(data: &Dataset) -> Result<Metric> {
    match sample_covariance(data) {
        Ok(cov) => build_metric(&cov),
        Err(Error::DegenerateDesign(_)) => Ok(Metric::identity(data.dim())),
        Err(e) => Err(e),
    }
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n").map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn print_json(value: &impl Serialize) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

#[derive(Debug, Serialize)]
struct MatchSummary<'a> {
    dataset: &'a Path,
    scheme: SchemeArg,
    seed: u64,
    n_treated: usize,
    n_control: usize,
    total_cost: f64,
    imbalance_norm: f64,
    identity_metric_fallback: bool,
}

/// The summary JSON sits beside the matching CSV.
fn summary_path(csv: &Path) -> PathBuf {
    csv.with_extension("json")
}

pub fn cmd_match(dataset: &Path, scheme: SchemeArg, g: &GlobalArgs) -> Result<CommandOutcome> {
    let seed = g.seed.unwrap_or(0);
    let out = g.out.clone().unwrap_or_else(|| PathBuf::from("matching.csv"));
    let data = load_dataset(dataset)?;
    let metric = full_sample_metric(&data)?;
    let (cost, imbalance) = match scheme {
        SchemeArg::Pairs => {
            let m = optimal_pair_match(&data, &metric)?;
            if !g.dry_run {
                write_matching_csv(&m, &out)?;
            }
            (m.total_cost(), covariate_imbalance(&data, &m))
        }
        SchemeArg::Replacement => {
            let m = match_with_replacement(&data, &metric, seed)?;
            if !g.dry_run {
                write_matching_csv(&m, &out)?;
            }
            (m.total_cost(), covariate_imbalance(&data, &m))
        }
    };
    let summary = MatchSummary {
        dataset,
        scheme,
        seed,
        n_treated: data.n_treated(),
        n_control: data.n_control(),
        total_cost: cost,
        imbalance_norm: imbalance.iter().map(|v| v * v).sum::<f64>().sqrt(),
        identity_metric_fallback: metric.used_identity_fallback(),
    };
    let line = format!(
        "N1={} N0={} total_cost={} imbalance_norm={}",
        summary.n_treated, summary.n_control, summary.total_cost, summary.imbalance_norm
    );
    if g.dry_run {
        print_json(&summary)?;
        return Ok(CommandOutcome::ok(line, Vec::new()));
    }
    let json = summary_path(&out);
    write_json(&json, &summary)?;
    Ok(CommandOutcome::ok(line, vec![out, json]))
}

#[derive(Debug, Serialize)]
struct TestReport<'a> {
    dataset: &'a Path,
    result: &'a RandomizationResult,
}

pub fn cmd_test(
    dataset: &Path,
    statistic: StatisticArg,
    exhaustive: bool,
    permutations: usize,
    alpha: f64,
    g: &GlobalArgs,
) -> Result<CommandOutcome> {
    if permutations == 0 {
        return Err(Error::Config("--permutations must be at least 1".into()));
    }
    let out = g.out.clone().unwrap_or_else(|| PathBuf::from("test_report.json"));
    let mode = if exhaustive {
        Mode::Exhaustive
    } else {
        Mode::Sampled {
            b: permutations,
            seed: g.seed.unwrap_or(0),
        }
    };
    let kind = match statistic {
        StatisticArg::Dm => StatisticKind::Dm,
        StatisticArg::Reg => StatisticKind::reg_baseline(),
    };
    let data = load_dataset(dataset)?;
    let n_pairs = data.n_treated();
    if exhaustive && n_pairs > matchinf::randomization::MAX_EXHAUSTIVE_PAIRS && n_pairs <= data.n_control() {
        return Err(Error::ExhaustiveTooLarge {
            pairs: n_pairs,
            max: matchinf::randomization::MAX_EXHAUSTIVE_PAIRS,
        });
    }
    if g.dry_run {
        print_json(&serde_json::json!({
            "dataset": dataset,
            "statistic": statistic,
            "mode": mode,
            "alpha": alpha,
        }))?;
        return Ok(CommandOutcome::ok("dry run".into(), Vec::new()));
    }
    let metric = full_sample_metric(&data)?;
    let result = randomization_test(&data, &metric, &kind, mode, alpha)?;
    write_json(&out, &TestReport { dataset, result: &result })?;
    let tau = result.tau_obs.map_or("undefined".to_string(), |t| t.to_string());
    let line = format!(
        "{} pairs={} tau={} p={}{}",
        result.statistic,
        result.n_pairs,
        tau,
        result.p_value,
        if result.degenerate { " (degenerate design)" } else { "" }
    );
    Ok(CommandOutcome::ok(line, vec![out]))
}

fn resolve_threads(g: &GlobalArgs) -> Result<usize> {
    match g.threads {
        Some(0) => Err(Error::Config("--threads must be at least 1".into())),
        Some(t) => Ok(t),
        None => simulation::threads_from_env(),
    }
}

pub fn cmd_simulate(mut config: ExperimentConfig, g: &GlobalArgs) -> Result<CommandOutcome> {
    if let Some(seed) = g.seed {
        config.seed = seed;
    }
    config.validate()?;
    let threads = resolve_threads(g)?;
    let (report_path, plot_path) = match &g.out {
        Some(dir) => (
            dir.join(format!("{}_report.json", config.name)),
            dir.join(format!("{}_plot.csv", config.name)),
        ),
        None => (
            config
                .output
                .report
                .clone()
                .unwrap_or_else(|| PathBuf::from(format!("{}_report.json", config.name))),
            config
                .output
                .plot
                .clone()
                .unwrap_or_else(|| PathBuf::from(format!("{}_plot.csv", config.name))),
        ),
    };
    if g.dry_run {
        println!("{}", config.to_json());
        return Ok(CommandOutcome::ok("dry run".into(), Vec::new()));
    }
    if let Some(dir) = &g.out {
        std::fs::create_dir_all(dir).map_err(|e| Error::Io {
            path: dir.clone(),
            source: e,
        })?;
    }
    let report = run_experiment(&config, threads)?;
    report.write_plot_csv(&plot_path)?;
    report.write_json(&report_path)?;
    let mut line = format!("{}: {} sizes x {} trials", config.name, report.summaries.len(), config.replications);
    if let Some(slope) = report.bias_slope {
        line.push_str(&format!(", bias slope {slope:.3}"));
    }
    Ok(CommandOutcome::ok(line, vec![report_path, plot_path]))
}

pub fn cmd_reproduce(id: &str, scale: &str, g: &GlobalArgs) -> Result<CommandOutcome> {
    let scale: Scale = scale.parse()?;
    cmd_simulate(presets::preset(id, scale)?, g)
}
