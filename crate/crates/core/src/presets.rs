//! Named experiment configurations for the paper's figure and examples.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, HcStrategies, MatchingScheme, OutputPaths, Pipeline, RandomizationStatistic};
use crate::dgp::{DgpSpec, LinearModel, Model, Propensity};
use crate::error::{Error, Result};
use crate::estimators::{Basis, DEFAULT_SELECTION_LEVEL};
use crate::randomization::DEFAULT_PERMUTATIONS;

pub const KNOWN_IDS: [&str; 9] = ["fig1", "ex1", "ex2", "ex3", "thm1", "thm2", "thm3", "prop2", "prop3"];

pub const DEFAULT_SEED: u64 = 20_240_601;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scale {
    /// `R ≤ 500`, `n ≤ 1600` for the figure; minutes on a desktop.
    #[default]
    Desk,
    /// `R = 2000`, `n` up to 2000.
    Paper,
}

impl fmt::Display for Scale {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scale::Desk => "desk",
            Scale::Paper => "paper",
        })
    }
}

impl FromStr for Scale {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "desk" => Ok(Scale::Desk),
            "paper" => Ok(Scale::Paper),
            _ => Err(Error::Config(format!("unknown scale `{s}`, expected desk or paper"))),
        }
    }
}

fn example1(theta0: f64, theta1: f64) -> DgpSpec {
    DgpSpec::new(Model::Example1 {
        theta0,
        theta1,
        beta0: 0.0,
        beta1: 1.0,
        sigma: 1.0,
    })
}

/// Linear baseline in `d = 4` with `e(X) ≤ 0.4`.
fn theorem1_dgp(c1: f64) -> DgpSpec {
    DgpSpec::new(Model::Linear(LinearModel {
        d: 4,
        propensity: Propensity::Cosine { base: 0.1, amplitude: 0.3 },
        intercept: 0.0,
        beta: vec![1.0, 1.0, 0.0, 0.0],
        sigma: 1.0,
    }))
    .with_misspec(Basis::Cosine, vec![c1, 0.0, 0.0, 0.0])
}

fn randomization(stat: RandomizationStatistic) -> Pipeline {
    Pipeline {
        randomization: vec![stat],
        ..Pipeline::new(MatchingScheme::Pairs)
    }
}

fn hc(scheme: MatchingScheme) -> Pipeline {
    Pipeline {
        hc: Some(HcStrategies {
            basis: Basis::Cosine,
            selection_level: DEFAULT_SELECTION_LEVEL,
        }),
        ..Pipeline::new(scheme)
    }
}

fn config(name: &str, dgp: DgpSpec, sample_sizes: Vec<usize>, replications: usize, pipeline: Pipeline) -> ExperimentConfig {
    ExperimentConfig {
        name: name.to_string(),
        dgp,
        sample_sizes,
        replications,
        permutations: DEFAULT_PERMUTATIONS,
        alpha: 0.05,
        seed: DEFAULT_SEED,
        pipeline,
        output: OutputPaths::default(),
    }
}

/// The configuration behind a figure or example id.
pub fn preset(id: &str, scale: Scale) -> Result<ExperimentConfig> {
    let paper = scale == Scale::Paper;
    let reps = |desk: usize| if paper { 2000 } else { desk };
    let single = vec![2000];
    let c = match id {
        "fig1" => {
            let sizes = if paper {
                vec![200, 400, 800, 1200, 1600, 2000]
            } else {
                vec![200, 400, 800, 1600]
            };
            let pipeline = Pipeline {
                balance_check: true,
                ..randomization(RandomizationStatistic::Dm)
            };
            config(id, DgpSpec::new(Model::Example4), sizes, reps(500), pipeline)
        }
        "ex1" => config(id, example1(0.2, 0.5), single, reps(300), randomization(RandomizationStatistic::Dm)),
        "ex2" => config(
            id,
            DgpSpec::new(Model::Example2 { theta: [0.6, 0.8], sigma: 1.0 }),
            single,
            reps(300),
            Pipeline {
                balance_check: true,
                ..randomization(RandomizationStatistic::Dm)
            },
        ),
        "ex3" => config(id, example1(0.2, 0.5), single, reps(300), randomization(RandomizationStatistic::Reg)),
        "prop2" => config(id, example1(0.1, 0.3), single, reps(500), randomization(RandomizationStatistic::Dm)),
        "prop3" => config(
            id,
            DgpSpec::new(Model::Linear(LinearModel {
                d: 4,
                propensity: Propensity::Logistic { offset: 1.1, slope: 1.0, cap: 0.4 },
                intercept: 0.0,
                beta: vec![3.0, 0.0, 0.0, 0.0],
                sigma: 1.0,
            })),
            single,
            reps(500),
            randomization(RandomizationStatistic::Reg),
        ),
        "thm1" | "thm3" => config(id, theorem1_dgp(2.0), single, reps(500), hc(MatchingScheme::Pairs)),
        "thm2" => config(
            id,
            DgpSpec::new(Model::Linear(LinearModel {
                d: 2,
                propensity: Propensity::Logistic { offset: 1.0, slope: 2.0, cap: 1.0 },
                intercept: 0.0,
                beta: vec![1.0, 1.0],
                sigma: 1.0,
            }))
            .with_misspec(Basis::Cosine, vec![2.0, 0.0]),
            single,
            reps(500),
            hc(MatchingScheme::Replacement),
        ),
        _ => {
            return Err(Error::Config(format!(
                "unknown figure id `{id}`; known ids: {}",
                KNOWN_IDS.join(", ")
            )))
        }
    };
    Ok(c)
}

/// The Theorem 1 pipeline on the unmatched full sample with `‖c‖ = 10`.
pub fn unmatched_contrast(scale: Scale) -> ExperimentConfig {
    config(
        "thm1_unmatched",
        theorem1_dgp(10.0),
        vec![2000],
        if scale == Scale::Paper { 2000 } else { 500 },
        hc(MatchingScheme::Unmatched),
    )
}

/// Exact matches on a discrete grid with exhaustive randomization.
pub fn exact_match_null(replications: usize) -> ExperimentConfig {
    config(
        "exact_match_null",
        DgpSpec::new(Model::ExactMatchNull { d: 2, levels: 3 }),
        vec![40],
        replications,
        Pipeline {
            exhaustive: true,
            ..randomization(RandomizationStatistic::Dm)
        },
    )
}
