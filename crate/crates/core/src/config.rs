//! Experiment configuration, loaded from JSON with unknown keys rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dgp::DgpSpec;
use crate::error::{Error, Result};
use crate::estimators::{Basis, DEFAULT_SELECTION_LEVEL};
use crate::randomization::DEFAULT_PERMUTATIONS;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchingScheme {
    /// Optimal pair matching; unweighted analyses on the matched pairs.
    Pairs,
    /// Nearest control with replacement; analyses weighted by multiplicity.
    Replacement,
    /// No matching; analyses on the full sample.
    Unmatched,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RandomizationStatistic {
    Dm,
    Reg,
}

/// The three modeling strategies: baseline, saturated in `basis`, and the
/// one-pass model selector at `selection_level`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HcStrategies {
    pub basis: Basis,
    #[serde(default = "default_selection_level")]
    pub selection_level: f64,
}

fn default_selection_level() -> f64 {
    DEFAULT_SELECTION_LEVEL
}

fn default_balance_level() -> f64 {
    0.10
}

fn default_permutations() -> usize {
    DEFAULT_PERMUTATIONS
}

fn default_alpha() -> f64 {
    0.05
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Pipeline {
    pub matching: MatchingScheme,
    /// Paired randomization tests to run (pair matching only).
    #[serde(default)]
    pub randomization: Vec<RandomizationStatistic>,
    /// Enumerate all `2^N1` assignments instead of sampling.
    #[serde(default)]
    pub exhaustive: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hc: Option<HcStrategies>,
    #[serde(default)]
    pub balance_check: bool,
    #[serde(default = "default_balance_level")]
    pub balance_level: f64,
}

impl Pipeline {
    pub fn new(matching: MatchingScheme) -> Self {
        Pipeline {
            matching,
            randomization: Vec::new(),
            exhaustive: false,
            hc: None,
            balance_check: false,
            balance_level: default_balance_level(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.randomization.is_empty() && self.matching != MatchingScheme::Pairs {
            return Err(Error::Config(
                "randomization tests need `pairs` matching".into(),
            ));
        }
        if let Some(hc) = &self.hc {
            if !(hc.selection_level > 0.0 && hc.selection_level < 1.0) {
                return Err(Error::Config("selection_level must lie in (0, 1)".into()));
            }
        }
        if !(self.balance_level > 0.0 && self.balance_level < 1.0) {
            return Err(Error::Config("balance_level must lie in (0, 1)".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputPaths {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub report: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub plot: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub dgp: DgpSpec,
    pub sample_sizes: Vec<usize>,
    pub replications: usize,
    #[serde(default = "default_permutations")]
    pub permutations: usize,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    pub seed: u64,
    pub pipeline: Pipeline,
    #[serde(default)]
    pub output: OutputPaths,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.replications == 0 {
            return Err(Error::Config("replications must be at least 1".into()));
        }
        if self.permutations == 0 {
            return Err(Error::Config("permutations must be at least 1".into()));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Config(format!("alpha must lie in (0, 1), got {}", self.alpha)));
        }
        if self.sample_sizes.is_empty() || self.sample_sizes.contains(&0) {
            return Err(Error::Config("sample sizes must be a nonempty list of positive counts".into()));
        }
        self.dgp.validate()?;
        self.pipeline.validate()
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let config: ExperimentConfig = serde_json::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("configs always serialize")
    }
}
