//! Matching-based causal inference: optimal pair matching, randomization and
//! heteroskedasticity-robust tests, data generators and a Monte Carlo harness.

pub mod config;
pub mod data;
pub mod dgp;
pub mod error;
pub mod estimators;
pub mod linalg;
pub mod matching;
pub mod presets;
pub mod randomization;
pub mod rng;
pub mod simulation;

pub use error::{Error, Result};
