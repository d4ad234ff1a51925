//! Matched-sample statistics, robust regression p-values, model selection and
//! balance diagnostics.

pub mod balance;
pub mod features;
pub mod regression;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

pub use balance::{hotelling_t2, HotellingResult};
pub use features::{Basis, FeatureSpec};
pub use regression::{
    fit_linear, fit_linear_with_assignment, hc_variance, FitReport, RegressionFit,
};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::matching::{Matching, PairMatching};

/// Level of the per-component tests in [`select_model`].
pub const DEFAULT_SELECTION_LEVEL: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sidedness {
    /// Upper tail, `1 - Φ(t)`.
    One,
    Two,
}

fn std_normal() -> Normal {
    Normal::standard()
}

pub(crate) fn two_sided_normal_p(t: f64) -> f64 {
    if t.is_nan() {
        return f64::NAN;
    }
    (2.0 * std_normal().cdf(-t.abs())).min(1.0)
}

/// `τ̂DM = (1/N1) Σ (Y_i - Y_{m(i)})` over matched pairs.
pub fn dm_statistic(dataset: &Dataset, pairs: &PairMatching) -> f64 {
    let p = pairs.pairs();
    if p.is_empty() {
        return 0.0;
    }
    p.iter()
        .map(|m| dataset.y(m.treated) - dataset.y(m.control))
        .sum::<f64>()
        / p.len() as f64
}

/// Normal-reference p-value for `τ̂ / σ̂_HC`.
pub fn hc_pvalue(fit: &RegressionFit, sidedness: Sidedness) -> Result<f64> {
    let var = fit.hc_variance_tau();
    if !(var > 0.0) || fit.is_exact_fit() {
        return Err(Error::ZeroVariance);
    }
    let t = fit.tau_hat() / var.sqrt();
    Ok(match sidedness {
        Sidedness::Two => two_sided_normal_p(t),
        Sidedness::One => std_normal().cdf(-t),
    })
}

/// Fits the saturated model and keeps the components of `g` whose two-sided
/// HC z-test has `p ≤ level`, in one pass.
pub fn select_model(
    dataset: &Dataset,
    index_set: &[usize],
    weights: &[f64],
    basis: Basis,
    level: f64,
) -> Result<FeatureSpec> {
    let d = dataset.dim();
    let saturated = FeatureSpec::saturated(basis, d);
    if saturated.include.is_empty() {
        return Ok(FeatureSpec::baseline());
    }
    let fit = fit_linear(dataset, index_set, weights, &saturated)?;
    let first_g = 2 + d;
    let keep = saturated
        .include
        .iter()
        .enumerate()
        .filter(|&(pos, _)| {
            let j = first_g + pos;
            let var = fit.hc_variance_of(j);
            var > 0.0 && two_sided_normal_p(fit.coefficients()[j] / var.sqrt()) <= level
        })
        .map(|(_, &c)| c)
        .collect::<Vec<_>>();
    if keep.is_empty() {
        return Ok(FeatureSpec::baseline());
    }
    Ok(FeatureSpec::with_components(basis, keep))
}
