//! Data-generating processes under the sharp null, with an optional local
//! misspecification `h_nᵀ g(X)`, `h_n = c/√n`, added to both potential
//! outcomes.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::estimators::Basis;

/// Treatment model `e(x)` of a [`LinearModel`]; both depend on `x₁` only.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Propensity {
    /// `min(cap, 1/(1 + exp(offset - slope·x₁)))`.
    Logistic { offset: f64, slope: f64, cap: f64 },
    /// `base + amplitude·(1 + cos(π x₁))/2`.
    Cosine { base: f64, amplitude: f64 },
}

impl Propensity {
    fn eval(&self, x1: f64) -> f64 {
        match *self {
            Propensity::Logistic { offset, slope, cap } => {
                (1.0 / (1.0 + (offset - slope * x1).exp())).min(cap)
            }
            Propensity::Cosine { base, amplitude } => base + amplitude * (1.0 + (PI * x1).cos()) / 2.0,
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match *self {
            Propensity::Logistic { offset, slope, cap } => {
                offset.is_finite() && slope.is_finite() && cap > 0.0 && cap <= 1.0
            }
            Propensity::Cosine { base, amplitude } => {
                base >= 0.0 && amplitude >= 0.0 && base + amplitude <= 1.0
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("propensity {self:?} leaves [0, 1]")))
        }
    }
}

/// `X ~ Uniform([-1, 1]^d)`, `Y = intercept + βᵀX + σ·N(0, 1)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinearModel {
    pub d: usize,
    pub propensity: Propensity,
    #[serde(default)]
    pub intercept: f64,
    pub beta: Vec<f64>,
    pub sigma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "snake_case", deny_unknown_fields)]
pub enum Model {
    /// `X ~ U(0, 1)`, `Z | X ~ Bern(θ₀ + θ₁X)`, `Y ~ N(β₀ + β₁X, σ²)`.
    Example1 {
        theta0: f64,
        theta1: f64,
        beta0: f64,
        beta1: f64,
        sigma: f64,
    },
    /// `X ~ U(unit disc)`, `Z | X ~ Bern(0.35(1 + θᵀX))`, `Y ~ N(θᵀX, σ²)`.
    Example2 { theta: [f64; 2], sigma: f64 },
    /// `X ~ U([-1, 1]⁴)`, `e(x) = 1/(1 + exp(1.1 - x₁))`, `Y ~ N(3x₁, 1)`.
    Example4,
    /// Units come in twin blocks sharing `X` on a grid of `levels` values per
    /// coordinate in [0, 1]; with probability `0.2 + 0.6·x₁` one twin, chosen
    /// at random, is treated. `Y = 2 Σ x_j + N(0, 1)`.
    ExactMatchNull { d: usize, levels: usize },
    Linear(LinearModel),
}

/// `h_n = c/√n` on the components of `basis`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LocalMisspec {
    pub basis: Basis,
    pub c: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DgpSpec {
    pub model: Model,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub local_misspec: Option<LocalMisspec>,
}

/// Per-unit quantities known only to the simulator.
#[derive(Debug, Clone, PartialEq)]
pub struct Truth {
    pub propensity: Vec<f64>,
    pub mu: Vec<f64>,
    pub y0: Vec<f64>,
    pub y1: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct Sample {
    pub dataset: Dataset,
    pub truth: Truth,
}

fn example4() -> LinearModel {
    LinearModel {
        d: 4,
        propensity: Propensity::Logistic {
            offset: 1.1,
            slope: 1.0,
            cap: 1.0,
        },
        intercept: 0.0,
        beta: vec![3.0, 0.0, 0.0, 0.0],
        sigma: 1.0,
    }
}

impl DgpSpec {
    pub fn new(model: Model) -> Self {
        DgpSpec {
            model,
            local_misspec: None,
        }
    }

    pub fn with_misspec(mut self, basis: Basis, c: Vec<f64>) -> Self {
        self.local_misspec = Some(LocalMisspec { basis, c });
        self
    }

    pub fn dim(&self) -> usize {
        match &self.model {
            Model::Example1 { .. } => 1,
            Model::Example2 { .. } => 2,
            Model::Example4 => 4,
            Model::ExactMatchNull { d, .. } => *d,
            Model::Linear(m) => m.d,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        match &self.model {
            Model::Example1 {
                theta0,
                theta1,
                sigma,
                ..
            } => {
                let (lo, hi) = (theta0.min(theta0 + theta1), theta0.max(theta0 + theta1));
                if !(lo >= 0.0 && hi <= 1.0) {
                    return bad(format!(
                        "example1 propensity θ₀ + θ₁x leaves [0, 1] (θ₀ = {theta0}, θ₁ = {theta1})"
                    ));
                }
                if !(*sigma > 0.0) {
                    return bad("example1 needs σ > 0".into());
                }
            }
            Model::Example2 { theta, sigma } => {
                if !(theta[0].hypot(theta[1]) <= 1.0) {
                    return bad("example2 needs θ in the unit disc".into());
                }
                if !(*sigma > 0.0) {
                    return bad("example2 needs σ > 0".into());
                }
            }
            Model::Example4 => {}
            Model::ExactMatchNull { d, levels } => {
                if *d == 0 || *levels < 2 {
                    return bad("exact_match_null needs d ≥ 1 and levels ≥ 2".into());
                }
            }
            Model::Linear(m) => {
                if m.d == 0 || m.beta.len() != m.d {
                    return bad(format!("linear model needs {} = d ≥ 1 coefficients", m.beta.len()));
                }
                if !(m.sigma > 0.0) || !m.intercept.is_finite() || m.beta.iter().any(|b| !b.is_finite()) {
                    return bad("linear model needs finite coefficients and σ > 0".into());
                }
                m.propensity.validate()?;
            }
        }
        if let Some(ms) = &self.local_misspec {
            let k = ms.basis.k(self.dim());
            if ms.c.len() != k || ms.c.iter().any(|v| !v.is_finite()) {
                return bad(format!(
                    "misspecification needs {k} finite coefficients for basis `{}`",
                    ms.basis
                ));
            }
        }
        Ok(())
    }

    fn linear(&self) -> Option<LinearModel> {
        match &self.model {
            Model::Example4 => Some(example4()),
            Model::Linear(m) => Some(m.clone()),
            _ => None,
        }
    }

    /// Exact `e(x)`.
    pub fn propensity(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.dim() || x.iter().any(|v| !v.is_finite()) {
            return Err(Error::contract(format!(
                "expected a finite {}-vector",
                self.dim()
            )));
        }
        let outside = || Error::contract(format!("{x:?} lies outside the covariate support"));
        match &self.model {
            Model::Example1 { theta0, theta1, .. } => {
                if !(0.0..=1.0).contains(&x[0]) {
                    return Err(outside());
                }
                Ok(theta0 + theta1 * x[0])
            }
            Model::Example2 { theta, .. } => {
                if x[0].hypot(x[1]) > 1.0 {
                    return Err(outside());
                }
                Ok(0.35 * (1.0 + theta[0] * x[0] + theta[1] * x[1]))
            }
            Model::ExactMatchNull { .. } => {
                if x.iter().any(|v| !(0.0..=1.0).contains(v)) {
                    return Err(outside());
                }
                Ok((0.2 + 0.6 * x[0]) / 2.0)
            }
            Model::Example4 | Model::Linear(_) => {
                if x.iter().any(|v| !(-1.0..=1.0).contains(v)) {
                    return Err(outside());
                }
                Ok(self.linear().unwrap().propensity.eval(x[0]))
            }
        }
    }

    /// Draws `n` units. Under every model both potential outcomes coincide.
    pub fn sample(&self, n: usize, rng: &mut impl Rng) -> Result<Sample> {
        self.validate()?;
        if n == 0 {
            return Err(Error::contract("sample size must be positive"));
        }
        let d = self.dim();
        let mut xs = Vec::with_capacity(n * d);
        let mut z = Vec::with_capacity(n);
        let mut mu = Vec::with_capacity(n);
        let mut y = Vec::with_capacity(n);
        let mut prop = Vec::with_capacity(n);
        let normal = |rng: &mut _| -> f64 { Rng::sample(rng, StandardNormal) };

        match &self.model {
            Model::Example1 {
                theta0,
                theta1,
                beta0,
                beta1,
                sigma,
            } => {
                for _ in 0..n {
                    let x: f64 = rng.random();
                    let e = theta0 + theta1 * x;
                    let m = beta0 + beta1 * x;
                    xs.push(x);
                    z.push(rng.random::<f64>() < e);
                    prop.push(e);
                    mu.push(m);
                    y.push(m + sigma * normal(rng));
                }
            }
            Model::Example2 { theta, sigma } => {
                for _ in 0..n {
                    let r = rng.random::<f64>().sqrt();
                    let phi = 2.0 * PI * rng.random::<f64>();
                    let x = [r * phi.cos(), r * phi.sin()];
                    let m = theta[0] * x[0] + theta[1] * x[1];
                    let e = 0.35 * (1.0 + m);
                    xs.extend_from_slice(&x);
                    z.push(rng.random::<f64>() < e);
                    prop.push(e);
                    mu.push(m);
                    y.push(m + sigma * normal(rng));
                }
            }
            Model::ExactMatchNull { levels, .. } => {
                let step = 1.0 / (*levels - 1) as f64;
                let mut i = 0;
                while i < n {
                    let x: Vec<f64> = (0..d).map(|_| rng.random_range(0..*levels) as f64 * step).collect();
                    let q = 0.2 + 0.6 * x[0];
                    let m = 2.0 * x.iter().sum::<f64>();
                    let twins = (n - i).min(2);
                    let treated_twin = if twins == 2 && rng.random::<f64>() < q {
                        Some(usize::from(rng.random::<bool>()))
                    } else {
                        None
                    };
                    for t in 0..twins {
                        xs.extend_from_slice(&x);
                        z.push(treated_twin == Some(t));
                        prop.push(if twins == 2 { q / 2.0 } else { 0.0 });
                        mu.push(m);
                        y.push(m + normal(rng));
                    }
                    i += twins;
                }
            }
            Model::Example4 | Model::Linear(_) => {
                let lm = self.linear().unwrap();
                for _ in 0..n {
                    let x: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..=1.0)).collect();
                    let e = lm.propensity.eval(x[0]);
                    let m = lm.intercept + lm.beta.iter().zip(&x).map(|(b, v)| b * v).sum::<f64>();
                    xs.extend_from_slice(&x);
                    z.push(rng.random::<f64>() < e);
                    prop.push(e);
                    mu.push(m);
                    y.push(m + lm.sigma * normal(rng));
                }
            }
        }

        if let Some(ms) = &self.local_misspec {
            let scale = 1.0 / (n as f64).sqrt();
            for i in 0..n {
                let x = &xs[i * d..(i + 1) * d];
                let shift: f64 = ms
                    .c
                    .iter()
                    .enumerate()
                    .map(|(j, c)| c * scale * ms.basis.component(x, j))
                    .sum();
                mu[i] += shift;
                y[i] += shift;
            }
        }

        let dataset = Dataset::from_columns(d, xs, y.clone(), z)?;
        Ok(Sample {
            dataset,
            truth: Truth {
                propensity: prop,
                mu,
                y0: y.clone(),
                y1: y,
            },
        })
    }
}

/// Limit of the matched covariate imbalance in Example 1,
/// `{2(θ₀ + θ₁) - 1}³ / (3θ₁²(2θ₀ + θ₁))`.
pub fn theoretical_delta(theta0: f64, theta1: f64) -> Result<f64> {
    let denom = 3.0 * theta1 * theta1 * (2.0 * theta0 + theta1);
    if theta1 == 0.0 || denom == 0.0 {
        return Err(Error::contract("theoretical Δ needs θ₁ ≠ 0 and 2θ₀ + θ₁ ≠ 0"));
    }
    Ok((2.0 * (theta0 + theta1) - 1.0).powi(3) / denom)
}

/// Bounded basis by name; see [`Basis`].
pub fn bounded_g_library(id: &str) -> Result<Basis> {
    id.parse()
}
