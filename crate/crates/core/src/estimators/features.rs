//! Design layouts `ψ_S(x, z) = (z - 0.5, 1, x, g_S(x))` and bounded
//! nonlinear bases `g`.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Bounded nonlinear basis `g : R^d -> R^k`. Every component lies in [-1, 1].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Basis {
    /// `k = 0`.
    None,
    /// `cos(π x_j)` for every coordinate.
    Cosine,
    /// `cos(π x_1)` only.
    Cosine1,
    /// `tanh(2 x_j)` for every coordinate.
    Tanh,
    /// `exp(-4 x_j²)` for every coordinate.
    Bump,
}

impl Basis {
    pub const ALL: [Basis; 5] = [
        Basis::None,
        Basis::Cosine,
        Basis::Cosine1,
        Basis::Tanh,
        Basis::Bump,
    ];

    pub fn id(self) -> &'static str {
        match self {
            Basis::None => "none",
            Basis::Cosine => "cosine",
            Basis::Cosine1 => "cosine1",
            Basis::Tanh => "tanh",
            Basis::Bump => "bump",
        }
    }

    /// Number of components for covariates of dimension `d`.
    pub fn k(self, d: usize) -> usize {
        match self {
            Basis::None => 0,
            Basis::Cosine1 => usize::from(d > 0),
            Basis::Cosine | Basis::Tanh | Basis::Bump => d,
        }
    }

    /// Component `j` of `g(x)`.
    pub fn component(self, x: &[f64], j: usize) -> f64 {
        match self {
            Basis::None => unreachable!("empty basis has no components"),
            Basis::Cosine | Basis::Cosine1 => (PI * x[j]).cos(),
            Basis::Tanh => (2.0 * x[j]).tanh(),
            Basis::Bump => (-4.0 * x[j] * x[j]).exp(),
        }
    }

    pub fn eval(self, x: &[f64]) -> Vec<f64> {
        (0..self.k(x.len())).map(|j| self.component(x, j)).collect()
    }
}

impl fmt::Display for Basis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl FromStr for Basis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Basis::ALL
            .into_iter()
            .find(|b| b.id() == s)
            .ok_or_else(|| {
                let known: Vec<&str> = Basis::ALL.iter().map(|b| b.id()).collect();
                Error::Config(format!("unknown basis `{s}` (known: {})", known.join(", ")))
            })
    }
}

/// Which components of `g` enter the design.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureSpec {
    pub basis: Basis,
    /// Sorted, distinct component indices `S ⊆ [k]`.
    pub include: Vec<usize>,
}

impl FeatureSpec {
    /// `Y ~ 1 + Z + X`.
    pub fn baseline() -> Self {
        FeatureSpec {
            basis: Basis::None,
            include: Vec::new(),
        }
    }

    /// `Y ~ 1 + Z + X + g(X)` with every component of `basis`.
    pub fn saturated(basis: Basis, d: usize) -> Self {
        FeatureSpec {
            basis,
            include: (0..basis.k(d)).collect(),
        }
    }

    pub fn with_components(basis: Basis, mut include: Vec<usize>) -> Self {
        include.sort_unstable();
        include.dedup();
        FeatureSpec { basis, include }
    }

    pub fn validate(&self, d: usize) -> Result<()> {
        let k = self.basis.k(d);
        match self.include.iter().find(|&&j| j >= k) {
            Some(j) => Err(Error::contract(format!(
                "component {j} out of range for basis `{}` with k = {k}",
                self.basis
            ))),
            None => Ok(()),
        }
    }

    /// Number of design columns for covariate dimension `d`.
    pub fn ncols(&self, d: usize) -> usize {
        2 + d + self.include.len()
    }

    /// Short label such as `baseline` or `cosine[0,2]`.
    pub fn id(&self) -> String {
        if self.include.is_empty() {
            return "baseline".into();
        }
        let idx: Vec<String> = self.include.iter().map(usize::to_string).collect();
        format!("{}[{}]", self.basis, idx.join(","))
    }

    /// Writes `ψ_S(x, z)` into `row`.
    pub fn fill_row(&self, x: &[f64], z: bool, row: &mut [f64]) {
        let d = x.len();
        row[0] = if z { 0.5 } else { -0.5 };
        row[1] = 1.0;
        row[2..2 + d].copy_from_slice(x);
        for (slot, &j) in row[2 + d..].iter_mut().zip(&self.include) {
            *slot = self.basis.component(x, j);
        }
    }

    /// Writes `φ_S(x) = (1, x, g_S(x))`, the design without the treatment column.
    pub fn fill_controls(&self, x: &[f64], row: &mut [f64]) {
        let d = x.len();
        row[0] = 1.0;
        row[1..1 + d].copy_from_slice(x);
        for (slot, &j) in row[1 + d..].iter_mut().zip(&self.include) {
            *slot = self.basis.component(x, j);
        }
    }
}
