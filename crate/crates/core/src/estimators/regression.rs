//! Weighted least squares with heteroskedasticity-consistent (HC0) sandwich
//! variances.

use nalgebra::DMatrix;
use serde::Serialize;

use super::features::FeatureSpec;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::linalg::{PivotedQr, SINGULAR_PIVOT_RTOL};

/// A fitted `Y ~ ψ_S(X, Z)` regression. Coefficient 0 is the treatment
/// coefficient `τ̂`, followed by intercept, covariates and included `g`
/// components.
#[derive(Debug, Clone)]
pub struct RegressionFit {
    spec: FeatureSpec,
    dim: usize,
    coefficients: Vec<f64>,
    residuals: Vec<f64>,
    weights: Vec<f64>,
    hc_covariance: DMatrix<f64>,
    y_scale: f64,
}

/// Residuals below this fraction of the largest outcome count as an exact fit.
const EXACT_FIT_RTOL: f64 = 1e-12;

/// Serializable summary of a fit.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FitReport {
    pub spec: String,
    pub n_used: usize,
    pub names: Vec<String>,
    pub coefficients: Vec<f64>,
    pub hc_se: Vec<f64>,
    pub t: Vec<f64>,
    pub p: Vec<f64>,
}

impl RegressionFit {
    pub fn spec(&self) -> &FeatureSpec {
        &self.spec
    }

    pub fn tau_hat(&self) -> f64 {
        self.coefficients[0]
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.coefficients
    }

    /// `(γ̂, β̂, ĥ_S)`.
    pub fn other_coefficients(&self) -> &[f64] {
        &self.coefficients[1..]
    }

    /// Unweighted residuals `ε̃_i = Y_i - ψ_iᵀθ̂`, aligned with the index set.
    pub fn residuals(&self) -> &[f64] {
        &self.residuals
    }

    pub fn weights_used(&self) -> &[f64] {
        &self.weights
    }

    /// Rows with positive weight.
    pub fn n_used(&self) -> usize {
        self.weights.iter().filter(|&&w| w > 0.0).count()
    }

    pub fn hc_covariance(&self) -> &DMatrix<f64> {
        &self.hc_covariance
    }

    /// Sandwich variance of coefficient `j`.
    pub fn hc_variance_of(&self, j: usize) -> f64 {
        self.hc_covariance[(j, j)].max(0.0)
    }

    pub fn hc_variance_tau(&self) -> f64 {
        self.hc_variance_of(0)
    }

    /// True when every weighted residual is zero up to rounding, so the
    /// sandwich carries no information.
    pub fn is_exact_fit(&self) -> bool {
        self.residuals
            .iter()
            .zip(&self.weights)
            .all(|(r, &w)| w == 0.0 || r.abs() <= EXACT_FIT_RTOL * self.y_scale)
    }

    /// `τ̂ / σ̂_HC`; infinite or NaN when the variance is zero.
    pub fn t_stat(&self) -> f64 {
        self.tau_hat() / self.hc_variance_tau().sqrt()
    }

    pub fn coefficient_names(&self) -> Vec<String> {
        let mut names = vec!["z".to_string(), "intercept".to_string()];
        names.extend((1..=self.dim).map(|j| format!("x{j}")));
        names.extend(
            self.spec
                .include
                .iter()
                .map(|j| format!("g_{}_{}", self.spec.basis, j + 1)),
        );
        names
    }

    pub fn report(&self) -> FitReport {
        let hc_se: Vec<f64> = (0..self.coefficients.len())
            .map(|j| self.hc_variance_of(j).sqrt())
            .collect();
        let t: Vec<f64> = self.coefficients.iter().zip(&hc_se).map(|(c, s)| c / s).collect();
        let p = t.iter().map(|&t| super::two_sided_normal_p(t)).collect();
        FitReport {
            spec: self.spec.id(),
            n_used: self.n_used(),
            names: self.coefficient_names(),
            coefficients: self.coefficients.clone(),
            hc_se,
            t,
            p,
        }
    }
}

/// Weighted least squares on the rows of `design` plus the sandwich
/// `(ΨᵀWΨ)⁻¹ (Σ w_i² ε̃_i² ψ_i ψ_iᵀ) (ΨᵀWΨ)⁻¹`.
pub(crate) fn fit_matrix(
    design: &DMatrix<f64>,
    y: &[f64],
    weights: &[f64],
) -> Result<(Vec<f64>, Vec<f64>, DMatrix<f64>)> {
    let (m, p) = design.shape();
    let mut scaled = design.clone();
    let mut rhs = Vec::with_capacity(m);
    for i in 0..m {
        let s = weights[i].sqrt();
        scaled.row_mut(i).scale_mut(s);
        rhs.push(s * y[i]);
    }
    let qr = PivotedQr::new(scaled);
    if !qr.is_full_rank(SINGULAR_PIVOT_RTOL) {
        return Err(Error::SingularDesign(format!(
            "{p} columns but numerical rank {} over {m} rows",
            qr.rank(SINGULAR_PIVOT_RTOL)
        )));
    }
    let coef = qr.solve(&rhs);
    let residuals: Vec<f64> = (0..m)
        .map(|i| y[i] - design.row(i).iter().zip(&coef).map(|(a, b)| a * b).sum::<f64>())
        .collect();
    let bread = qr.gram_inverse();
    let mut meat = DMatrix::zeros(p, p);
    for i in 0..m {
        let s = weights[i] * residuals[i];
        if s == 0.0 {
            continue;
        }
        let row = design.row(i);
        let s2 = s * s;
        for a in 0..p {
            let ra = s2 * row[a];
            for b in 0..=a {
                meat[(a, b)] += ra * row[b];
            }
        }
    }
    for a in 0..p {
        for b in 0..a {
            meat[(b, a)] = meat[(a, b)];
        }
    }
    let cov = &bread * meat * &bread;
    Ok((coef, residuals, cov))
}

/// Fits `Y ~ (z - 0.5) + 1 + X + g_S(X)` over `index_set` by weighted least
/// squares. `weights` aligns with `index_set`.
pub fn fit_linear(
    dataset: &Dataset,
    index_set: &[usize],
    weights: &[f64],
    spec: &FeatureSpec,
) -> Result<RegressionFit> {
    fit_linear_with_assignment(dataset, index_set, weights, spec, dataset.treatments())
}

/// As [`fit_linear`], but with treatment indicators taken from `z` (indexed
/// like the dataset) instead of the observed assignment.
pub fn fit_linear_with_assignment(
    dataset: &Dataset,
    index_set: &[usize],
    weights: &[f64],
    spec: &FeatureSpec,
    z: &[bool],
) -> Result<RegressionFit> {
    if weights.len() != index_set.len() {
        return Err(Error::contract(format!(
            "{} weights for {} units",
            weights.len(),
            index_set.len()
        )));
    }
    if z.len() != dataset.len() {
        return Err(Error::contract("assignment length differs from dataset"));
    }
    if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
        return Err(Error::contract("weights must be finite and nonnegative"));
    }
    if !weights.iter().any(|&w| w > 0.0) {
        return Err(Error::contract("all weights are zero"));
    }
    if let Some(&i) = index_set.iter().find(|&&i| i >= dataset.len()) {
        return Err(Error::contract(format!("index {i} out of range")));
    }
    let d = dataset.dim();
    spec.validate(d)?;
    let p = spec.ncols(d);
    let mut design = DMatrix::zeros(index_set.len(), p);
    let mut row = vec![0.0; p];
    let mut y = Vec::with_capacity(index_set.len());
    for (r, &i) in index_set.iter().enumerate() {
        spec.fill_row(dataset.x(i), z[i], &mut row);
        for (c, v) in row.iter().enumerate() {
            design[(r, c)] = *v;
        }
        y.push(dataset.y(i));
    }
    let (coefficients, residuals, hc_covariance) = fit_matrix(&design, &y, weights)?;
    Ok(RegressionFit {
        spec: spec.clone(),
        dim: d,
        coefficients,
        residuals,
        weights: weights.to_vec(),
        hc_covariance,
        y_scale: y.iter().fold(0.0, |m: f64, v| m.max(v.abs())),
    })
}

/// `e₁ᵀ (ΨᵀWΨ)⁻¹ (Σ w_i² ε̃_i² ψ_i ψ_iᵀ) (ΨᵀWΨ)⁻¹ e₁`.
pub fn hc_variance(fit: &RegressionFit) -> f64 {
    fit.hc_variance_tau()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Unit;
    use crate::estimators::features::Basis;
    use rand::{Rng, SeedableRng};

    fn toy() -> Dataset {
        let x = [0.0, 1.0, 2.0, 3.0];
        let z = [true, false, true, false];
        let y = [1.0, 0.5, 3.0, 2.0];
        Dataset::new((0..4).map(|i| Unit::new(vec![x[i]], y[i], z[i])).collect()).unwrap()
    }

    fn random_dataset(rng: &mut impl Rng, n: usize, d: usize) -> Dataset {
        Dataset::new(
            (0..n)
                .map(|_| {
                    let x: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
                    let y = x.iter().sum::<f64>() + (3.0 * x[0]).sin() + rng.random::<f64>();
                    Unit::new(x, y, rng.random_bool(0.4))
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn four_point_sandwich() {
        let data = toy();
        let fit = fit_linear(&data, &[0, 1, 2, 3], &[1.0; 4], &FeatureSpec::baseline()).unwrap();
        let want = [13.0 / 8.0, 5.0 / 16.0, 7.0 / 8.0];
        for (a, b) in fit.coefficients().iter().zip(want) {
            assert!((a - b).abs() < 1e-12);
        }
        for (r, want) in fit.residuals().iter().zip([-0.125, 0.125, 0.125, -0.125]) {
            assert!((r - want).abs() < 1e-12);
        }
        assert!((hc_variance(&fit) - 5.0 / 256.0).abs() < 1e-10);
    }

    #[test]
    fn four_point_weighted_sandwich() {
        let data = toy();
        let fit = fit_linear(&data, &[0, 1, 2, 3], &[1.0, 2.0, 1.0, 3.0], &FeatureSpec::baseline())
            .unwrap();
        assert!((fit.tau_hat() - 27.0 / 17.0).abs() < 1e-12);
        assert!((hc_variance(&fit) - 225.0 / 9826.0).abs() < 1e-10);
    }

    #[test]
    fn noiseless_fit_is_exact() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(40);
        let units = (0..30)
            .map(|i| {
                let x = rng.random_range(-1.0..1.0);
                let z = i % 3 == 0;
                Unit::new(vec![x], 2.0 + 3.0 * x + f64::from(u8::from(z)), z)
            })
            .collect();
        let data = Dataset::new(units).unwrap();
        let idx: Vec<usize> = (0..30).collect();
        let fit = fit_linear(&data, &idx, &[1.0; 30], &FeatureSpec::baseline()).unwrap();
        assert!((fit.tau_hat() - 1.0).abs() < 1e-10);
        assert!(fit.residuals().iter().all(|r| r.abs() < 1e-10));
        assert!(hc_variance(&fit) < 1e-18);
    }

    #[test]
    fn shift_moves_only_intercept_and_scale_is_quadratic() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(41);
        let data = random_dataset(&mut rng, 50, 2);
        let idx: Vec<usize> = (0..50).collect();
        let w = vec![1.0; 50];
        let spec = FeatureSpec::saturated(Basis::Cosine, 2);
        let base = fit_linear(&data, &idx, &w, &spec).unwrap();
        let remap = |f: &dyn Fn(f64) -> f64| {
            Dataset::new(
                (0..data.len())
                    .map(|i| Unit::new(data.x(i).to_vec(), f(data.y(i)), data.is_treated(i)))
                    .collect(),
            )
            .unwrap()
        };
        let shifted = fit_linear(&remap(&|y| y + 7.5), &idx, &w, &spec).unwrap();
        for (j, (a, b)) in base.coefficients().iter().zip(shifted.coefficients()).enumerate() {
            let expect = if j == 1 { 7.5 } else { 0.0 };
            assert!((b - a - expect).abs() < 1e-9);
        }
        let scaled = fit_linear(&remap(&|y| -3.0 * y), &idx, &w, &spec).unwrap();
        assert!((hc_variance(&scaled) - 9.0 * hc_variance(&base)).abs() < 1e-9 * hc_variance(&base));
    }

    /// Residual sum of squares after profiling out (γ, β) at fixed τ, by
    /// normal equations.
    fn profiled_rss(data: &Dataset, idx: &[usize], tau: f64) -> f64 {
        let d = data.dim();
        let x = DMatrix::from_fn(idx.len(), d + 1, |r, c| if c == 0 { 1.0 } else { data.x(idx[r])[c - 1] });
        let y = nalgebra::DVector::from_iterator(
            idx.len(),
            idx.iter().map(|&i| data.y(i) - tau * f64::from(u8::from(data.is_treated(i)))),
        );
        let coef = (x.transpose() * &x).try_inverse().unwrap() * x.transpose() * &y;
        (y - x * coef).norm_squared()
    }

    #[test]
    fn agrees_with_profiled_minimization() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(42);
        for _ in 0..50 {
            let d = rng.random_range(1..4);
            let data = random_dataset(&mut rng, 40, d);
            let idx: Vec<usize> = (0..40).filter(|_| rng.random_bool(0.8)).collect();
            let fit = fit_linear(&data, &idx, &vec![1.0; idx.len()], &FeatureSpec::baseline()).unwrap();
            // the profile is an exact parabola in τ; its vertex is the argmin
            let (a, b, c) = (
                profiled_rss(&data, &idx, -1.0),
                profiled_rss(&data, &idx, 0.0),
                profiled_rss(&data, &idx, 1.0),
            );
            let vertex = (a - c) / (2.0 * (a - 2.0 * b + c));
            assert!((fit.tau_hat() - vertex).abs() < 1e-8, "{} vs {vertex}", fit.tau_hat());
        }
    }

    #[test]
    fn weights_equal_replication() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(43);
        for _ in 0..20 {
            let data = random_dataset(&mut rng, 30, 2);
            let idx: Vec<usize> = (0..30).collect();
            let counts: Vec<u32> = (0..30).map(|_| rng.random_range(0..4)).collect();
            let weights: Vec<f64> = counts.iter().map(|&c| f64::from(c)).collect();
            if weights.iter().filter(|&&w| w > 0.0).count() < 10 {
                continue;
            }
            let spec = FeatureSpec::saturated(Basis::Tanh, 2);
            let weighted = fit_linear(&data, &idx, &weights, &spec).unwrap();
            let replicated: Vec<usize> = idx
                .iter()
                .flat_map(|&i| std::iter::repeat_n(i, counts[i] as usize))
                .collect();
            let flat = fit_linear(&data, &replicated, &vec![1.0; replicated.len()], &spec).unwrap();
            for (a, b) in weighted.coefficients().iter().zip(flat.coefficients()) {
                assert!((a - b).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn weighted_orthogonality_of_residuals() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(44);
        let data = random_dataset(&mut rng, 60, 3);
        let idx: Vec<usize> = (0..60).collect();
        let w: Vec<f64> = (0..60).map(|_| rng.random_range(0..3) as f64).collect();
        let spec = FeatureSpec::saturated(Basis::Bump, 3);
        let fit = fit_linear(&data, &idx, &w, &spec).unwrap();
        let mut row = vec![0.0; spec.ncols(3)];
        let mut dots = vec![0.0; row.len()];
        let mut norms = vec![0.0; row.len()];
        for (r, &i) in idx.iter().enumerate() {
            spec.fill_row(data.x(i), data.is_treated(i), &mut row);
            for c in 0..row.len() {
                dots[c] += w[r] * fit.residuals()[r] * row[c];
                norms[c] += row[c] * row[c];
            }
        }
        for c in 0..row.len() {
            assert!(dots[c].abs() < 1e-8 * norms[c].sqrt());
        }
        assert!(hc_variance(&fit) >= 0.0);
    }

    #[test]
    fn exactly_orthogonal_column_leaves_tau_unchanged() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(45);
        let (m, p) = (40, 3);
        let base = DMatrix::from_fn(m, p, |r, c| match c {
            0 => if r % 3 == 0 { 0.5 } else { -0.5 },
            1 => 1.0,
            _ => rng.random_range(-1.0..1.0),
        });
        let w: Vec<f64> = (0..m).map(|_| rng.random_range(1..4) as f64).collect();
        let y: Vec<f64> = (0..m).map(|_| rng.random::<f64>()).collect();
        // weighted Gram-Schmidt of a random column against the base design
        let mut g: Vec<f64> = (0..m).map(|_| rng.random::<f64>()).collect();
        for _ in 0..2 {
            let qr = PivotedQr::new(DMatrix::from_fn(m, p, |r, c| base[(r, c)] * w[r].sqrt()));
            let mut sg: Vec<f64> = g.iter().zip(&w).map(|(v, wi)| v * wi.sqrt()).collect();
            qr.project_out(&mut sg);
            g = sg.iter().zip(&w).map(|(v, wi)| v / wi.sqrt()).collect();
        }
        let augmented = DMatrix::from_fn(m, p + 1, |r, c| if c < p { base[(r, c)] } else { g[r] });
        let (small, _, _) = fit_matrix(&base, &y, &w).unwrap();
        let (big, _, _) = fit_matrix(&augmented, &y, &w).unwrap();
        assert!((small[0] - big[0]).abs() < 1e-9);
    }

    #[test]
    fn rank_deficiency_is_reported() {
        // every unit treated: the z column is a multiple of the intercept
        let data = Dataset::new(
            (0..10).map(|i| Unit::new(vec![i as f64], 1.0, true)).collect(),
        )
        .unwrap();
        let idx: Vec<usize> = (0..10).collect();
        assert!(matches!(
            fit_linear(&data, &idx, &[1.0; 10], &FeatureSpec::baseline()),
            Err(Error::SingularDesign(_))
        ));
        assert!(fit_linear(&data, &idx, &[0.0; 10], &FeatureSpec::baseline()).is_err());
    }

    #[test]
    fn report_shape() {
        let data = toy();
        let fit = fit_linear(&data, &[0, 1, 2, 3], &[1.0; 4], &FeatureSpec::baseline()).unwrap();
        let rep = fit.report();
        assert_eq!(rep.names, ["z", "intercept", "x1"]);
        assert_eq!(rep.n_used, 4);
        assert!((rep.hc_se[0] - (5.0f64 / 256.0).sqrt()).abs() < 1e-12);
        let json = serde_json::to_string(&rep).unwrap();
        assert!(json.contains("\"spec\":\"baseline\""));
    }
}
