//! Sample covariance, the Mahalanobis metric, and the small dense
//! factorizations used by matching and regression.

use nalgebra::{DMatrix, DVector};

use crate::data::Dataset;
use crate::error::{Error, Result};

/// Relative pivot threshold below which a symmetric matrix is treated as
/// singular.
pub const SINGULAR_PIVOT_RTOL: f64 = 1e-10;

const SYMMETRY_RTOL: f64 = 1e-12;

/// Unbiased covariance of all covariate vectors (divisor `n - 1`).
pub fn sample_covariance(dataset: &Dataset) -> Result<DMatrix<f64>> {
    let n = dataset.len();
    let d = dataset.dim();
    if n < 2 {
        return Err(Error::DegenerateDesign(format!(
            "sample covariance needs at least 2 units, got {n}"
        )));
    }
    let mut mean = vec![0.0; d];
    for i in 0..n {
        for (m, v) in mean.iter_mut().zip(dataset.x(i)) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);

    let mut cov = DMatrix::zeros(d, d);
    let mut centered = vec![0.0; d];
    for i in 0..n {
        for ((c, v), m) in centered.iter_mut().zip(dataset.x(i)).zip(&mean) {
            *c = v - m;
        }
        for a in 0..d {
            for b in 0..=a {
                cov[(a, b)] += centered[a] * centered[b];
            }
        }
    }
    for a in 0..d {
        for b in 0..=a {
            let v = cov[(a, b)] / (n - 1) as f64;
            cov[(a, b)] = v;
            cov[(b, a)] = v;
        }
    }
    Ok(cov)
}

/// Unit-lower-triangular `L` and diagonal `D` with `A = L D Lᵀ`.
#[derive(Debug, Clone)]
pub(crate) struct Ldl {
    pub l: DMatrix<f64>,
    pub d: Vec<f64>,
}

/// LDLᵀ without pivoting. Fails when a pivot drops below
/// `SINGULAR_PIVOT_RTOL` times the largest diagonal entry.
pub(crate) fn ldl_factor(a: &DMatrix<f64>) -> Option<Ldl> {
    let n = a.nrows();
    let max_diag = (0..n).map(|i| a[(i, i)]).fold(0.0_f64, f64::max);
    if !(max_diag > 0.0) {
        return None;
    }
    let tol = SINGULAR_PIVOT_RTOL * max_diag;
    let mut l = DMatrix::identity(n, n);
    let mut d = vec![0.0; n];
    for j in 0..n {
        let mut dj = a[(j, j)];
        for k in 0..j {
            dj -= l[(j, k)] * l[(j, k)] * d[k];
        }
        if !(dj > tol) {
            return None;
        }
        d[j] = dj;
        for i in j + 1..n {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)] * d[k];
            }
            l[(i, j)] = s / dj;
        }
    }
    Some(Ldl { l, d })
}

impl Ldl {
    /// `W = D^{-1/2} L^{-1}`, so that `Wᵀ W = A^{-1}`.
    pub fn whitener(&self) -> DMatrix<f64> {
        let n = self.d.len();
        let mut linv = DMatrix::identity(n, n);
        // forward substitution column by column
        for c in 0..n {
            for i in c + 1..n {
                let mut s = 0.0;
                for k in c..i {
                    s += self.l[(i, k)] * linv[(k, c)];
                }
                linv[(i, c)] = -s;
            }
        }
        for i in 0..n {
            let scale = self.d[i].sqrt().recip();
            for c in 0..n {
                linv[(i, c)] *= scale;
            }
        }
        linv
    }
}

pub(crate) fn check_symmetric(a: &DMatrix<f64>) -> Result<()> {
    if !a.is_square() {
        return Err(Error::contract(format!(
            "matrix must be square, got {}x{}",
            a.nrows(),
            a.ncols()
        )));
    }
    let scale = a.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    let n = a.nrows();
    for i in 0..n {
        for j in 0..i {
            if (a[(i, j)] - a[(j, i)]).abs() > SYMMETRY_RTOL * scale {
                return Err(Error::contract(format!(
                    "matrix is not symmetric at ({i}, {j})"
                )));
            }
        }
    }
    Ok(())
}

/// Inverse covariance used for Mahalanobis distances, or the identity when
/// the covariance is singular.
#[derive(Debug, Clone)]
pub struct Metric {
    inverse: DMatrix<f64>,
    whitener: DMatrix<f64>,
    used_identity_fallback: bool,
}

impl Metric {
    pub fn identity(d: usize) -> Self {
        Metric {
            inverse: DMatrix::identity(d, d),
            whitener: DMatrix::identity(d, d),
            used_identity_fallback: false,
        }
    }

    /// Wraps an explicit positive-definite inverse matrix.
    pub fn from_inverse(inverse: DMatrix<f64>) -> Result<Self> {
        check_symmetric(&inverse)?;
        let ldl = ldl_factor(&inverse)
            .ok_or_else(|| Error::contract("metric matrix must be positive definite"))?;
        // inverse = L D Lᵀ, so the whitener is D^{1/2} Lᵀ
        let n = inverse.nrows();
        let mut whitener = ldl.l.transpose();
        for i in 0..n {
            let s = ldl.d[i].sqrt();
            for c in 0..n {
                whitener[(i, c)] *= s;
            }
        }
        Ok(Metric {
            inverse,
            whitener,
            used_identity_fallback: false,
        })
    }

    pub fn dim(&self) -> usize {
        self.inverse.nrows()
    }

    pub fn inverse_matrix(&self) -> &DMatrix<f64> {
        &self.inverse
    }

    pub fn used_identity_fallback(&self) -> bool {
        self.used_identity_fallback
    }

    /// Maps `x` to coordinates in which the metric is Euclidean.
    pub fn whiten(&self, x: &[f64]) -> Vec<f64> {
        let d = self.dim();
        (0..d)
            .map(|i| (0..d).map(|k| self.whitener[(i, k)] * x[k]).sum())
            .collect()
    }
}

pub fn build_metric(cov: &DMatrix<f64>) -> Result<Metric> {
    check_symmetric(cov)?;
    let d = cov.nrows();
    match ldl_factor(cov) {
        Some(ldl) => {
            let whitener = ldl.whitener();
            let mut inverse = whitener.transpose() * &whitener;
            // enforce exact symmetry
            for i in 0..d {
                for j in 0..i {
                    let v = 0.5 * (inverse[(i, j)] + inverse[(j, i)]);
                    inverse[(i, j)] = v;
                    inverse[(j, i)] = v;
                }
            }
            Ok(Metric {
                inverse,
                whitener,
                used_identity_fallback: false,
            })
        }
        None => Ok(Metric {
            used_identity_fallback: true,
            ..Metric::identity(d)
        }),
    }
}

/// `sqrt((a - b)ᵀ M (a - b))` evaluated directly from the inverse matrix.
pub fn mahalanobis_distance(a: &[f64], b: &[f64], metric: &Metric) -> Result<f64> {
    let d = metric.dim();
    if a.len() != d || b.len() != d {
        return Err(Error::contract(format!(
            "vectors of length {} and {} do not match metric dimension {d}",
            a.len(),
            b.len()
        )));
    }
    let diff = DVector::from_iterator(d, a.iter().zip(b).map(|(p, q)| p - q));
    let q = (metric.inverse_matrix() * &diff).dot(&diff);
    Ok(q.max(0.0).sqrt())
}

/// Householder QR with column-norm pivoting, `A P = Q R`.
///
/// Householder vectors are stored below the diagonal of `qr`; `R` occupies the
/// upper triangle.
#[derive(Debug, Clone)]
pub struct PivotedQr {
    qr: DMatrix<f64>,
    betas: Vec<f64>,
    /// `perm[k]` is the original column in pivoted position `k`.
    perm: Vec<usize>,
}

impl PivotedQr {
    pub fn new(mut a: DMatrix<f64>) -> Self {
        let (m, p) = a.shape();
        let steps = m.min(p);
        let mut perm: Vec<usize> = (0..p).collect();
        let mut betas = vec![0.0; steps];
        for k in 0..steps {
            let (mut best, mut best_norm) = (k, -1.0);
            for j in k..p {
                let norm: f64 = (k..m).map(|i| a[(i, j)] * a[(i, j)]).sum();
                if norm > best_norm {
                    best = j;
                    best_norm = norm;
                }
            }
            if best != k {
                a.swap_columns(k, best);
                perm.swap(k, best);
            }
            let norm = best_norm.sqrt();
            if norm == 0.0 {
                continue;
            }
            let x0 = a[(k, k)];
            let alpha = if x0 >= 0.0 { -norm } else { norm };
            let v0 = x0 - alpha;
            // v = (v0, a[k+1.., k]); store v / v0 so the leading entry is 1
            for i in k + 1..m {
                a[(i, k)] /= v0;
            }
            let vtv: f64 = 1.0 + (k + 1..m).map(|i| a[(i, k)] * a[(i, k)]).sum::<f64>();
            let beta = 2.0 / vtv;
            betas[k] = beta;
            for j in k + 1..p {
                let mut s = a[(k, j)];
                for i in k + 1..m {
                    s += a[(i, k)] * a[(i, j)];
                }
                s *= beta;
                a[(k, j)] -= s;
                for i in k + 1..m {
                    let vik = a[(i, k)];
                    a[(i, j)] -= s * vik;
                }
            }
            a[(k, k)] = alpha;
        }
        PivotedQr { qr: a, betas, perm }
    }

    pub fn ncols(&self) -> usize {
        self.qr.ncols()
    }

    pub fn permutation(&self) -> &[usize] {
        &self.perm
    }

    pub fn r_diagonal(&self) -> Vec<f64> {
        (0..self.betas.len()).map(|k| self.qr[(k, k)]).collect()
    }

    /// Numerical rank with pivots below `rtol * |R₀₀|` treated as zero.
    pub fn rank(&self, rtol: f64) -> usize {
        let diag = self.r_diagonal();
        let lead = diag.first().map_or(0.0, |v| v.abs());
        if lead == 0.0 {
            return 0;
        }
        diag.iter().take_while(|v| v.abs() > rtol * lead).count()
    }

    pub fn is_full_rank(&self, rtol: f64) -> bool {
        self.qr.nrows() >= self.ncols() && self.rank(rtol) == self.ncols()
    }

    /// Overwrites `v` with `Qᵀ v`.
    pub fn apply_qt(&self, v: &mut [f64]) {
        let m = self.qr.nrows();
        for (k, &beta) in self.betas.iter().enumerate() {
            if beta == 0.0 {
                continue;
            }
            let mut s = v[k];
            for i in k + 1..m {
                s += self.qr[(i, k)] * v[i];
            }
            s *= beta;
            v[k] -= s;
            for i in k + 1..m {
                v[i] -= s * self.qr[(i, k)];
            }
        }
    }

    /// Overwrites `v` with `Q v`.
    pub fn apply_q(&self, v: &mut [f64]) {
        let m = self.qr.nrows();
        for (k, &beta) in self.betas.iter().enumerate().rev() {
            if beta == 0.0 {
                continue;
            }
            let mut s = v[k];
            for i in k + 1..m {
                s += self.qr[(i, k)] * v[i];
            }
            s *= beta;
            v[k] -= s;
            for i in k + 1..m {
                v[i] -= s * self.qr[(i, k)];
            }
        }
    }

    /// Residual of `v` after projecting onto the column space (full rank assumed).
    pub fn project_out(&self, v: &mut [f64]) {
        self.apply_qt(v);
        for x in v.iter_mut().take(self.ncols()) {
            *x = 0.0;
        }
        self.apply_q(v);
    }

    /// Least-squares solution of `A β ≈ b` (full rank assumed).
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let p = self.ncols();
        let mut qtb = b.to_vec();
        self.apply_qt(&mut qtb);
        let mut z = vec![0.0; p];
        for k in (0..p).rev() {
            let mut s = qtb[k];
            for j in k + 1..p {
                s -= self.qr[(k, j)] * z[j];
            }
            z[k] = s / self.qr[(k, k)];
        }
        let mut beta = vec![0.0; p];
        for (k, &col) in self.perm.iter().enumerate() {
            beta[col] = z[k];
        }
        beta
    }

    /// `(AᵀA)^{-1}` in the original column order (full rank assumed).
    pub fn gram_inverse(&self) -> DMatrix<f64> {
        let p = self.ncols();
        let mut rinv = DMatrix::zeros(p, p);
        for c in 0..p {
            rinv[(c, c)] = 1.0 / self.qr[(c, c)];
            for i in (0..c).rev() {
                let mut s = 0.0;
                for k in i + 1..=c {
                    s += self.qr[(i, k)] * rinv[(k, c)];
                }
                rinv[(i, c)] = -s / self.qr[(i, i)];
            }
        }
        let pivoted = &rinv * rinv.transpose();
        let mut out = DMatrix::zeros(p, p);
        for i in 0..p {
            for j in 0..p {
                out[(self.perm[i], self.perm[j])] = pivoted[(i, j)];
            }
        }
        out
    }
}

/// Inverse of a symmetric positive-definite matrix via LDLᵀ, or `None` when
/// it is numerically singular.
pub(crate) fn spd_inverse(a: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let w = ldl_factor(a)?.whitener();
    Some(w.transpose() * w)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Unit;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn dataset_from_rows(rows: &[Vec<f64>]) -> Dataset {
        Dataset::new(
            rows.iter()
                .enumerate()
                .map(|(i, x)| Unit::new(x.clone(), 0.0, i % 2 == 0))
                .collect(),
        )
        .unwrap()
    }

    fn random_rows(rng: &mut impl Rng, n: usize, d: usize) -> Vec<Vec<f64>> {
        (0..n)
            .map(|_| (0..d).map(|_| rng.random::<f64>() * 4.0 - 2.0).collect())
            .collect()
    }

    #[test]
    fn identical_covariates_give_zero_covariance() {
        let ds = dataset_from_rows(&vec![vec![1.0, -2.0]; 5]);
        let cov = sample_covariance(&ds).unwrap();
        assert!(cov.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn covariance_of_two_points() {
        let ds = dataset_from_rows(&[vec![0.0], vec![2.0]]);
        let cov = sample_covariance(&ds).unwrap();
        assert_eq!(cov[(0, 0)], 2.0);
    }

    #[test]
    fn covariance_needs_two_units() {
        let ds = dataset_from_rows(&[vec![0.0]]);
        assert!(matches!(
            sample_covariance(&ds),
            Err(Error::DegenerateDesign(_))
        ));
    }

    #[test]
    fn affine_map_transforms_covariance() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let d = rng.random_range(1..5);
            let rows = random_rows(&mut rng, 30, d);
            let a = DMatrix::from_fn(d, d, |_, _| rng.random::<f64>() * 2.0 - 1.0);
            let shift: Vec<f64> = (0..d).map(|_| rng.random::<f64>() * 10.0).collect();
            let mapped: Vec<Vec<f64>> = rows
                .iter()
                .map(|x| {
                    let v = &a * DVector::from_column_slice(x);
                    v.iter().zip(&shift).map(|(p, s)| p + s).collect()
                })
                .collect();
            let s = sample_covariance(&dataset_from_rows(&rows)).unwrap();
            let s_mapped = sample_covariance(&dataset_from_rows(&mapped)).unwrap();
            let expected = &a * s * a.transpose();
            assert!((s_mapped - expected).amax() < 1e-9);
        }
    }

    #[test]
    fn identity_covariance_gives_identity_metric() {
        let m = build_metric(&DMatrix::identity(3, 3)).unwrap();
        assert!(!m.used_identity_fallback());
        assert_eq!(m.inverse_matrix(), &DMatrix::identity(3, 3));
    }

    #[test]
    fn singular_covariance_falls_back_to_identity() {
        let m = build_metric(&DMatrix::zeros(2, 2)).unwrap();
        assert!(m.used_identity_fallback());
        assert_eq!(m.inverse_matrix(), &DMatrix::identity(2, 2));

        let rank_one = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 4.0]);
        assert!(build_metric(&rank_one).unwrap().used_identity_fallback());
    }

    #[test]
    fn diagonal_inverse() {
        let m = build_metric(&DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 8.0]))).unwrap();
        let inv = m.inverse_matrix();
        assert!((inv[(0, 0)] - 0.5).abs() < 1e-12);
        assert!((inv[(1, 1)] - 0.125).abs() < 1e-12);
        assert_eq!(inv[(0, 1)], 0.0);
    }

    #[test]
    fn asymmetric_input_is_rejected() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
        assert!(matches!(build_metric(&a), Err(Error::Contract(_))));
    }

    #[test]
    fn distance_examples() {
        let id = Metric::identity(2);
        assert_eq!(mahalanobis_distance(&[1.0, 2.0], &[1.0, 2.0], &id).unwrap(), 0.0);
        assert!((mahalanobis_distance(&[0.0, 0.0], &[3.0, 4.0], &id).unwrap() - 5.0).abs() < 1e-15);
        let half = Metric::from_inverse(DMatrix::from_diagonal_element(2, 2, 0.5)).unwrap();
        let dist = mahalanobis_distance(&[2.0, 0.0], &[0.0, 0.0], &half).unwrap();
        assert!((dist - 2f64.sqrt()).abs() < 1e-15);
        assert!(mahalanobis_distance(&[1.0], &[1.0, 2.0], &id).is_err());
    }

    #[test]
    fn metric_is_symmetric_psd() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        for _ in 0..20 {
            let d = rng.random_range(1..6);
            let rows = random_rows(&mut rng, 40, d);
            let m = build_metric(&sample_covariance(&dataset_from_rows(&rows)).unwrap()).unwrap();
            let inv = m.inverse_matrix();
            let scale = inv.amax();
            assert!((inv - inv.transpose()).amax() <= 1e-12 * scale);
            let eig = inv.clone().symmetric_eigen();
            assert!(eig.eigenvalues.iter().all(|&l| l >= 0.0));
        }
    }

    #[test]
    fn whitened_distance_matches_quadratic_form() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(10);
        let rows = random_rows(&mut rng, 50, 3);
        let m = build_metric(&sample_covariance(&dataset_from_rows(&rows)).unwrap()).unwrap();
        for pair in rows.windows(2) {
            let (wa, wb) = (m.whiten(&pair[0]), m.whiten(&pair[1]));
            let euclid: f64 = wa.iter().zip(&wb).map(|(p, q)| (p - q).powi(2)).sum::<f64>().sqrt();
            let direct = mahalanobis_distance(&pair[0], &pair[1], &m).unwrap();
            assert!((euclid - direct).abs() < 1e-12 * direct.max(1.0));
        }
    }

    #[test]
    fn distances_invariant_under_linear_maps() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(12);
        for _ in 0..20 {
            let d = rng.random_range(1..5);
            let rows = random_rows(&mut rng, 25, d);
            let a = DMatrix::from_fn(d, d, |i, j| {
                let diag = if i == j { 2.0 } else { 0.0 };
                diag + rng.random::<f64>() - 0.5
            });
            if a.determinant().abs() < 1e-3 {
                continue;
            }
            let mapped: Vec<Vec<f64>> = rows
                .iter()
                .map(|x| (&a * DVector::from_column_slice(x)).iter().copied().collect())
                .collect();
            let m = build_metric(&sample_covariance(&dataset_from_rows(&rows)).unwrap()).unwrap();
            let mm = build_metric(&sample_covariance(&dataset_from_rows(&mapped)).unwrap()).unwrap();
            for i in 0..5 {
                let j = (i * 7 + 3) % rows.len();
                let d1 = mahalanobis_distance(&rows[i], &rows[j], &m).unwrap();
                let d2 = mahalanobis_distance(&mapped[i], &mapped[j], &mm).unwrap();
                assert!((d1 - d2).abs() < 1e-6, "{d1} vs {d2}");
            }
        }
    }

    proptest! {
        #[test]
        fn triangle_inequality(
            seed in any::<u64>(),
            pts in prop::collection::vec(prop::collection::vec(-10.0f64..10.0, 3), 3)
        ) {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let rows = random_rows(&mut rng, 20, 3);
            let m = build_metric(&sample_covariance(&dataset_from_rows(&rows)).unwrap()).unwrap();
            prop_assume!(!m.used_identity_fallback());
            let ab = mahalanobis_distance(&pts[0], &pts[1], &m).unwrap();
            let bc = mahalanobis_distance(&pts[1], &pts[2], &m).unwrap();
            let ac = mahalanobis_distance(&pts[0], &pts[2], &m).unwrap();
            prop_assert!(ac <= ab + bc + 1e-9);
            prop_assert!((ab - mahalanobis_distance(&pts[1], &pts[0], &m).unwrap()).abs() < 1e-12);
        }
    }

    #[test]
    fn qr_solves_least_squares_and_inverts_gram() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(13);
        let a = DMatrix::from_fn(12, 4, |_, _| rng.random::<f64>() - 0.5);
        let b: Vec<f64> = (0..12).map(|_| rng.random::<f64>()).collect();
        let qr = PivotedQr::new(a.clone());
        assert!(qr.is_full_rank(1e-10));
        let beta = qr.solve(&b);
        // normal equations oracle
        let gram = a.transpose() * &a;
        let rhs = a.transpose() * DVector::from_column_slice(&b);
        let direct = gram.clone().lu().solve(&rhs).unwrap();
        for k in 0..4 {
            assert!((beta[k] - direct[k]).abs() < 1e-10);
        }
        let ginv = qr.gram_inverse();
        assert!((&ginv * &gram - DMatrix::identity(4, 4)).amax() < 1e-10);

        let mut r: Vec<f64> = b.clone();
        qr.project_out(&mut r);
        let proj = a.transpose() * DVector::from_column_slice(&r);
        assert!(proj.amax() < 1e-12);
    }

    #[test]
    fn qr_detects_rank_deficiency() {
        let mut a = DMatrix::from_fn(10, 3, |i, j| (i * (j + 1)) as f64 + j as f64);
        let col: Vec<f64> = (0..10).map(|i| 2.0 * a[(i, 0)] - a[(i, 1)]).collect();
        a.set_column(2, &DVector::from_vec(col));
        assert!(!PivotedQr::new(a).is_full_rank(1e-10));
    }
}
