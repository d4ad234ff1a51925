//! Two-sample Hotelling T² balance check.

use nalgebra::{DMatrix, DVector};
use statrs::distribution::{ContinuousCDF, FisherSnedecor};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::linalg::spd_inverse;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HotellingResult {
    pub statistic: f64,
    pub p_value: f64,
}

/// Compares treated and control covariate means within `index_set` with the
/// pooled-covariance two-sample T², referred to `F(d, n₁ + n₀ - d - 1)`.
pub fn hotelling_t2(dataset: &Dataset, index_set: &[usize]) -> Result<HotellingResult> {
    let d = dataset.dim();
    let (treated, control): (Vec<usize>, Vec<usize>) =
        index_set.iter().partition(|&&i| dataset.is_treated(i));
    let (n1, n0) = (treated.len(), control.len());
    if n1 == 0 || n0 == 0 {
        return Err(Error::DegenerateDesign(
            "Hotelling T² needs both groups present".into(),
        ));
    }
    let df2 = (n1 + n0) as f64 - d as f64 - 1.0;
    if d == 0 || df2 <= 0.0 {
        return Err(Error::DegenerateDesign(format!(
            "too few units ({}) for a {d}-dimensional T² test",
            n1 + n0
        )));
    }

    let mean = |idx: &[usize]| {
        let mut m = DVector::zeros(d);
        for &i in idx {
            m += DVector::from_column_slice(dataset.x(i));
        }
        m / idx.len() as f64
    };
    let (m1, m0) = (mean(&treated), mean(&control));
    let mut pooled = DMatrix::zeros(d, d);
    for (idx, m) in [(&treated, &m1), (&control, &m0)] {
        for &i in idx.iter() {
            let c = DVector::from_column_slice(dataset.x(i)) - m;
            pooled += &c * c.transpose();
        }
    }
    pooled /= (n1 + n0 - 2) as f64;
    let inv = spd_inverse(&pooled)
        .ok_or_else(|| Error::SingularDesign("pooled covariance is singular".into()))?;
    let diff = m1 - m0;
    let scale = (n1 * n0) as f64 / (n1 + n0) as f64;
    let t2 = scale * (&inv * &diff).dot(&diff);
    let f = df2 / (d as f64 * (n1 + n0 - 2) as f64) * t2;
    let dist = FisherSnedecor::new(d as f64, df2)
        .map_err(|e| Error::contract(format!("F reference: {e}")))?;
    Ok(HotellingResult {
        statistic: t2,
        p_value: dist.sf(f).clamp(0.0, 1.0),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Unit;
    use rand::{Rng, SeedableRng};
    use rand_distr::StandardNormal;

    #[test]
    fn identical_means() {
        let data = Dataset::new(vec![
            Unit::new(vec![0.0, 1.0], 0.0, true),
            Unit::new(vec![2.0, -1.0], 0.0, true),
            Unit::new(vec![1.0, 0.0], 0.0, false),
            Unit::new(vec![0.0, 1.0], 0.0, false),
            Unit::new(vec![2.0, -1.0], 0.0, false),
            Unit::new(vec![1.0, 0.5], 0.0, false),
            Unit::new(vec![1.0, -0.5], 0.0, false),
        ])
        .unwrap();
        let r = hotelling_t2(&data, &(0..7).collect::<Vec<_>>()).unwrap();
        assert!(r.statistic.abs() < 1e-12);
        assert!((r.p_value - 1.0).abs() < 1e-12);
    }

    #[test]
    fn one_dimension_is_squared_pooled_t() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(50);
        for _ in 0..20 {
            let n = rng.random_range(6..30);
            let units: Vec<Unit> = (0..n)
                .map(|i| Unit::new(vec![rng.random::<f64>() + (i % 2) as f64 * 0.3], 0.0, i % 2 == 0))
                .collect();
            let data = Dataset::new(units).unwrap();
            let idx: Vec<usize> = (0..n).collect();
            // pooled two-sample t statistic computed directly
            let g = |t: bool| -> Vec<f64> { idx.iter().filter(|&&i| data.is_treated(i) == t).map(|&i| data.x(i)[0]).collect() };
            let (a, b) = (g(true), g(false));
            let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
            let ss = |v: &[f64]| {
                let m = mean(v);
                v.iter().map(|x| (x - m).powi(2)).sum::<f64>()
            };
            let sp2 = (ss(&a) + ss(&b)) / (a.len() + b.len() - 2) as f64;
            let t = (mean(&a) - mean(&b)) / (sp2 * (1.0 / a.len() as f64 + 1.0 / b.len() as f64)).sqrt();
            let r = hotelling_t2(&data, &idx).unwrap();
            assert!((r.statistic - t * t).abs() < 1e-10 * (1.0 + t * t));
        }
    }

    #[test]
    fn null_rejection_rate_matches_level() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(51);
        let reps = 2000;
        let mut rejects = 0;
        for _ in 0..reps {
            let units: Vec<Unit> = (0..60)
                .map(|i| {
                    let x = (0..3).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
                    Unit::new(x, 0.0, i < 25)
                })
                .collect();
            let data = Dataset::new(units).unwrap();
            if hotelling_t2(&data, &(0..60).collect::<Vec<_>>()).unwrap().p_value < 0.10 {
                rejects += 1;
            }
        }
        let rate = rejects as f64 / reps as f64;
        assert!((rate - 0.10).abs() < 0.02, "rate {rate}");
    }

    #[test]
    fn singular_and_degenerate_inputs() {
        let collinear = Dataset::new(
            (0..8)
                .map(|i| Unit::new(vec![i as f64, 2.0 * i as f64], 0.0, i % 2 == 0))
                .collect(),
        )
        .unwrap();
        let idx: Vec<usize> = (0..8).collect();
        assert!(matches!(hotelling_t2(&collinear, &idx), Err(Error::SingularDesign(_))));
        assert!(matches!(
            hotelling_t2(&collinear, &[0, 2, 4]),
            Err(Error::DegenerateDesign(_))
        ));
    }
}
