//! Standardization onto and off the mean–variance manifold.
//!
//! The manifold `M(0,1)` is the set of length-`n` vectors with zero mean and
//! unit population variance, i.e. the intersection of the zero-mean
//! hyperplane with the sphere of radius `sqrt(n)`. Every column operator in
//! [`crate::operators`] maps this set to itself, which is what makes the
//! de-standardized output keep the input's mean and variance.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default lower clip for the column standard deviation.
pub const DEFAULT_SIGMA_FLOOR: f64 = 1e-8;

/// Default absolute tolerance for "unchanged" points in z-space.
pub const DEFAULT_UNCHANGED_TOL: f64 = 1e-12;

/// A physical-unit column: finite values, at least two of them.
#[derive(Debug, Clone, PartialEq)]
pub struct Column(Vec<f64>);

impl Column {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.len() < 2 {
            return Err(Error::InvalidColumn(format!(
                "need at least 2 values, got {}",
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidColumn(format!(
                "non-finite value {} at index {i}",
                values[i]
            )));
        }
        Ok(Self(values))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ColumnStats {
    pub mu: f64,
    pub sigma: f64,
}

impl ColumnStats {
    /// True when `sigma` sits on the floor rather than the data's spread.
    pub fn is_floored(&self, sigma_floor: f64) -> bool {
        self.sigma <= sigma_floor
    }
}

/// A z-score vector. Not every instance lies on the manifold (a column
/// standardized with foreign stats need not); [`on_manifold`] checks.
#[derive(Debug, Clone, PartialEq)]
pub struct StandardizedColumn(Vec<f64>);

impl StandardizedColumn {
    pub fn from_vec(z: Vec<f64>) -> Self {
        Self(z)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl From<Vec<f64>> for StandardizedColumn {
    fn from(z: Vec<f64>) -> Self {
        Self(z)
    }
}

/// Two-pass mean; the correction term keeps `mean(x - mean(x))` at rounding
/// level even when `|mu| >> sigma`.
pub(crate) fn mean(x: &[f64]) -> f64 {
    let n = x.len() as f64;
    let m0 = x.iter().sum::<f64>() / n;
    m0 + x.iter().map(|v| v - m0).sum::<f64>() / n
}

/// Population variance around a given mean.
pub(crate) fn pop_variance(x: &[f64], mu: f64) -> f64 {
    x.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / x.len() as f64
}

pub(crate) fn rms_norm(z: &[f64]) -> f64 {
    (z.iter().map(|v| v * v).sum::<f64>() / z.len() as f64).sqrt()
}

pub fn column_stats(x: &[f64], sigma_floor: f64) -> Result<ColumnStats> {
    if x.is_empty() {
        return Err(Error::InvalidColumn("empty column".into()));
    }
    if let Some(i) = x.iter().position(|v| !v.is_finite()) {
        return Err(Error::InvalidColumn(format!(
            "non-finite value {} at index {i}",
            x[i]
        )));
    }
    let mu = mean(x);
    let sigma = pop_variance(x, mu).sqrt().max(sigma_floor);
    Ok(ColumnStats { mu, sigma })
}

pub fn standardize(x: &[f64], s: &ColumnStats) -> StandardizedColumn {
    StandardizedColumn(x.iter().map(|v| (v - s.mu) / s.sigma).collect())
}

pub fn destandardize(z: &StandardizedColumn, s: &ColumnStats) -> Vec<f64> {
    z.0.iter().map(|v| s.mu + s.sigma * v).collect()
}

/// Re-center and rescale onto `M(0,1)`.
pub fn project_to_manifold(w: &[f64]) -> Result<StandardizedColumn> {
    if w.len() < 2 {
        return Err(Error::DegenerateInput(format!(
            "cannot project a vector of length {}",
            w.len()
        )));
    }
    let m = mean(w);
    let mut out: Vec<f64> = w.iter().map(|v| v - m).collect();
    let norm = rms_norm(&out);
    if !(norm > 0.0) || !norm.is_finite() {
        return Err(Error::DegenerateInput(
            "centered vector has zero norm".into(),
        ));
    }
    out.iter_mut().for_each(|v| *v /= norm);
    // second pass mops up the rounding left by the first
    let m2 = mean(&out);
    out.iter_mut().for_each(|v| *v -= m2);
    let n2 = rms_norm(&out);
    out.iter_mut().for_each(|v| *v /= n2);
    Ok(StandardizedColumn(out))
}

/// Mean and rms-norm deviation from `M(0,1)`.
pub fn manifold_residual(z: &[f64]) -> (f64, f64) {
    (mean(z).abs(), (rms_norm(z) - 1.0).abs())
}

pub fn on_manifold(z: &[f64], tol: f64) -> bool {
    let (m, r) = manifold_residual(z);
    m <= tol && r <= tol
}

fn check_len(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::ShapeError(format!(
            "length {} vs {}",
            a.len(),
            b.len()
        )));
    }
    Ok(())
}

pub fn linf_delta(z: &[f64], z2: &[f64]) -> Result<f64> {
    check_len(z, z2)?;
    Ok(z.iter()
        .zip(z2)
        .map(|(a, b)| (b - a).abs())
        .fold(0.0, f64::max))
}

pub fn unchanged_fraction(z: &[f64], z2: &[f64], tol: f64) -> Result<f64> {
    check_len(z, z2)?;
    if z.is_empty() {
        return Ok(1.0);
    }
    let same = z
        .iter()
        .zip(z2)
        .filter(|(a, b)| (*b - *a).abs() <= tol)
        .count();
    Ok(same as f64 / z.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn stats_examples() {
        let s = column_stats(&[1.0, 2.0, 3.0], 1e-8).unwrap();
        assert!((s.mu - 2.0).abs() < 1e-15);
        assert!((s.sigma - (2.0f64 / 3.0).sqrt()).abs() < 1e-15);

        let s = column_stats(&[5.0; 4], 1e-8).unwrap();
        assert_eq!(s.mu, 5.0);
        assert_eq!(s.sigma, 1e-8);

        let s = column_stats(&[0.0, 4.0], 1e-8).unwrap();
        assert_eq!((s.mu, s.sigma), (2.0, 2.0));
    }

    #[test]
    fn stats_reject_non_finite() {
        assert!(matches!(
            column_stats(&[1.0, f64::NAN], 1e-8),
            Err(Error::InvalidColumn(_))
        ));
        assert!(Column::new(vec![1.0]).is_err());
        assert!(Column::new(vec![1.0, f64::INFINITY]).is_err());
    }

    #[test]
    fn standardize_examples() {
        let x = [1.0, 2.0, 3.0];
        let z = standardize(&x, &column_stats(&x, 1e-8).unwrap());
        let r = 1.5f64.sqrt();
        for (a, b) in z.as_slice().iter().zip([-r, 0.0, r]) {
            assert!((a - b).abs() < 1e-12);
        }
        let x = [5.0; 4];
        let z = standardize(&x, &column_stats(&x, 1e-8).unwrap());
        assert_eq!(z.as_slice(), &[0.0; 4]);
        let x = [0.0, 4.0];
        let z = standardize(&x, &column_stats(&x, 1e-8).unwrap());
        assert_eq!(z.as_slice(), &[-1.0, 1.0]);
    }

    #[test]
    fn destandardize_examples() {
        let s = ColumnStats {
            mu: 2.0,
            sigma: 2.0,
        };
        assert_eq!(destandardize(&vec![-1.0, 1.0].into(), &s), vec![0.0, 4.0]);
        let s = ColumnStats {
            mu: 7.0,
            sigma: 3.0,
        };
        assert_eq!(destandardize(&vec![0.0; 3].into(), &s), vec![7.0; 3]);
    }

    #[test]
    fn projection_examples() {
        assert_eq!(
            project_to_manifold(&[1.0, 3.0]).unwrap().as_slice(),
            &[-1.0, 1.0]
        );
        assert!(matches!(
            project_to_manifold(&[2.0, 2.0]),
            Err(Error::DegenerateInput(_))
        ));
        let z = project_to_manifold(&[0.3, -1.2, 2.2, 0.1, 5.0]).unwrap();
        let z2 = project_to_manifold(z.as_slice()).unwrap();
        assert!(linf_delta(z.as_slice(), z2.as_slice()).unwrap() <= 1e-12);
    }

    #[test]
    fn delta_examples() {
        assert_eq!(linf_delta(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(linf_delta(&[0.0, 0.0], &[0.3, -0.2]).unwrap(), 0.3);
        assert!(matches!(
            linf_delta(&[0.0], &[0.0, 1.0]),
            Err(Error::ShapeError(_))
        ));
        assert_eq!(
            unchanged_fraction(&[1.0, 2.0], &[1.0, 2.0], 1e-12).unwrap(),
            1.0
        );
        assert_eq!(
            unchanged_fraction(&[1.0, 2.0], &[1.5, 2.5], 1e-12).unwrap(),
            0.0
        );
        assert!(unchanged_fraction(&[1.0], &[1.0, 2.0], 1e-12).is_err());
    }

    #[test]
    fn round_trip_thousand_columns() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let mut worst: f64 = 0.0;
        for _ in 0..1000 {
            let n = rng.gen_range(2..200);
            let loc = rng.gen_range(-500.0..500.0);
            let scale = rng.gen_range(0.01..50.0);
            let x: Vec<f64> = (0..n)
                .map(|_| loc + scale * rng.gen_range(-3.0..3.0))
                .collect();
            let s = column_stats(&x, DEFAULT_SIGMA_FLOOR).unwrap();
            let y = destandardize(&standardize(&x, &s), &s);
            for (a, b) in x.iter().zip(&y) {
                worst = worst.max((a - b).abs() / a.abs().max(1.0));
            }
        }
        assert!(worst <= 1e-10, "worst relative error {worst}");
    }

    fn column_strategy() -> impl Strategy<Value = Vec<f64>> {
        (2usize..2000, -1e3f64..1e3, 1e-2f64..1e2).prop_flat_map(|(n, loc, scale)| {
            proptest::collection::vec(-1.0f64..1.0, n)
                .prop_map(move |v| v.into_iter().map(|u| loc + scale * u).collect())
        })
    }

    proptest! {
        #[test]
        fn standardized_lies_on_manifold(x in column_strategy()) {
            let s = column_stats(&x, DEFAULT_SIGMA_FLOOR).unwrap();
            prop_assume!(!s.is_floored(DEFAULT_SIGMA_FLOOR));
            let z = standardize(&x, &s);
            let (m, r) = manifold_residual(z.as_slice());
            prop_assert!(m <= 1e-12 && r <= 1e-12, "mean {m} norm {r}");
        }

        #[test]
        fn destandardize_inverts(x in column_strategy()) {
            let s = column_stats(&x, DEFAULT_SIGMA_FLOOR).unwrap();
            let y = destandardize(&standardize(&x, &s), &s);
            for (a, b) in x.iter().zip(&y) {
                prop_assert!((a - b).abs() <= 1e-10 * a.abs().max(1.0));
            }
        }

        #[test]
        fn projection_idempotent(w in proptest::collection::vec(-10.0f64..10.0, 2..300)) {
            if let Ok(z) = project_to_manifold(&w) {
                let z2 = project_to_manifold(z.as_slice()).unwrap();
                prop_assert!(on_manifold(z.as_slice(), 1e-12));
                prop_assert!(linf_delta(z.as_slice(), z2.as_slice()).unwrap() <= 1e-12);
            }
        }

        #[test]
        fn linf_is_a_metric(
            t in proptest::collection::vec((-5.0f64..5.0, -5.0f64..5.0, -5.0f64..5.0), 1..64)
        ) {
            let a: Vec<f64> = t.iter().map(|p| p.0).collect();
            let b: Vec<f64> = t.iter().map(|p| p.1).collect();
            let c: Vec<f64> = t.iter().map(|p| p.2).collect();
            let ab = linf_delta(&a, &b).unwrap();
            prop_assert_eq!(ab, linf_delta(&b, &a).unwrap());
            prop_assert!(linf_delta(&a, &c).unwrap() <= ab + linf_delta(&b, &c).unwrap() + 1e-12);
        }
    }
}
