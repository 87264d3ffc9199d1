//! Marginal-distribution comparisons: KS distance, out-of-range rate and
//! shape moments.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::manifold::{mean, pop_variance};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhysicalRange {
    pub variable: String,
    pub lo: f64,
    pub hi: f64,
}

impl PhysicalRange {
    pub fn new(variable: impl Into<String>, lo: f64, hi: f64) -> Result<Self> {
        let variable = variable.into();
        if !(lo < hi) {
            return Err(Error::ConfigError(format!(
                "range for {variable}: lo {lo} must be < hi {hi}"
            )));
        }
        Ok(Self { variable, lo, hi })
    }

    pub fn contains(&self, v: f64) -> bool {
        v >= self.lo && v <= self.hi
    }

    pub fn clip(&self, v: f64) -> f64 {
        v.clamp(self.lo, self.hi)
    }
}

fn sorted(x: &[f64]) -> Vec<f64> {
    let mut v = x.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

/// Two-sample Kolmogorov–Smirnov statistic by a merge scan over both
/// sorted samples. Tied values are consumed together before comparing.
pub fn ks_distance(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::InvalidSample(
            "KS needs two non-empty samples".into(),
        ));
    }
    let (a, b) = (sorted(a), sorted(b));
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < a.len() && j < b.len() {
        let v = a[i].min(b[j]);
        while i < a.len() && a[i] <= v {
            i += 1;
        }
        while j < b.len() && b[j] <= v {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    Ok(d)
}

/// Fraction of values strictly outside the range.
pub fn oor_rate(x: &[f64], range: &PhysicalRange) -> Result<f64> {
    if x.is_empty() {
        return Err(Error::InvalidSample("OOR rate of an empty sample".into()));
    }
    let out = x.iter().filter(|&&v| v < range.lo || v > range.hi).count();
    Ok(out as f64 / x.len() as f64)
}

/// Sample skewness `m3 / m2^{3/2}`; 0 for a constant sample.
pub fn skewness(x: &[f64]) -> f64 {
    let m = mean(x);
    let m2 = pop_variance(x, m);
    if !(m2 > 0.0) {
        return 0.0;
    }
    let m3 = x.iter().map(|v| (v - m).powi(3)).sum::<f64>() / x.len() as f64;
    m3 / m2.powf(1.5)
}

/// Excess kurtosis `m4 / m2^2 - 3`; 0 for a constant sample.
pub fn excess_kurtosis(x: &[f64]) -> f64 {
    let m = mean(x);
    let m2 = pop_variance(x, m);
    if !(m2 > 0.0) {
        return 0.0;
    }
    let m4 = x.iter().map(|v| (v - m).powi(4)).sum::<f64>() / x.len() as f64;
    m4 / (m2 * m2) - 3.0
}
