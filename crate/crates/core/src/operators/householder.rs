//! T3: a single Householder reflection about a mean-zero unit vector.
//!
//! The reflection is an isometry of the manifold and therefore trivially
//! invertible once an attacker holds paired samples; it is kept as the
//! negative control.
//!
//! A data-independent `l_inf` guarantee needs `max |v_i| <= alpha / (2
//! sqrt(n))`, which a unit mean-zero vector can only meet when `alpha` is
//! roughly 2 or more. Below that, [`t3_select_vector`] draws seeded
//! candidates with flat entries and keeps the first one whose reflection of
//! the actual column stays within `alpha`. The chosen vector is still fixed
//! for the whole column.

use rand_distr::{Distribution, StandardNormal};

use super::{ColumnOperator, Layout, OperatorConfig, OperatorKind};
use crate::error::{Error, Result};
use crate::manifold::{mean, StandardizedColumn};
use crate::rng::RandomnessContext;

const CLIP_ITERATIONS: usize = 100;
const SEARCH_CANDIDATES: usize = 256;
/// Entry bound used for searched candidates, in units of `1/sqrt(n-1)`.
const SEARCH_SPREAD: f64 = 2.0;

/// `min(1, alpha / (2 sqrt(n)))`.
pub(crate) fn entry_bound(n: usize, alpha: f64) -> f64 {
    (alpha / (2.0 * (n as f64).sqrt())).min(1.0)
}

fn feasible_floor(n: usize) -> f64 {
    1.0 / ((n - 1) as f64).sqrt()
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn center_normalize(v: &mut [f64]) -> bool {
    let m = mean(v);
    v.iter_mut().for_each(|x| *x -= m);
    let nv = norm(v);
    if !(nv > 0.0) {
        return false;
    }
    v.iter_mut().for_each(|x| *x /= nv);
    true
}

/// Clip to `±c`, re-center, renormalize until the entry bound holds.
fn clip_to_bound(mut v: Vec<f64>, c: f64) -> Option<Vec<f64>> {
    if !center_normalize(&mut v) {
        return None;
    }
    for _ in 0..CLIP_ITERATIONS {
        if v.iter().all(|x| x.abs() <= c) {
            return Some(v);
        }
        v.iter_mut().for_each(|x| *x = x.clamp(-c, c));
        if !center_normalize(&mut v) {
            return None;
        }
    }
    None
}

fn gaussian(n: usize, rng: &mut impl rand::Rng) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

/// Seeded unit mean-zero vector with `max |v_i| <= min(1, alpha/(2 sqrt n))`.
pub fn t3_make_vector(n: usize, alpha: f64, rng: &RandomnessContext) -> Result<Vec<f64>> {
    if n < 3 {
        return Err(Error::InvalidLength(format!("T3 needs n >= 3, got {n}")));
    }
    let c = entry_bound(n, alpha);
    if c < feasible_floor(n) {
        return Err(Error::InfeasibleBound(format!(
            "entry bound {c:.3e} below 1/sqrt(n-1) = {:.3e} (n = {n}, alpha = {alpha})",
            feasible_floor(n)
        )));
    }
    let mut stream = rng.stream("t3-vector");
    for _ in 0..8 {
        if let Some(v) = clip_to_bound(gaussian(n, &mut stream), c) {
            return Ok(v);
        }
    }
    // near the feasibility floor the loop can stall; a shuffled balanced
    // sign vector always meets the bound
    Ok(balanced_signs(n, &mut stream))
}

/// Unit mean-zero vector with entries in `{-a, 0, a}`, `a = 1/sqrt(2 floor(n/2))`.
fn balanced_signs(n: usize, rng: &mut impl rand::Rng) -> Vec<f64> {
    use rand::seq::SliceRandom;
    let half = n / 2;
    let a = 1.0 / ((2 * half) as f64).sqrt();
    let mut v: Vec<f64> = (0..n)
        .map(|i| {
            if i < half {
                a
            } else if i < 2 * half {
                -a
            } else {
                0.0
            }
        })
        .collect();
    v.shuffle(rng);
    v
}

fn reflection_linf(z: &[f64], v: &[f64]) -> f64 {
    let ip: f64 = z.iter().zip(v).map(|(a, b)| a * b).sum();
    let vmax = v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    2.0 * ip.abs() * vmax
}

/// Reflection vector for one column: the guaranteed construction when
/// feasible, otherwise the first seeded candidate that keeps this column
/// within `alpha`.
pub fn t3_select_vector(z: &[f64], alpha: f64, rng: &RandomnessContext) -> Result<Vec<f64>> {
    let n = z.len();
    match t3_make_vector(n, alpha, rng) {
        Ok(v) => return Ok(v),
        Err(Error::InfeasibleBound(_)) => {}
        Err(e) => return Err(e),
    }
    let c = (SEARCH_SPREAD * feasible_floor(n)).min(1.0);
    let limit = alpha * (1.0 - 1e-12);
    let mut stream = rng.stream("t3-vector-search");
    for _ in 0..SEARCH_CANDIDATES {
        if let Some(v) = clip_to_bound(gaussian(n, &mut stream), c) {
            if reflection_linf(z, &v) <= limit {
                return Ok(v);
            }
        }
    }
    Err(Error::InfeasibleBound(format!(
        "no reflection within alpha = {alpha} found after {SEARCH_CANDIDATES} candidates (n = {n})"
    )))
}

/// `z - 2 <z, v> v`.
pub fn t3_transform(z: &StandardizedColumn, v: &[f64]) -> StandardizedColumn {
    let ip: f64 = z.as_slice().iter().zip(v).map(|(a, b)| a * b).sum();
    StandardizedColumn::from_vec(
        z.as_slice()
            .iter()
            .zip(v)
            .map(|(a, b)| a - 2.0 * ip * b)
            .collect(),
    )
}

#[derive(Debug, Clone)]
pub struct HouseholderReflection {
    alpha: f64,
}

impl HouseholderReflection {
    pub fn from_config(cfg: &OperatorConfig) -> Result<Self> {
        if cfg.kind != OperatorKind::T3 {
            return Err(Error::ConfigError(format!("{} is not T3", cfg.kind)));
        }
        cfg.validate()?;
        Ok(Self { alpha: cfg.alpha })
    }
}

impl ColumnOperator for HouseholderReflection {
    fn name(&self) -> String {
        OperatorKind::T3.name().to_string()
    }

    fn alpha(&self) -> f64 {
        self.alpha
    }

    /// One vector for the whole column, drawn from the column-level stream;
    /// the layout only matters for its length.
    fn apply(
        &self,
        z: &StandardizedColumn,
        layout: &Layout,
        ctx: &RandomnessContext,
    ) -> Result<StandardizedColumn> {
        layout.check(z.len())?;
        if self.alpha == 0.0 {
            return Ok(z.clone());
        }
        let v = t3_select_vector(z.as_slice(), self.alpha, ctx)?;
        Ok(t3_transform(z, &v))
    }
}
