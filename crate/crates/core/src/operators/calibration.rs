//! Offline calibration of the operator internals for a given `alpha`.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::Result;

/// Largest `l_inf` norm of a unit vector in the residual plane of a
/// triplet, attained at `(2, -1, -1)/sqrt(6)`.
pub(crate) const RESIDUAL_PLANE_LINF: f64 = 0.816_496_580_927_726; // sqrt(2/3)

const DIRECTION_GRID: usize = 4096;

/// Analytic worst-case `l_inf` displacement of a unit-residual triplet
/// rotated by `theta`: `2 |sin(theta/2)| sqrt(2/3)`.
pub fn t1_worst_case_displacement(theta: f64) -> f64 {
    2.0 * (theta / 2.0).sin().abs() * RESIDUAL_PLANE_LINF
}

/// Numerical worst case over `n_dirs` evenly spaced residual directions.
pub fn t1_grid_displacement(theta: f64, n_dirs: usize) -> f64 {
    let s2 = std::f64::consts::FRAC_1_SQRT_2;
    let s6 = 1.0 / 6f64.sqrt();
    let u1 = [s2, -s2, 0.0];
    let u2 = [s6, s6, -2.0 * s6];
    let (sin, cos) = theta.sin_cos();
    (0..n_dirs)
        .map(|k| {
            let phi = 2.0 * PI * k as f64 / n_dirs as f64;
            let (a1, a2) = (phi.cos(), phi.sin());
            let b1 = cos * a1 - sin * a2;
            let b2 = sin * a1 + cos * a2;
            (0..3)
                .map(|i| ((b1 - a1) * u1[i] + (b2 - a2) * u2[i]).abs())
                .fold(0.0, f64::max)
        })
        .fold(0.0, f64::max)
}

fn worst(theta: f64) -> f64 {
    t1_worst_case_displacement(theta).max(t1_grid_displacement(theta, DIRECTION_GRID))
}

/// Largest rotation bound keeping a unit-residual triplet within `alpha`.
///
/// The displacement is increasing in `|theta|` on `[0, pi]`, so bisection
/// on the worst case over residual directions finds the bound.
pub fn t1_calibrate_theta_max(alpha: f64) -> f64 {
    if !(alpha > 0.0) {
        return 0.0;
    }
    if worst(PI) <= alpha {
        return PI;
    }
    let (mut lo, mut hi) = (0.0, PI);
    for _ in 0..80 {
        let mid = 0.5 * (lo + hi);
        if worst(mid) <= alpha {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    lo.min(PI)
}

/// Noise scale and clip threshold for T2: `tau = alpha/4`, `c = alpha/2`.
pub fn t2_calibrate(alpha: f64, n: usize) -> (f64, f64) {
    debug_assert!(n >= 2);
    let alpha = alpha.max(0.0);
    (alpha / 4.0, alpha / 2.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub alpha: f64,
    pub theta_max: f64,
    pub tau: f64,
    pub clip_c: f64,
}

impl Calibration {
    pub fn compute(alpha: f64) -> Self {
        let (tau, clip_c) = t2_calibrate(alpha, 2);
        Self {
            alpha,
            theta_max: t1_calibrate_theta_max(alpha),
            tau,
            clip_c,
        }
    }
}

/// Calibrations keyed by alpha; persisted as JSON by the CLI.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CalibrationCache {
    pub entries: Vec<Calibration>,
}

impl CalibrationCache {
    pub fn for_alphas(alphas: &[f64]) -> Self {
        let mut cache = Self::default();
        for &a in alphas {
            cache.get_or_compute(a);
        }
        cache
    }

    pub fn get(&self, alpha: f64) -> Option<&Calibration> {
        self.entries
            .iter()
            .find(|c| c.alpha.to_bits() == alpha.to_bits())
    }

    pub fn get_or_compute(&mut self, alpha: f64) -> Calibration {
        if let Some(c) = self.get(alpha) {
            return *c;
        }
        let c = Calibration::compute(alpha);
        self.entries.push(c);
        self.entries.sort_by(|a, b| a.alpha.total_cmp(&b.alpha));
        c
    }

    /// Calibration for `alpha`, computed on the fly when not cached.
    pub fn lookup(&self, alpha: f64) -> Calibration {
        self.get(alpha)
            .copied()
            .unwrap_or_else(|| Calibration::compute(alpha))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn theta_max_edges() {
        assert_eq!(t1_calibrate_theta_max(0.0), 0.0);
        assert_eq!(t1_calibrate_theta_max(2.0), PI);
        assert_eq!(t1_calibrate_theta_max(10.0), PI);
    }

    #[test]
    fn theta_max_is_monotone() {
        let mut prev = 0.0;
        for k in 0..=200 {
            let t = t1_calibrate_theta_max(k as f64 * 0.01);
            assert!(t >= prev);
            prev = t;
        }
    }

    #[test]
    fn grid_never_exceeds_analytic() {
        for k in 0..=64 {
            let th = PI * k as f64 / 64.0;
            assert!(t1_grid_displacement(th, 720) <= t1_worst_case_displacement(th) + 1e-12);
        }
    }

    /// Monte Carlo oracle: random unit-residual triplets rotated by angles
    /// within the calibrated bound never move more than alpha.
    #[test]
    fn theta_max_half_alpha_monte_carlo() {
        let alpha = 0.5;
        let tmax = t1_calibrate_theta_max(alpha);
        assert!(tmax > 0.0 && tmax < PI);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let mut worst_seen: f64 = 0.0;
        for _ in 0..1_000_000 {
            // random triplet, residual normalized to unit length
            let x: [f64; 3] = [
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
            ];
            let m = (x[0] + x[1] + x[2]) / 3.0;
            let r = [x[0] - m, x[1] - m, x[2] - m];
            let nr = (r.iter().map(|v| v * v).sum::<f64>()).sqrt();
            if nr < 1e-9 {
                continue;
            }
            let r = r.map(|v| v / nr);
            let th = rng.gen_range(-tmax..=tmax);
            // rotation about the (1,1,1) axis (Rodrigues)
            let k = 1.0 / 3f64.sqrt();
            let (s, c) = th.sin_cos();
            let kxr = [k * (r[2] - r[1]), k * (r[0] - r[2]), k * (r[1] - r[0])];
            let rot: Vec<f64> = (0..3).map(|i| r[i] * c + kxr[i] * s).collect();
            let d = (0..3).map(|i| (rot[i] - r[i]).abs()).fold(0.0, f64::max);
            worst_seen = worst_seen.max(d);
        }
        assert!(worst_seen <= alpha, "worst {worst_seen}");
        assert!(worst_seen > 0.95 * alpha);
    }

    #[test]
    fn t2_examples() {
        assert_eq!(t2_calibrate(0.0, 48), (0.0, 0.0));
        assert_eq!(t2_calibrate(1.0, 48), (0.25, 0.5));
        assert_eq!(t2_calibrate(0.5, 48), (0.125, 0.25));
    }

    #[test]
    fn cache_round_trip() {
        let cache = CalibrationCache::for_alphas(&[1.0, 0.3, 0.5]);
        assert_eq!(cache.entries.len(), 3);
        assert!(cache.entries[0].alpha < cache.entries[1].alpha);
        let back = CalibrationCache::from_json(&cache.to_json().unwrap()).unwrap();
        assert_eq!(back, cache);
        assert_eq!(back.lookup(0.5), Calibration::compute(0.5));
    }
}
