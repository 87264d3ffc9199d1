//! T1: small-angle rotations inside the residual plane of consecutive
//! triplets.
//!
//! Each triplet `z_B = mu_B 1 + a1 u1 + a2 u2` keeps its mean and norm; only
//! the residual coefficients `(a1, a2)` are rotated. The admissible angle of
//! a triplet shrinks with its residual norm so the displacement of every
//! point stays within the budget.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

use rand::Rng;

use super::calibration::{t1_worst_case_displacement, RESIDUAL_PLANE_LINF};
use super::{ColumnOperator, Layout, OperatorConfig, OperatorKind};
use crate::error::{Error, Result};
use crate::manifold::StandardizedColumn;
use crate::rng::RandomnessContext;

const INV_SQRT6: f64 = 0.408_248_290_463_863; // 1/sqrt(6)
/// Keeps rounding in the reconstruction from landing exactly on the budget.
const BUDGET_SHRINK: f64 = 1.0 - 1e-12;

const U1: [f64; 3] = [FRAC_1_SQRT_2, -FRAC_1_SQRT_2, 0.0];
const U2: [f64; 3] = [INV_SQRT6, INV_SQRT6, -2.0 * INV_SQRT6];

/// Largest rotation angle for a triplet with residual norm `rho` whose
/// points may each move by at most `budget`.
pub fn t1_angle_bound(budget: f64, rho: f64) -> f64 {
    if !(budget > 0.0) {
        return 0.0;
    }
    if !(rho > 0.0) {
        return PI;
    }
    let ratio = budget / (2.0 * RESIDUAL_PLANE_LINF * rho);
    if ratio >= 1.0 {
        PI
    } else {
        2.0 * ratio.asin()
    }
}

#[derive(Debug, Clone)]
pub struct TripletRotation {
    kind: OperatorKind,
    alpha: f64,
    theta_max: f64,
}

impl TripletRotation {
    pub fn from_config(cfg: &OperatorConfig) -> Result<Self> {
        if !cfg.kind.is_rotation() {
            return Err(Error::ConfigError(format!(
                "{} is not a rotation operator",
                cfg.kind
            )));
        }
        let theta_max = cfg
            .theta_max
            .ok_or_else(|| Error::ConfigError("T1 requires a calibrated theta_max".into()))?;
        cfg.validate()?;
        Ok(Self {
            kind: cfg.kind,
            alpha: cfg.alpha,
            theta_max,
        })
    }

    /// Per-point budget implied by the configured unit-residual bound.
    fn budget(&self) -> f64 {
        let b = if self.theta_max >= PI {
            self.alpha
        } else {
            self.alpha.min(t1_worst_case_displacement(self.theta_max))
        };
        b * BUDGET_SHRINK
    }

    fn rotate_segment(&self, z: &[f64], out: &mut [f64], rng: &mut impl Rng) {
        let budget = self.budget();
        let n = z.len();
        match n {
            0 | 1 => return,
            2 => {
                // the residual plane is one-dimensional: a coin-flip reflection
                let coin: bool = rng.gen();
                if coin && (z[0] - z[1]).abs() <= budget {
                    out[0] = z[1];
                    out[1] = z[0];
                }
                return;
            }
            _ => {}
        }
        let full = n / 3;
        for b in 0..full {
            let i = 3 * b;
            rotate_triplet(&mut out[i..i + 3], [budget; 3], rng);
        }
        if !n.is_multiple_of(3) {
            // trailing points join an overlapping triplet; already-moved points
            // only get what remains of their budget
            let i = n - 3;
            let mut room = [0.0; 3];
            for k in 0..3 {
                room[k] = (budget - (out[i + k] - z[i + k]).abs()).max(0.0);
            }
            rotate_triplet(&mut out[i..i + 3], room, rng);
        }
    }
}

fn rotate_triplet(block: &mut [f64], room: [f64; 3], rng: &mut impl Rng) {
    let mu = (block[0] + block[1] + block[2]) / 3.0;
    let r = [block[0] - mu, block[1] - mu, block[2] - mu];
    let a1 = r[0] * U1[0] + r[1] * U1[1];
    let a2 = r[0] * U2[0] + r[1] * U2[1] + r[2] * U2[2];
    let rho = a1.hypot(a2);
    let bound = t1_angle_bound(room.iter().copied().fold(f64::INFINITY, f64::min), rho);
    let theta = if bound > 0.0 {
        rng.gen_range(-bound..=bound)
    } else {
        0.0
    };
    let (s, c) = theta.sin_cos();
    let d1 = (c * a1 - s * a2) - a1;
    let d2 = (s * a1 + c * a2) - a2;
    for k in 0..3 {
        block[k] += d1 * U1[k] + d2 * U2[k];
    }
}

impl ColumnOperator for TripletRotation {
    fn name(&self) -> String {
        self.kind.name().to_string()
    }

    fn alpha(&self) -> f64 {
        self.alpha
    }

    fn apply(
        &self,
        z: &StandardizedColumn,
        layout: &Layout,
        ctx: &RandomnessContext,
    ) -> Result<StandardizedColumn> {
        layout.check(z.len())?;
        let zs = z.as_slice();
        let mut out = zs.to_vec();
        for seg in layout.segments() {
            let mut rng = layout.context(seg, ctx).stream("t1-angles");
            let range = seg.range();
            self.rotate_segment(&zs[range.clone()], &mut out[range], &mut rng);
        }
        Ok(StandardizedColumn::from_vec(out))
    }
}

pub fn t1_transform(
    z: &StandardizedColumn,
    cfg: &OperatorConfig,
    rng: &RandomnessContext,
) -> Result<StandardizedColumn> {
    TripletRotation::from_config(cfg)?.apply(z, &Layout::single(z.len()), rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::manifold::{linf_delta, on_manifold, project_to_manifold, unchanged_fraction};
    use rand::SeedableRng;
    use rand_distr::StandardNormal;

    fn random_z(n: usize, seed: u64) -> StandardizedColumn {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let w: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        project_to_manifold(&w).unwrap()
    }

    fn ctx(stay: &str) -> RandomnessContext {
        RandomnessContext::from_parts(b"test-secret", stay, "HR", 7)
    }

    #[test]
    fn zero_theta_is_exact_identity() {
        let z = random_z(48, 1);
        let mut cfg = OperatorConfig::calibrated(OperatorKind::T1Uniform, 1.0);
        cfg.theta_max = Some(0.0);
        let out = t1_transform(&z, &cfg, &ctx("s")).unwrap();
        assert_eq!(out, z);
    }

    #[test]
    fn uncalibrated_is_rejected() {
        let z = random_z(12, 1);
        let cfg = OperatorConfig::uncalibrated(OperatorKind::T1Uniform, 1.0);
        assert!(matches!(
            t1_transform(&z, &cfg, &ctx("s")),
            Err(Error::ConfigError(_))
        ));
    }

    #[test]
    fn triplet_mean_and_norm_preserved() {
        let cfg = OperatorConfig::calibrated(OperatorKind::T1Uniform, 0.8);
        for seed in 0..50 {
            let z = random_z(48, seed);
            let out = t1_transform(&z, &cfg, &ctx(&format!("s{seed}"))).unwrap();
            for (a, b) in z.as_slice().chunks(3).zip(out.as_slice().chunks(3)) {
                let ma = a.iter().sum::<f64>() / 3.0;
                let mb = b.iter().sum::<f64>() / 3.0;
                let na: f64 = a.iter().map(|v| v * v).sum::<f64>().sqrt();
                let nb: f64 = b.iter().map(|v| v * v).sum::<f64>().sqrt();
                assert!((ma - mb).abs() <= 1e-12);
                assert!((na - nb).abs() <= 1e-12);
            }
            assert!(on_manifold(out.as_slice(), 1e-12));
            assert!(linf_delta(z.as_slice(), out.as_slice()).unwrap() <= 0.8);
        }
    }

    #[test]
    fn displacement_distribution_at_unit_alpha() {
        let cfg = OperatorConfig::calibrated(OperatorKind::T1Uniform, 1.0);
        let mut sum = 0.0;
        let draws = 10_000;
        for d in 0..draws {
            let z = random_z(48, 1000 + d as u64);
            let out = t1_transform(&z, &cfg, &ctx(&d.to_string())).unwrap();
            let l = linf_delta(z.as_slice(), out.as_slice()).unwrap();
            assert!(l > 0.0 && l <= 1.0);
            sum += l;
        }
        let mean = sum / draws as f64;
        assert!(mean > 0.5 && mean < 1.0, "mean displacement {mean}");
    }

    #[test]
    fn ragged_lengths_stay_on_manifold_and_move() {
        let cfg = OperatorConfig::calibrated(OperatorKind::T1Uniform, 0.3);
        for n in [2usize, 3, 4, 5, 13, 14, 47, 50] {
            for seed in 0..20 {
                let z = random_z(n, seed);
                let out = t1_transform(&z, &cfg, &ctx(&format!("{n}-{seed}"))).unwrap();
                assert!(on_manifold(out.as_slice(), 1e-12), "n={n}");
                assert!(linf_delta(z.as_slice(), out.as_slice()).unwrap() <= 0.3);
                if n >= 12 {
                    assert!(
                        unchanged_fraction(z.as_slice(), out.as_slice(), 1e-12).unwrap() <= 0.02
                    );
                }
            }
        }
    }

    #[test]
    fn segments_use_their_own_streams() {
        let cfg = OperatorConfig::calibrated(OperatorKind::T1Uniform, 1.0);
        let z = random_z(96, 3);
        let layout = Layout::from_stays([("a", 48), ("b", 48)]);
        let op = TripletRotation::from_config(&cfg).unwrap();
        let whole = op.apply(&z, &layout, &ctx("")).unwrap();
        let first = op
            .apply(
                &z.as_slice()[..48].to_vec().into(),
                &Layout::single(48),
                &ctx("a"),
            )
            .unwrap();
        assert_eq!(&whole.as_slice()[..48], first.as_slice());
    }

    #[test]
    fn angle_bound_edges() {
        assert_eq!(t1_angle_bound(0.0, 1.0), 0.0);
        assert_eq!(t1_angle_bound(1.0, 0.0), PI);
        assert_eq!(t1_angle_bound(5.0, 1.0), PI);
        let b = t1_angle_bound(0.5, 1.0);
        assert!((t1_worst_case_displacement(b) - 0.5).abs() < 1e-12);
    }
}
