//! T2: clipped, centered Gaussian noise followed by projection back onto
//! the manifold.

use rand_distr::{Distribution, Normal};

use super::{ColumnOperator, Layout, OperatorConfig, OperatorKind};
use crate::error::{Error, Result};
use crate::manifold::{linf_delta, mean, project_to_manifold, StandardizedColumn};
use crate::rng::RandomnessContext;

const SHRINK_RETRIES: usize = 8;
const FALLBACK_BISECTIONS: usize = 60;

#[derive(Debug, Clone)]
pub struct NoiseProjection {
    alpha: f64,
    tau: f64,
    clip_c: f64,
}

impl NoiseProjection {
    pub fn from_config(cfg: &OperatorConfig) -> Result<Self> {
        if cfg.kind != OperatorKind::T2 {
            return Err(Error::ConfigError(format!("{} is not T2", cfg.kind)));
        }
        cfg.validate()?;
        let (tau, clip_c) = match (cfg.tau, cfg.clip_c) {
            (Some(t), Some(c)) => (t, c),
            _ => {
                return Err(Error::ConfigError(
                    "T2 requires calibrated tau and clip_c".into(),
                ))
            }
        };
        Ok(Self {
            alpha: cfg.alpha,
            tau,
            clip_c,
        })
    }

    fn noise(&self, layout: &Layout, ctx: &RandomnessContext) -> Vec<f64> {
        let mut eps = vec![0.0; layout.len()];
        if self.tau > 0.0 {
            let normal = Normal::new(0.0, self.tau).expect("tau is finite and positive");
            for seg in layout.segments() {
                let mut rng = layout.context(seg, ctx).stream("t2-noise");
                for e in &mut eps[seg.range()] {
                    *e = normal.sample(&mut rng);
                }
            }
        }
        let m = mean(&eps);
        let c = self.clip_c;
        eps.iter_mut().for_each(|e| *e = (*e - m).clamp(-c, c));
        eps
    }
}

fn shifted(z: &[f64], d: &[f64], t: f64) -> Vec<f64> {
    z.iter().zip(d).map(|(a, b)| a + t * b).collect()
}

impl ColumnOperator for NoiseProjection {
    fn name(&self) -> String {
        OperatorKind::T2.name().to_string()
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
        if self.alpha == 0.0 {
            return Ok(z.clone());
        }
        let zs = z.as_slice();
        let eps = self.noise(layout, ctx);

        let mut scale = 1.0;
        let mut last = None;
        for _ in 0..=SHRINK_RETRIES {
            let out = project_to_manifold(&shifted(zs, &eps, scale))?;
            if linf_delta(zs, out.as_slice())? <= self.alpha {
                return Ok(out);
            }
            last = Some(out);
            scale *= 0.5;
        }

        // pull the projected output back along its displacement direction
        let last = last.expect("at least one attempt");
        let dir: Vec<f64> = last.as_slice().iter().zip(zs).map(|(o, a)| o - a).collect();
        let (mut lo, mut hi) = (0.0, 1.0);
        let mut best = None;
        for _ in 0..FALLBACK_BISECTIONS {
            let mid = 0.5 * (lo + hi);
            match project_to_manifold(&shifted(zs, &dir, mid)) {
                Ok(cand) if linf_delta(zs, cand.as_slice())? <= self.alpha => {
                    lo = mid;
                    best = Some(cand);
                }
                _ => hi = mid,
            }
        }
        Ok(best.unwrap_or_else(|| z.clone()))
    }
}

pub fn t2_transform(
    z: &StandardizedColumn,
    cfg: &OperatorConfig,
    rng: &RandomnessContext,
) -> Result<StandardizedColumn> {
    NoiseProjection::from_config(cfg)?.apply(z, &Layout::single(z.len()), rng)
}

/// Draws used by tests that want the raw noise of a context.
#[cfg(test)]
pub(crate) fn sample_noise(cfg: &OperatorConfig, n: usize, ctx: &RandomnessContext) -> Vec<f64> {
    let op = NoiseProjection::from_config(cfg).unwrap();
    op.noise(&Layout::single(n), ctx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::manifold::{on_manifold, unchanged_fraction};
    use rand::{Rng, SeedableRng};
    use rand_distr::StandardNormal;

    fn random_z(n: usize, rng: &mut impl Rng) -> StandardizedColumn {
        let w: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        project_to_manifold(&w).unwrap()
    }

    #[test]
    fn zero_noise_is_identity() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        let z = random_z(48, &mut rng);
        let mut cfg = OperatorConfig::calibrated(OperatorKind::T2, 1.0);
        cfg.tau = Some(0.0);
        let ctx = RandomnessContext::from_parts(b"k", "s", "v", 0);
        let out = t2_transform(&z, &cfg, &ctx).unwrap();
        assert!(linf_delta(z.as_slice(), out.as_slice()).unwrap() <= 1e-12);
    }

    #[test]
    fn noise_is_centered_and_clipped() {
        let cfg = OperatorConfig::calibrated(OperatorKind::T2, 0.4);
        let ctx = RandomnessContext::from_parts(b"k", "s", "v", 0);
        let eps = sample_noise(&cfg, 500, &ctx);
        assert!(eps.iter().all(|e| e.abs() <= 0.2));
        assert!(mean(&eps).abs() < 0.05);
    }

    #[test]
    fn bound_holds_on_ten_thousand_stays() {
        let cfg = OperatorConfig::calibrated(OperatorKind::T2, 1.0);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let mut worst: f64 = 0.0;
        for d in 0..10_000u64 {
            let z = random_z(48, &mut rng);
            let ctx = RandomnessContext::from_parts(b"k", &d.to_string(), "HR", 1);
            let out = t2_transform(&z, &cfg, &ctx).unwrap();
            assert!(on_manifold(out.as_slice(), 1e-12));
            worst = worst.max(linf_delta(z.as_slice(), out.as_slice()).unwrap());
            assert!(unchanged_fraction(z.as_slice(), out.as_slice(), 1e-12).unwrap() <= 0.02);
        }
        assert!(worst <= 1.0, "worst {worst}");
    }

    #[test]
    fn tight_budget_still_within_bound() {
        // a deliberately miscalibrated config: noise far larger than alpha
        let mut cfg = OperatorConfig::uncalibrated(OperatorKind::T2, 0.2);
        cfg.tau = Some(5.0);
        cfg.clip_c = Some(0.1);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        // a spiky column where the rescale alone breaks the budget
        let mut w: Vec<f64> = (0..48)
            .map(|_| rng.sample::<f64, _>(StandardNormal) * 0.1)
            .collect();
        w[10] = 6.0;
        let z = project_to_manifold(&w).unwrap();
        let ctx = RandomnessContext::from_parts(b"k", "s", "v", 0);
        let out = t2_transform(&z, &cfg, &ctx).unwrap();
        assert!(linf_delta(z.as_slice(), out.as_slice()).unwrap() <= 0.2);
        assert!(on_manifold(out.as_slice(), 1e-12));
    }

    #[test]
    fn determinism() {
        let cfg = OperatorConfig::calibrated(OperatorKind::T2, 0.8);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        let z = random_z(60, &mut rng);
        let ctx = RandomnessContext::from_parts(b"k", "s", "v", 3);
        let a = t2_transform(&z, &cfg, &ctx).unwrap();
        let b = t2_transform(&z, &cfg, &ctx).unwrap();
        assert_eq!(a, b);
    }
}
