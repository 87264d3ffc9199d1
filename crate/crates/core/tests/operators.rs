use std::collections::HashMap;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use skillview_core::manifold::{
    column_stats, linf_delta, on_manifold, project_to_manifold, StandardizedColumn,
    DEFAULT_SIGMA_FLOOR,
};
use skillview_core::metrics::chi_square_sf;
use skillview_core::operators::{
    apply_operator, qmix_permutation_from_rng, qmix_stay_permutation, qmix_wrap, t3_transform,
    CalibrationCache, ColumnOperator, IdentityOperator, Layout, OperatorConfig, OperatorKind,
    OperatorRegistry, QmixConfig,
};
use skillview_core::rng::RandomnessContext;
use skillview_core::Error;

fn column(seed: u64, n: usize) -> StandardizedColumn {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
    project_to_manifold(&w).unwrap()
}

fn ctx(nonce: u64) -> RandomnessContext {
    RandomnessContext::from_parts(b"operator-tests", "", "HR", nonce)
}

const ALPHAS: [f64; 5] = [0.3, 0.5, 0.8, 1.0, 2.0];

fn config(cache: &CalibrationCache, kind_idx: usize, alpha: f64, n: usize) -> OperatorConfig {
    let (kind, qmix) = [
        (OperatorKind::T1Uniform, false),
        (OperatorKind::T2, false),
        (OperatorKind::T3, false),
        (OperatorKind::T1Uniform, true),
        (OperatorKind::T2, true),
    ][kind_idx];
    let cfg = OperatorConfig::from_calibration(kind, &cache.lookup(alpha)).with_column_len(n);
    if qmix {
        cfg.with_qmix(QmixConfig {
            enabled: true,
            block_length: 8,
            bandwidth: 3,
        })
    } else {
        cfg
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(512))]

    #[test]
    fn every_operator_stays_on_manifold_within_alpha(
        seed in any::<u64>(),
        n in 12usize..150,
        kind_idx in 0usize..5,
        alpha_idx in 0usize..5,
        nonce in any::<u64>(),
    ) {
        let alpha = ALPHAS[alpha_idx];
        let cache = CalibrationCache::for_alphas(&[alpha]);
        let cfg = config(&cache, kind_idx, alpha, n);
        let op = OperatorRegistry::with_builtins().build(&cfg).unwrap();
        let z = column(seed, n);
        let layout = Layout::from_stays([("a", n / 3), ("b", n - n / 3)]);
        let out = op.apply(&z, &layout, &ctx(nonce)).unwrap();
        prop_assert!(on_manifold(out.as_slice(), 1e-9));
        prop_assert!(linf_delta(z.as_slice(), out.as_slice()).unwrap() <= alpha);
        let again = op.apply(&z, &layout, &ctx(nonce)).unwrap();
        prop_assert_eq!(out, again);
    }

    #[test]
    fn banded_permutations_are_bijections(len in 1usize..80, b in 0usize..12, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = qmix_permutation_from_rng(len, b, &mut rng);
        let mut sorted = p.clone();
        sorted.sort_unstable();
        prop_assert_eq!(sorted, (0..len).collect::<Vec<_>>());
        for (i, &src) in p.iter().enumerate() {
            prop_assert!(i.abs_diff(src) <= b);
        }
    }

    #[test]
    fn physical_displacement_is_bounded_by_alpha_sigma(seed in any::<u64>(), n in 12usize..100, alpha_idx in 0usize..5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x: Vec<f64> = (0..n).map(|_| 80.0 + 15.0 * rng.sample::<f64, _>(StandardNormal)).collect();
        let stats = column_stats(&x, DEFAULT_SIGMA_FLOOR).unwrap();
        let alpha = ALPHAS[alpha_idx];
        let y = apply_operator(&x, &stats, &OperatorConfig::calibrated(OperatorKind::T2, alpha), &ctx(seed)).unwrap();
        let worst = x.iter().zip(&y).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        prop_assert!(worst <= alpha * stats.sigma * (1.0 + 1e-9));
    }
}

#[test]
fn qmix_t2_bound_on_ten_thousand_stays() {
    let cfg = OperatorConfig::calibrated(OperatorKind::T2, 1.0).with_qmix(QmixConfig::default());
    let op = OperatorRegistry::with_builtins().build(&cfg).unwrap();
    for s in 0..10_000u64 {
        let z = column(s, 48);
        let out = op.apply(&z, &Layout::single(48), &ctx(s)).unwrap();
        assert!(linf_delta(z.as_slice(), out.as_slice()).unwrap() <= 1.0);
    }
}

fn perm_counts(nonce: u64, draws: usize) -> HashMap<Vec<usize>, usize> {
    let cfg = QmixConfig {
        enabled: true,
        block_length: 4,
        bandwidth: 4,
    };
    let base = RandomnessContext::from_parts(b"chi-square", "", "HR", nonce);
    let mut counts = HashMap::new();
    for i in 0..draws {
        let p = qmix_stay_permutation(&base.for_stay(&format!("s{i}")), &cfg, 4);
        *counts.entry(p).or_insert(0) += 1;
    }
    counts
}

#[test]
fn permutation_frequencies_match_an_independent_rerun() {
    let draws = 100_000;
    let a = perm_counts(1, draws);
    let b = perm_counts(2, draws);
    let mut cells: Vec<&Vec<usize>> = a.keys().chain(b.keys()).collect();
    cells.sort();
    cells.dedup();
    let chi2: f64 = cells
        .iter()
        .map(|c| {
            let (x, y) = (
                *a.get(*c).unwrap_or(&0) as f64,
                *b.get(*c).unwrap_or(&0) as f64,
            );
            (x - y).powi(2) / (x + y)
        })
        .sum();
    let p = chi_square_sf(chi2, (cells.len() - 1) as f64);
    assert!(
        cells.len() > 12,
        "only {} distinct permutations",
        cells.len()
    );
    assert!(p > 0.01, "chi2 {chi2} p {p}");
}

#[test]
fn identity_inner_round_trips_bitwise() {
    let w = qmix_wrap(
        Box::new(IdentityOperator),
        QmixConfig {
            enabled: true,
            block_length: 5,
            bandwidth: 3,
        },
    )
    .unwrap();
    let z = column(9, 53);
    let layout = Layout::from_stays([("a", 20), ("b", 33)]);
    assert_eq!(w.apply(&z, &layout, &ctx(0)).unwrap(), z);
}

#[test]
fn qmix_refuses_householder() {
    let cfg = OperatorConfig::calibrated(OperatorKind::T3, 1.0)
        .with_column_len(48)
        .with_qmix(QmixConfig::default());
    assert!(matches!(
        OperatorRegistry::with_builtins().build(&cfg),
        Err(Error::ConfigError(_))
    ));
}

#[test]
fn householder_on_a_ramp_keeps_moments() {
    let x: Vec<f64> = (1..=200).map(f64::from).collect();
    let stats = column_stats(&x, DEFAULT_SIGMA_FLOOR).unwrap();
    let cfg = OperatorConfig::calibrated(OperatorKind::T3, 1.0).with_column_len(x.len());
    let y = apply_operator(&x, &stats, &cfg, &ctx(3)).unwrap();
    let s2 = column_stats(&y, DEFAULT_SIGMA_FLOOR).unwrap();
    assert!((s2.mu - stats.mu).abs() <= 1e-9 * stats.mu.abs().max(1.0));
    assert!((s2.sigma - stats.sigma).abs() <= 1e-9 * stats.sigma);
}

#[test]
fn householder_properties() {
    let z = column(4, 64);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut v: Vec<f64> = (0..64).map(|_| rng.sample(StandardNormal)).collect();
    let m = v.iter().sum::<f64>() / 64.0;
    v.iter_mut().for_each(|x| *x -= m);
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter_mut().for_each(|x| *x /= norm);
    let once = t3_transform(&z, &v);
    let twice = t3_transform(&once, &v);
    assert!(linf_delta(z.as_slice(), twice.as_slice()).unwrap() <= 1e-12);
    let dot = |a: &[f64]| a.iter().zip(&v).map(|(p, q)| p * q).sum::<f64>();
    assert!((dot(once.as_slice()) + dot(z.as_slice())).abs() <= 1e-12);
}

#[test]
fn identity_config_passes_through() {
    let x: Vec<f64> = (0..30).map(|i| (i as f64).sin()).collect();
    let stats = column_stats(&x, DEFAULT_SIGMA_FLOOR).unwrap();
    assert_eq!(
        apply_operator(&x, &stats, &OperatorConfig::identity(), &ctx(0)).unwrap(),
        x
    );
}

#[test]
fn registry_selects_by_name_and_accepts_custom_variants() {
    let mut reg = OperatorRegistry::with_builtins();
    for k in OperatorKind::ALL {
        assert!(reg.names().contains(&k.name().to_string()));
    }
    reg.register(
        "T2",
        std::sync::Arc::new(|_cfg: &OperatorConfig| {
            Ok(Box::new(IdentityOperator) as Box<dyn ColumnOperator>)
        }),
    );
    let op = reg
        .build(&OperatorConfig::calibrated(OperatorKind::T2, 1.0))
        .unwrap();
    assert!(op.is_identity());
}
