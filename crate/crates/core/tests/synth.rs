use skillview_core::metrics::{
    acf, downstream_auroc, excess_kurtosis, summary_features, LogisticConfig,
};
use skillview_core::synth::{
    gen_cohort, gen_labels, stay_id, LabelRule, Process, SynthSpec, SynthVariable,
};

fn single(process: Process, phi: f64, n_stays: usize) -> SynthSpec {
    SynthSpec {
        n_stays,
        t_max: 47,
        seed: 11,
        variables: vec![SynthVariable::new(
            "X",
            process,
            phi,
            100.0,
            10.0,
            [-1e6, 1e6],
        )],
        label_rule: LabelRule {
            feature: "mean_X".into(),
            quantile: 0.5,
            noise: 0.1,
        },
    }
}

fn pooled(spec: &SynthSpec) -> Vec<Vec<f64>> {
    let c = gen_cohort(spec).unwrap();
    c.variable("X").unwrap().stays.values().cloned().collect()
}

#[test]
fn ar1_within_stay_lag_one_autocorrelation() {
    let stays = pooled(&single(Process::AR1, 0.8, 400));
    let mean_acf1 = stays.iter().map(|s| acf(s, 1).unwrap()[0]).sum::<f64>() / stays.len() as f64;
    // the within-stay estimator is biased down by roughly (1 + 4 phi) / T
    let expected = 0.8 - (1.0 + 4.0 * 0.8) / 48.0;
    assert!((mean_acf1 - expected).abs() < 0.05, "acf1 {mean_acf1}");
    let long = pooled(&SynthSpec {
        t_max: 4999,
        n_stays: 20,
        ..single(Process::AR1, 0.8, 20)
    });
    let long_acf1 = long.iter().map(|s| acf(s, 1).unwrap()[0]).sum::<f64>() / long.len() as f64;
    assert!((0.75..=0.85).contains(&long_acf1), "long acf1 {long_acf1}");
}

#[test]
fn marginal_mean_and_sd_match_configuration() {
    let stays = pooled(&single(Process::AR1, 0.8, 500));
    let all: Vec<f64> = stays.concat();
    let n = all.len() as f64;
    let mean = all.iter().sum::<f64>() / n;
    let sd = (all.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
    let se = 10.0 * ((1.0 + 0.8) / (1.0 - 0.8) / n).sqrt();
    assert!((mean - 100.0).abs() < 3.0 * se, "mean {mean} se {se}");
    assert!((sd - 10.0).abs() < 0.5, "sd {sd}");
}

#[test]
fn heavy_tail_and_spiky_processes_have_excess_kurtosis() {
    for p in [Process::AR1HeavyTail, Process::SpikyPoisson] {
        let all = pooled(&single(p, 0.5, 300)).concat();
        assert!(
            excess_kurtosis(&all) > 1.0,
            "{p:?}: {}",
            excess_kurtosis(&all)
        );
    }
    let gaussian = pooled(&single(Process::AR1, 0.5, 300)).concat();
    assert!(excess_kurtosis(&gaussian).abs() < 0.3);
}

#[test]
fn generation_is_deterministic_and_clipped() {
    let spec = SynthSpec::default();
    let a = gen_cohort(&spec).unwrap();
    assert_eq!(a.fingerprint(), gen_cohort(&spec).unwrap().fingerprint());
    assert_eq!(a.n_stays(), 500);
    assert_eq!(a.t_len, 48);
    assert_eq!(a.stay_ids()[0], stay_id(0));
    for v in &spec.variables {
        let data = a.variable(&v.name).unwrap();
        assert!(data
            .stays
            .values()
            .flatten()
            .all(|x| *x >= v.range[0] && *x <= v.range[1]));
    }
    let other = gen_cohort(&SynthSpec { seed: 8, ..spec }).unwrap();
    assert_ne!(a.fingerprint(), other.fingerprint());
}

fn raw_auroc(n_stays: usize, noise: f64) -> f64 {
    let spec = SynthSpec {
        n_stays,
        ..SynthSpec::default()
    };
    let c = gen_cohort(&spec).unwrap();
    let rule = LabelRule {
        noise,
        ..spec.label_rule.clone()
    };
    let labels = gen_labels(&c, &rule, spec.seed).unwrap();
    let ids = c.complete_stay_ids();
    let feats: Vec<Vec<f64>> = ids
        .iter()
        .map(|id| {
            c.variable_names()
                .iter()
                .flat_map(|v| summary_features(&c.variable(v).unwrap().stays[id]))
                .collect()
        })
        .collect();
    let y: Vec<bool> = ids.iter().map(|id| labels[id]).collect();
    downstream_auroc(&feats, &feats, &y, &LogisticConfig::default())
        .unwrap()
        .0
}

#[test]
fn labels_are_learnable_from_raw_features() {
    let a = raw_auroc(2000, 0.1);
    assert!(a >= 0.85, "raw auroc {a}");
}

#[test]
fn fully_noisy_labels_are_not_learnable() {
    let a = raw_auroc(2000, 0.5);
    assert!((a - 0.5).abs() < 0.08, "auroc {a}");
}

#[test]
fn label_balance_follows_the_quantile() {
    let c = gen_cohort(&SynthSpec::default()).unwrap();
    let rule = LabelRule {
        feature: "max_Lactate".into(),
        quantile: 0.8,
        noise: 0.0,
    };
    let labels = gen_labels(&c, &rule, 1).unwrap();
    let rate = labels.values().filter(|&&l| l).count() as f64 / labels.len() as f64;
    assert!((rate - 0.2).abs() < 0.01, "{rate}");
    assert!(gen_labels(
        &c,
        &LabelRule {
            feature: "median_HR".into(),
            ..rule
        },
        1
    )
    .is_err());
}
