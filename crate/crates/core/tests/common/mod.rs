#![allow(dead_code)]

use std::collections::BTreeMap;
use std::sync::{Arc, OnceLock};

use skillview_core::attacks::{AttackFamily, LeakageLevel};
use skillview_core::pipeline::{
    evaluate_view, run_skill, CohortView, EvalOptions, EvalReport, RunManifest, RunOptions,
};
use skillview_core::rng::SecretSeed;
use skillview_core::skills::{
    OperatorsSection, OutputFormat, OutputSpec, QmixSection, SkillSpec, ThreatModel, Usage,
    VariablePlan,
};
use skillview_core::synth::{gen_cohort, SynthSpec};

pub const SECRET: &[u8] = b"test-secret-9c41e7d2-b05f";

pub fn secret() -> Arc<SecretSeed> {
    Arc::new(SecretSeed::new(SECRET))
}

pub fn cohort() -> &'static CohortView {
    static C: OnceLock<CohortView> = OnceLock::new();
    C.get_or_init(|| gen_cohort(&SynthSpec::default()).expect("default cohort"))
}

pub fn cohort_with_stays(n: usize) -> CohortView {
    gen_cohort(&SynthSpec {
        n_stays: n,
        ..SynthSpec::default()
    })
    .expect("cohort")
}

pub const VARIABLES: [&str; 3] = ["Glucose", "HR", "Lactate"];

/// Research skill applying one operator to every bundled variable.
pub fn skill(op: &str, alpha: f64, qmix: bool) -> SkillSpec {
    let per_variable: BTreeMap<String, VariablePlan> = VARIABLES
        .iter()
        .map(|v| {
            (
                v.to_string(),
                VariablePlan {
                    ops: vec![op.to_string()],
                    alpha: Some(alpha),
                },
            )
        })
        .collect();
    SkillSpec {
        id: format!("test_{op}_{alpha}_{qmix}"),
        usage: Usage::InHospitalResearch,
        threat_model: ThreatModel {
            leakage: LeakageLevel::L2,
            attacks: vec!["A_reconstruction".into()],
        },
        operators: OperatorsSection {
            default_alpha: alpha,
            per_variable,
        },
        qmix: QmixSection {
            enabled: qmix,
            variables: if qmix {
                VARIABLES.iter().map(|v| v.to_string()).collect()
            } else {
                Vec::new()
            },
            ..QmixSection::default()
        },
        output: OutputSpec {
            table: "test_view".into(),
            time_window_hours: [0, 48],
            format: OutputFormat::Long,
        },
    }
}

pub fn release(raw: &CohortView, spec: &SkillSpec) -> (CohortView, RunManifest) {
    run_skill(spec, raw, &secret(), 1, &RunOptions::default()).expect("run")
}

pub fn evaluate(
    raw: &CohortView,
    private: &CohortView,
    spec: &SkillSpec,
    families: &[AttackFamily],
) -> EvalReport {
    let opts = EvalOptions {
        families: Some(families.to_vec()),
        level: Some(LeakageLevel::L2),
        ..EvalOptions::default()
    };
    evaluate_view(raw, private, spec, &opts).expect("evaluate")
}
