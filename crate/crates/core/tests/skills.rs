use proptest::prelude::*;

use skillview_core::attacks::AttackFamily;
use skillview_core::operators::CalibrationCache;
use skillview_core::skills::{
    has_errors, parse_skill, resolve_variable_plan, validate_skill, Severity, Usage,
};
use skillview_core::Error;

const RESEARCH: &str = include_str!("../assets/skills/in_hospital_vitals_explore.yaml");
const EXPORT: &str = include_str!("../assets/skills/export_strong_privacy.yaml");
const REFLECTION: &str = include_str!("../assets/skills/export_with_householder.yaml");

#[test]
fn bundled_skills_parse_and_validate() {
    let research = parse_skill(RESEARCH).unwrap();
    assert_eq!(research.usage, Usage::InHospitalResearch);
    assert!(validate_skill(&research).is_empty());

    let export = parse_skill(EXPORT).unwrap();
    assert!(!has_errors(&validate_skill(&export)));
    assert_eq!(export.secret_env_name(), Some("HOSPITAL_SEED"));
    assert_eq!(
        export.attack_families().unwrap(),
        vec![AttackFamily::A, AttackFamily::B, AttackFamily::C]
    );
    assert!(export.qmix_applies("HR") && !export.qmix_applies("Lactate"));

    let reflection = parse_skill(REFLECTION).unwrap();
    let findings = validate_skill(&reflection);
    assert!(
        findings
            .iter()
            .any(|f| f.severity == Severity::Error && f.code == "export-t3"),
        "{findings:?}"
    );
}

#[test]
fn first_listed_operator_wins_and_unlisted_variables_default_to_t2() {
    let spec = parse_skill(RESEARCH).unwrap();
    let cache = CalibrationCache::for_alphas(&spec.alphas());
    assert_eq!(
        resolve_variable_plan(&spec, "HR", 480, &cache)
            .unwrap()
            .operator,
        "T1_uniform"
    );
    let other = resolve_variable_plan(&spec, "SpO2", 480, &cache).unwrap();
    assert_eq!(other.operator, "T2");
    assert_eq!(spec.alpha_for("SpO2"), 0.5);
}

#[test]
fn strict_parsing_errors() {
    let unknown = RESEARCH.replace("usage:", "colour: red\nusage:");
    assert!(matches!(
        parse_skill(&unknown),
        Err(Error::StrictKeyError(_))
    ));
    let missing = RESEARCH.replace("id: skill_in_hosp_vitals_explore\n", "");
    assert!(matches!(parse_skill(&missing), Err(Error::MissingField(_))));
    assert!(matches!(
        parse_skill("id: [unterminated"),
        Err(Error::ParseError { .. })
    ));
    let literal = EXPORT.replace("\"${HOSPITAL_SEED}\"", "\"hunter2\"");
    let err = parse_skill(&literal).unwrap_err();
    assert!(matches!(err, Error::ConfigError(_)));
    assert!(!err.to_string().contains("hunter2"));
}

#[test]
fn export_with_weak_alpha_is_rejected() {
    let weak = EXPORT.replace("alpha: 1.0\n    Lactate", "alpha: 0.5\n    Lactate");
    let findings = validate_skill(&parse_skill(&weak).unwrap());
    assert!(
        findings
            .iter()
            .any(|f| f.code == "export-alpha" && f.severity == Severity::Error),
        "{findings:?}"
    );
}

#[test]
fn content_hash_ignores_formatting() {
    let a = parse_skill(EXPORT).unwrap();
    let b = parse_skill(&a.to_yaml()).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.content_hash(), b.content_hash());
    assert_ne!(
        a.content_hash(),
        parse_skill(RESEARCH).unwrap().content_hash()
    );
}

proptest! {
    #[test]
    fn alpha_range_is_enforced(alpha in -2.0f64..6.0) {
        let text = RESEARCH.replace("default_alpha: 0.5", &format!("default_alpha: {alpha}"));
        let spec = parse_skill(&text).unwrap();
        let bad = validate_skill(&spec).iter().any(|f| f.code == "alpha-range");
        prop_assert_eq!(bad, alpha < 0.0);
    }
}
