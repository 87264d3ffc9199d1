use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const SEED: &str = "cli-test-secret-5e0b2c9a71";

fn skill(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../core/assets/skills")
        .join(name)
}

fn skillview(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_skillview"))
        .args(args)
        .env("HOSPITAL_SEED", SEED)
        .env("OTHER_SEED", "other-secret-value")
        .env_remove("UNSET_SEED_VAR")
        .output()
        .expect("spawn skillview")
}

fn ok(out: &Output) {
    assert!(
        out.status.success(),
        "exit {:?}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn synth(dir: &Path) -> (PathBuf, PathBuf) {
    let events = dir.join("events.csv");
    let labels = dir.join("labels.csv");
    ok(&skillview(&[
        "synth",
        "--out",
        s(&events),
        "--labels",
        s(&labels),
    ]));
    (events, labels)
}

fn run(dir: &Path, events: &Path, skill_file: &str, extra: &[&str]) -> (Output, PathBuf) {
    let out_dir = dir.join("views");
    let sk = skill(skill_file);
    let mut args = vec![
        "run",
        "--skill",
        s(&sk),
        "--cohort",
        s(events),
        "--out",
        s(&out_dir),
    ];
    args.extend_from_slice(extra);
    (skillview(&args), out_dir)
}

fn view_path(out: &Output) -> PathBuf {
    PathBuf::from(String::from_utf8_lossy(&out.stdout).trim())
}

#[test]
fn full_pipeline_emits_every_artifact() {
    let tmp = tempfile::tempdir().unwrap();
    let (events, labels) = synth(tmp.path());
    let cache = tmp.path().join("cache.json");
    ok(&skillview(&[
        "calibrate",
        "--alpha-list",
        "0.5,1.0",
        "--out",
        s(&cache),
    ]));

    let (out, views) = run(
        tmp.path(),
        &events,
        "in_hospital_vitals_explore.yaml",
        &[
            "--seed-env",
            "HOSPITAL_SEED",
            "--nonce",
            "4",
            "--calibration",
            s(&cache),
            "--jobs",
            "2",
        ],
    );
    ok(&out);
    let view = view_path(&out);
    assert!(view.exists());
    assert!(views.join("priv_vitals_hourly_v1.current").exists());
    let manifest = skillview_manifest(&view);
    assert!(manifest.exists());

    let report = tmp.path().join("eval.json");
    let sk = skill("in_hospital_vitals_explore.yaml");
    let ev = skillview(&[
        "evaluate",
        "--raw",
        s(&events),
        "--priv",
        s(&view),
        "--skill",
        s(&sk),
        "--report",
        s(&report),
        "--labels",
        s(&labels),
        "--family",
        "A,B",
    ]);
    ok(&ev);
    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(json["skill_id"], "skill_in_hosp_vitals_explore");
    assert!(json["metrics"]["downstream_auroc"].is_array());

    let md = skillview(&["report", "--eval", s(&report), "--format", "md"]);
    ok(&md);
    let text = String::from_utf8_lossy(&md.stdout);
    assert!(text.contains("## Fidelity") && text.contains("| HR |"));
    let csv_out = tmp.path().join("eval.csv");
    ok(&skillview(&[
        "report",
        "--eval",
        s(&report),
        "--format",
        "csv",
        "--out",
        s(&csv_out),
    ]));
    assert!(std::fs::read_to_string(&csv_out)
        .unwrap()
        .starts_with("section,variable,metric,value"));

    let attack = skillview(&[
        "attack",
        "--raw",
        s(&events),
        "--priv",
        s(&view),
        "--family",
        "A",
        "--level",
        "L2",
        "--seed",
        "3",
    ]);
    ok(&attack);
    let reports: serde_json::Value = serde_json::from_slice(&attack.stdout).unwrap();
    assert_eq!(reports.as_array().unwrap().len(), 3);
    assert!(reports[0]["metrics"]["r2"].is_number());
}

fn skillview_manifest(view: &Path) -> PathBuf {
    let stem = view.file_stem().unwrap().to_string_lossy().into_owned();
    view.with_file_name(format!("{stem}.manifest.json"))
}

#[test]
fn export_skill_reads_its_seed_reference_and_never_leaks_it() {
    let tmp = tempfile::tempdir().unwrap();
    let (events, _) = synth(tmp.path());
    let (out, views) = run(
        tmp.path(),
        &events,
        "export_strong_privacy.yaml",
        &["--nonce", "1"],
    );
    ok(&out);
    assert!(!String::from_utf8_lossy(&out.stdout).contains(SEED));
    assert!(!stderr(&out).contains(SEED));
    for entry in std::fs::read_dir(&views).unwrap() {
        let bytes = std::fs::read(entry.unwrap().path()).unwrap();
        assert!(!bytes.windows(SEED.len()).any(|w| w == SEED.as_bytes()));
    }
}

#[test]
fn releases_are_deterministic_and_keyed_by_the_secret() {
    let tmp = tempfile::tempdir().unwrap();
    let (events, _) = synth(tmp.path());
    let mut bytes = Vec::new();
    for (i, env) in ["HOSPITAL_SEED", "HOSPITAL_SEED", "OTHER_SEED"]
        .iter()
        .enumerate()
    {
        let dir = tmp.path().join(format!("r{i}"));
        std::fs::create_dir_all(&dir).unwrap();
        let (out, _) = run(
            &dir,
            &events,
            "export_strong_privacy.yaml",
            &["--seed-env", env, "--nonce", "9"],
        );
        ok(&out);
        bytes.push(std::fs::read(view_path(&out)).unwrap());
    }
    assert_eq!(bytes[0], bytes[1]);
    assert_ne!(bytes[0], bytes[2]);
}

#[test]
fn literal_seed_flag_is_rejected_with_guidance() {
    let tmp = tempfile::tempdir().unwrap();
    let (events, _) = synth(tmp.path());
    let (out, views) = run(
        tmp.path(),
        &events,
        "export_strong_privacy.yaml",
        &["--seed", "s3cr3t-literal"],
    );
    assert_eq!(out.status.code(), Some(1));
    let err = stderr(&out);
    assert!(err.contains("--seed-env"), "{err}");
    assert!(!err.contains("s3cr3t-literal"));
    assert!(!views.exists());
}

#[test]
fn missing_seed_variable_is_a_validation_error() {
    let tmp = tempfile::tempdir().unwrap();
    let (events, _) = synth(tmp.path());
    let (out, _) = run(
        tmp.path(),
        &events,
        "in_hospital_vitals_explore.yaml",
        &["--seed-env", "UNSET_SEED_VAR"],
    );
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("UNSET_SEED_VAR"));
    let (out, _) = run(tmp.path(), &events, "in_hospital_vitals_explore.yaml", &[]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("--seed-env"));
}

#[test]
fn policy_violation_exits_one_with_the_finding() {
    let tmp = tempfile::tempdir().unwrap();
    let (events, _) = synth(tmp.path());
    let (out, views) = run(
        tmp.path(),
        &events,
        "export_with_householder.yaml",
        &["--seed-env", "HOSPITAL_SEED"],
    );
    assert_eq!(out.status.code(), Some(1));
    assert!(
        stderr(&out).contains("ERROR [export-t3]"),
        "{}",
        stderr(&out)
    );
    assert!(!views.exists());
}

#[test]
fn tampered_view_exits_two() {
    let tmp = tempfile::tempdir().unwrap();
    let (events, _) = synth(tmp.path());
    let (out, _) = run(tmp.path(), &events, "export_strong_privacy.yaml", &[]);
    ok(&out);
    let view = view_path(&out);
    let mut text = std::fs::read_to_string(&view).unwrap();
    text.push_str("stay00000,HR,0,80\n");
    std::fs::write(&view, text).unwrap();
    let sk = skill("export_strong_privacy.yaml");
    let report = tmp.path().join("r.json");
    let ev = skillview(&[
        "evaluate",
        "--raw",
        s(&events),
        "--priv",
        s(&view),
        "--skill",
        s(&sk),
        "--report",
        s(&report),
    ]);
    assert_eq!(ev.status.code(), Some(2), "{}", stderr(&ev));
    assert!(stderr(&ev).contains("integrity"));
}

#[test]
fn missing_input_exits_two() {
    let tmp = tempfile::tempdir().unwrap();
    let (out, _) = run(
        tmp.path(),
        &tmp.path().join("nope.csv"),
        "export_strong_privacy.yaml",
        &[],
    );
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));
}

#[test]
fn help_documents_the_flags() {
    let out = skillview(&["run", "--help"]);
    ok(&out);
    let text = String::from_utf8_lossy(&out.stdout);
    for flag in [
        "--skill",
        "--cohort",
        "--seed-env",
        "--nonce",
        "--out",
        "--jobs",
    ] {
        assert!(text.contains(flag), "{flag} missing from help");
    }
    let top = String::from_utf8_lossy(&skillview(&["--help"]).stdout).into_owned();
    assert!(top.contains("Exit codes"));
}
