//! Ingestion, gridding, skill execution, evaluation, alerting and
//! versioned persistence of released views.

mod cohort;
mod evaluate;
mod ingest;
mod run;
mod store;

pub use cohort::{default_ranges, read_ranges, write_ranges, CohortView, VariableData};
pub use evaluate::{
    check_thresholds, evaluate_view, threshold_checks, Alert, EvalOptions, EvalReport,
    ThresholdCheck, ThresholdPolicy, EVAL_SCHEMA_VERSION,
};
pub use ingest::{
    grid_hourly, grid_window, ingest_long_csv, ingest_long_reader, write_events_csv, IngestReport,
    RawEvent, DEFAULT_T_MAX, LONG_HEADER, MAX_MALFORMED_FRACTION,
};
pub use run::{
    run_skill, GateReport, RunManifest, RunOptions, VariableRun, C1_TOLERANCE, C2_SLACK,
    MANIFEST_SCHEMA_VERSION,
};
pub use store::{
    current_view, index_path, manifest_path_for, read_view, rollback, sha256_hex, view_from_csv,
    view_to_csv, write_view, ViewPaths,
};

/// Run a skill and persist the result. Nothing is written unless every
/// column passes the sanity gate.
pub fn run_and_write(
    spec: &crate::skills::SkillSpec,
    cohort: &CohortView,
    secret: &std::sync::Arc<crate::rng::SecretSeed>,
    run_nonce: u64,
    opts: &RunOptions,
    dir: &std::path::Path,
) -> crate::Result<(CohortView, ViewPaths, RunManifest)> {
    let (view, manifest) = run_skill(spec, cohort, secret, run_nonce, opts)?;
    let (paths, manifest) = write_view(dir, &view, &manifest, spec.output.format)?;
    Ok((view, paths, manifest))
}

/// Read labels from a `stay_id,label` CSV with 0/1 labels.
pub fn read_labels(
    path: &std::path::Path,
) -> crate::Result<std::collections::BTreeMap<String, bool>> {
    let mut rdr = csv::Reader::from_path(path)?;
    let mut out = std::collections::BTreeMap::new();
    for rec in rdr.records() {
        let rec = rec?;
        let label = match rec.get(1).map(str::trim) {
            Some("1") | Some("true") => true,
            Some("0") | Some("false") => false,
            other => return Err(crate::Error::FormatError(format!("bad label {other:?}"))),
        };
        out.insert(rec[0].to_string(), label);
    }
    Ok(out)
}

pub fn write_labels(
    path: &std::path::Path,
    labels: &std::collections::BTreeMap<String, bool>,
) -> crate::Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["stay_id", "label"])?;
    for (id, l) in labels {
        w.write_record([id.as_str(), if *l { "1" } else { "0" }])?;
    }
    w.flush()?;
    Ok(())
}
