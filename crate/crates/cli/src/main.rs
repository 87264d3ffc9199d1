use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use skillview_core::attacks::{
    make_leakage_split, AttackFamily, AttackInput, AttackRegistry, LeakageLevel,
};
use skillview_core::manifold::standardize;
use skillview_core::metrics::PhysicalRange;
use skillview_core::operators::CalibrationCache;
use skillview_core::pipeline::{
    default_ranges, evaluate_view, grid_window, ingest_long_csv, read_labels, read_ranges,
    read_view, run_and_write, write_events_csv, write_labels, CohortView, EvalOptions, EvalReport,
    RunOptions,
};
use skillview_core::rng::SecretSeed;
use skillview_core::skills::{has_errors, load_skill, validate_skill, Severity};
use skillview_core::synth::{gen_cohort, gen_labels, SynthSpec};

mod report;

const EXIT_POLICY: u8 = 1;
const EXIT_IO: u8 = 2;
const EXIT_SANITY: u8 = 3;

/// Privacy-enhanced numeric views of clinical time series.
///
/// Exit codes: 0 success, 1 validation or policy error, 2 I/O or format
/// error, 3 sanity-gate failure.
#[derive(Debug, Parser)]
#[command(name = "skillview", version, about, long_about)]
struct Cli {
    /// Worker threads; defaults to the number of available cores.
    #[arg(long, global = true)]
    jobs: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic cohort as a long-format events CSV.
    Synth(SynthArgs),
    /// Precompute operator calibrations for a list of alphas.
    Calibrate(CalibrateArgs),
    /// Apply a skill to a cohort and write a versioned view with its manifest.
    Run(RunArgs),
    /// Compute fidelity metrics, sanity gates and attacks for a released view.
    Evaluate(EvaluateArgs),
    /// Run one attack family against a released view.
    Attack(AttackArgs),
    /// Summarize an evaluation report.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
struct SynthArgs {
    /// Synthetic cohort spec (YAML); the built-in default when omitted.
    #[arg(long)]
    spec: Option<PathBuf>,
    /// Output events CSV (`stay_id,variable,hour,value`).
    #[arg(long)]
    out: PathBuf,
    /// Also write noisy outcome labels (`stay_id,label`) here.
    #[arg(long)]
    labels: Option<PathBuf>,
    /// Also write the physical ranges of the generated variables here.
    #[arg(long)]
    ranges: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct CalibrateArgs {
    /// Comma-separated alphas, e.g. `0.5,1.0,2.0`.
    #[arg(long, value_delimiter = ',', required = true)]
    alpha_list: Vec<f64>,
    /// Output calibration cache (JSON).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct RunArgs {
    /// Skill YAML.
    #[arg(long)]
    skill: PathBuf,
    /// Raw long-format events CSV.
    #[arg(long)]
    cohort: PathBuf,
    /// Name of the environment variable holding the secret seed. Defaults to
    /// the variable named by the skill's `qmix.secret_seed: "${NAME}"`.
    #[arg(long, value_name = "NAME")]
    seed_env: Option<String>,
    /// Run nonce; distinct nonces give independent releases.
    #[arg(long, default_value_t = 0)]
    nonce: u64,
    /// Output directory for the view, manifest and `.current` index.
    #[arg(long)]
    out: PathBuf,
    /// Physical ranges CSV (`variable,lo,hi`); built-in ranges when omitted.
    #[arg(long)]
    ranges: Option<PathBuf>,
    /// Calibration cache written by `calibrate`.
    #[arg(long)]
    calibration: Option<PathBuf>,
    /// Not accepted: secrets must not appear on the command line.
    #[arg(long, hide = true, value_name = "VALUE")]
    seed: Option<String>,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    /// Raw long-format events CSV.
    #[arg(long)]
    raw: PathBuf,
    /// Released view CSV written by `run`; its manifest must sit alongside.
    #[arg(long = "priv")]
    private: PathBuf,
    /// Skill YAML the view was produced with.
    #[arg(long)]
    skill: PathBuf,
    /// Output evaluation report (JSON).
    #[arg(long)]
    report: PathBuf,
    /// Outcome labels (`stay_id,label`) for the downstream AUROC check.
    #[arg(long)]
    labels: Option<PathBuf>,
    /// Attack families to run (A, B, C, D or full tags); the skill's list when omitted.
    #[arg(long = "family", value_delimiter = ',')]
    families: Vec<String>,
    /// Leakage level override (L0, L1, L2).
    #[arg(long)]
    level: Option<String>,
    /// Seed for the paired/heldout split.
    #[arg(long, default_value_t = 0)]
    split_seed: u64,
    /// Seed for attack randomness.
    #[arg(long, default_value_t = 0)]
    attack_seed: u64,
    /// Physical ranges CSV (`variable,lo,hi`); built-in ranges when omitted.
    #[arg(long)]
    ranges: Option<PathBuf>,
    /// Calibration cache written by `calibrate`.
    #[arg(long)]
    calibration: Option<PathBuf>,
    /// Exit 0 even when threshold alerts fire.
    #[arg(long)]
    no_fail_on_alert: bool,
}

#[derive(Debug, Args)]
struct AttackArgs {
    /// Raw long-format events CSV.
    #[arg(long)]
    raw: PathBuf,
    /// Released view CSV written by `run`.
    #[arg(long = "priv")]
    private: PathBuf,
    /// Attack family (A, B, C, D or full tag).
    #[arg(long)]
    family: String,
    /// Leakage level (L0, L1, L2).
    #[arg(long, default_value = "L2")]
    level: String,
    /// Seed for the split and the attack's own randomness (not a secret).
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Restrict to these variables.
    #[arg(long = "variable", value_delimiter = ',')]
    variables: Vec<String>,
    /// Output JSON; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Physical ranges CSV (`variable,lo,hi`); built-in ranges when omitted.
    #[arg(long)]
    ranges: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ReportFormat {
    Md,
    Csv,
}

#[derive(Debug, Args)]
struct ReportArgs {
    /// Evaluation report JSON written by `evaluate`.
    #[arg(long)]
    eval: PathBuf,
    #[arg(long, value_enum, default_value = "md")]
    format: ReportFormat,
    /// Output file; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

/// A failure with an explicit exit code.
#[derive(Debug)]
struct Exit {
    code: u8,
    message: String,
}

impl std::fmt::Display for Exit {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for Exit {}

fn exit(code: u8, message: impl Into<String>) -> anyhow::Error {
    Exit {
        code,
        message: message.into(),
    }
    .into()
}

fn exit_code(err: &anyhow::Error) -> u8 {
    use skillview_core::Error as E;
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<Exit>() {
            return e.code;
        }
        if let Some(e) = cause.downcast_ref::<E>() {
            return match e {
                E::SanityFailure { .. } => EXIT_SANITY,
                E::Io(_)
                | E::Json(_)
                | E::Csv(_)
                | E::FormatError(_)
                | E::IngestError(_)
                | E::EmptyCohort
                | E::IntegrityError(_) => EXIT_IO,
                _ => EXIT_POLICY,
            };
        }
        if cause.downcast_ref::<std::io::Error>().is_some()
            || cause.downcast_ref::<serde_json::Error>().is_some()
        {
            return EXIT_IO;
        }
    }
    EXIT_POLICY
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global()
        {
            eprintln!("error: cannot size the worker pool: {e}");
            return ExitCode::from(EXIT_POLICY);
        }
    }
    let result = match cli.command {
        Command::Synth(a) => cmd_synth(a),
        Command::Calibrate(a) => cmd_calibrate(a),
        Command::Run(a) => cmd_run(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Attack(a) => cmd_attack(a),
        Command::Report(a) => cmd_report(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn write_file(path: &Path, contents: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn load_ranges(path: Option<&Path>) -> Result<BTreeMap<String, PhysicalRange>> {
    match path {
        Some(p) => read_ranges(p).with_context(|| format!("reading ranges {}", p.display())),
        None => Ok(default_ranges()),
    }
}

fn load_cache(path: Option<&Path>, alphas: &[f64]) -> Result<CalibrationCache> {
    let mut cache = match path {
        Some(p) => CalibrationCache::from_json(
            &fs::read_to_string(p)
                .with_context(|| format!("reading calibration {}", p.display()))?,
        )?,
        None => CalibrationCache::default(),
    };
    for &a in alphas {
        cache.get_or_compute(a);
    }
    Ok(cache)
}

fn load_raw(
    path: &Path,
    window: [u32; 2],
    ranges: &BTreeMap<String, PhysicalRange>,
) -> Result<CohortView> {
    let ingest = ingest_long_csv(path).with_context(|| format!("ingesting {}", path.display()))?;
    if ingest.malformed > 0 || ingest.pre_admission > 0 {
        eprintln!(
            "note: {} malformed and {} pre-admission rows skipped out of {}",
            ingest.malformed, ingest.pre_admission, ingest.rows
        );
    }
    Ok(grid_window(&ingest.events, window, ranges)?)
}

/// Grid the raw events over the window the released view covers.
fn load_pair(
    raw: &Path,
    private: &Path,
    ranges: Option<&Path>,
) -> Result<(CohortView, CohortView)> {
    let (view, _) =
        read_view(private).with_context(|| format!("reading view {}", private.display()))?;
    let window = [view.start_hour, view.start_hour + view.t_len as u32];
    let raw = load_raw(raw, window, &load_ranges(ranges)?)?;
    raw.same_shape(&view)
        .context("raw cohort and released view differ in shape")?;
    Ok((raw, view))
}

fn cmd_synth(a: SynthArgs) -> Result<()> {
    let spec = match &a.spec {
        Some(p) => SynthSpec::from_yaml(
            &fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?,
        )?,
        None => SynthSpec::default(),
    };
    let cohort = gen_cohort(&spec)?;
    let mut buf = Vec::new();
    write_events_csv(&cohort, &mut buf)?;
    write_file(&a.out, &buf)?;
    if let Some(p) = &a.labels {
        write_labels(p, &gen_labels(&cohort, &spec.label_rule, spec.seed)?)?;
    }
    if let Some(p) = &a.ranges {
        let ranges = spec
            .variables
            .iter()
            .map(|v| Ok((v.name.clone(), v.physical_range()?)))
            .collect::<skillview_core::Result<BTreeMap<_, _>>>()?;
        skillview_core::pipeline::write_ranges(p, &ranges)?;
    }
    eprintln!(
        "wrote {} stays x {} hours to {}",
        cohort.n_stays(),
        cohort.t_len,
        a.out.display()
    );
    Ok(())
}

fn cmd_calibrate(a: CalibrateArgs) -> Result<()> {
    if let Some(bad) = a.alpha_list.iter().find(|x| !(**x >= 0.0 && x.is_finite())) {
        return Err(exit(
            EXIT_POLICY,
            format!("alpha {bad} must be finite and >= 0"),
        ));
    }
    let cache = CalibrationCache::for_alphas(&a.alpha_list);
    write_file(&a.out, cache.to_json()?.as_bytes())?;
    eprintln!(
        "calibrated {} alphas into {}",
        cache.entries.len(),
        a.out.display()
    );
    Ok(())
}

fn report_findings(path: &Path) -> Result<skillview_core::skills::SkillSpec> {
    let spec = load_skill(path).with_context(|| format!("loading skill {}", path.display()))?;
    let findings = validate_skill(&spec);
    for f in &findings {
        eprintln!("{f}");
    }
    if has_errors(&findings) {
        let n = findings
            .iter()
            .filter(|f| f.severity == Severity::Error)
            .count();
        return Err(exit(
            EXIT_POLICY,
            format!("skill {} rejected with {n} error finding(s)", spec.id),
        ));
    }
    Ok(spec)
}

fn cmd_run(a: RunArgs) -> Result<()> {
    if a.seed.is_some() {
        return Err(exit(
            EXIT_POLICY,
            "--seed is not accepted: secrets must not appear on the command line. \
             Export the seed in an environment variable and pass its name with --seed-env NAME",
        ));
    }
    let spec = report_findings(&a.skill)?;
    let env_name = match (&a.seed_env, spec.secret_env_name()) {
        (Some(n), _) => n.clone(),
        (None, Some(n)) => n.to_string(),
        (None, None) => {
            return Err(exit(
                EXIT_POLICY,
                "no secret seed source: pass --seed-env NAME or set qmix.secret_seed: \"${NAME}\" in the skill",
            ))
        }
    };
    let secret = SecretSeed::from_env(&env_name).ok_or_else(|| {
        exit(
            EXIT_POLICY,
            format!("environment variable {env_name} is unset or empty"),
        )
    })?;
    let ranges = load_ranges(a.ranges.as_deref())?;
    let cohort = load_raw(&a.cohort, spec.output.time_window_hours, &ranges)?;
    let opts = RunOptions {
        cache: load_cache(a.calibration.as_deref(), &spec.alphas())?,
        ..RunOptions::default()
    };
    let (_, paths, manifest) =
        run_and_write(&spec, &cohort, &Arc::new(secret), a.nonce, &opts, &a.out)?;
    println!("{}", paths.csv.display());
    eprintln!(
        "released {} variables over {} stays as {}",
        manifest.variables.len(),
        cohort.n_stays(),
        manifest.view_name.as_deref().unwrap_or_default()
    );
    Ok(())
}

fn parse_families(tags: &[String]) -> Result<Option<Vec<AttackFamily>>> {
    if tags.is_empty() {
        return Ok(None);
    }
    let mut out = tags
        .iter()
        .map(|t| AttackFamily::from_tag(t.trim()))
        .collect::<skillview_core::Result<Vec<_>>>()?;
    out.sort();
    out.dedup();
    Ok(Some(out))
}

fn cmd_evaluate(a: EvaluateArgs) -> Result<()> {
    let spec =
        load_skill(&a.skill).with_context(|| format!("loading skill {}", a.skill.display()))?;
    let (raw, view) = load_pair(&a.raw, &a.private, a.ranges.as_deref())?;
    let opts = EvalOptions {
        families: parse_families(&a.families)?,
        level: a
            .level
            .as_deref()
            .map(LeakageLevel::from_name)
            .transpose()?,
        split_seed: a.split_seed,
        attack_seed: a.attack_seed,
        labels: a.labels.as_deref().map(read_labels).transpose()?,
        cache: load_cache(a.calibration.as_deref(), &spec.alphas())?,
        ..EvalOptions::default()
    };
    let report = evaluate_view(&raw, &view, &spec, &opts)?;
    write_file(&a.report, report.to_json()?.as_bytes())?;
    let alerts = report.alerts();
    for al in &alerts {
        eprintln!(
            "ALERT {} {}: {:.4} (limit {:.4})",
            al.check, al.variable, al.value, al.limit
        );
    }
    eprintln!("wrote evaluation report to {}", a.report.display());
    if !alerts.is_empty() && !a.no_fail_on_alert {
        return Err(exit(
            EXIT_POLICY,
            format!("{} threshold alert(s)", alerts.len()),
        ));
    }
    Ok(())
}

fn cmd_attack(a: AttackArgs) -> Result<()> {
    let family = AttackFamily::from_tag(&a.family)?;
    let level = LeakageLevel::from_name(&a.level)?;
    let (raw, view) = load_pair(&a.raw, &a.private, a.ranges.as_deref())?;
    let registry = AttackRegistry::with_builtins();
    let mut reports = Vec::new();
    for (name, r) in &raw.variables {
        if !a.variables.is_empty() && !a.variables.contains(name) {
            continue;
        }
        let p = &view.variables[name];
        let ids = r.stay_ids();
        let to_z = |s: &Vec<f64>| standardize(s, &r.stats).into_inner();
        let zr: Vec<Vec<f64>> = r.series().iter().map(to_z).collect();
        let zp: Vec<Vec<f64>> = p.series().iter().map(to_z).collect();
        let split = make_leakage_split(&ids, level, a.seed)?;
        let input = AttackInput {
            variable: name,
            stay_ids: &ids,
            raw: &zr,
            released: &zp,
            split: &split,
            seed: a.seed,
            fingerprint: None,
        };
        reports.extend(registry.run(&[family], &input)?);
    }
    if reports.is_empty() {
        bail!("no matching variables in the view");
    }
    let json = serde_json::to_string_pretty(&reports)?;
    match &a.out {
        Some(p) => write_file(p, json.as_bytes())?,
        None => println!("{json}"),
    }
    Ok(())
}

fn cmd_report(a: ReportArgs) -> Result<()> {
    let text =
        fs::read_to_string(&a.eval).with_context(|| format!("reading {}", a.eval.display()))?;
    let report: EvalReport =
        serde_json::from_str(&text).map_err(|e| anyhow!(e).context("parsing evaluation report"))?;
    let out = match a.format {
        ReportFormat::Md => report::markdown(&report),
        ReportFormat::Csv => report::csv(&report)?,
    };
    match &a.out {
        Some(p) => write_file(p, out.as_bytes())?,
        None => print!("{out}"),
    }
    Ok(())
}
