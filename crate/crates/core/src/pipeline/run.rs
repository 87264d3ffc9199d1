use std::collections::BTreeMap;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::cohort::{CohortView, VariableData};
use crate::error::{Error, Result};
use crate::manifold::{
    linf_delta, standardize, unchanged_fraction, ColumnStats, DEFAULT_UNCHANGED_TOL,
};
use crate::metrics::moment_drift;
use crate::operators::{apply_with_layout, CalibrationCache, OperatorRegistry};
use crate::rng::{RandomnessContext, SecretSeed};
use crate::skills::{has_errors, resolve_variable_plan, validate_skill, SkillSpec};

pub const MANIFEST_SCHEMA_VERSION: u32 = 1;

/// Relative tolerance on mean and standard deviation drift.
pub const C1_TOLERANCE: f64 = 1e-9;

/// Absolute slack on the displacement bound, per unit of `max(1, alpha)`.
pub const C2_SLACK: f64 = 1e-12;

/// Geometric sanity numbers for one released column.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GateReport {
    pub alpha: f64,
    pub d_mu: f64,
    pub d_sigma: f64,
    pub linf: f64,
    pub unchanged_fraction: f64,
    /// `C1_TOLERANCE - max(d_mu, d_sigma)`; negative means a violation.
    pub c1_margin: f64,
    /// `alpha - linf`; below `-C2_SLACK * max(1, alpha)` means a violation.
    pub c2_margin: f64,
}

impl GateReport {
    /// Compare a raw and released column in z-space using the raw stats.
    pub fn compute(raw: &[f64], released: &[f64], stats: &ColumnStats, alpha: f64) -> Result<Self> {
        let (d_mu, d_sigma) = moment_drift(raw, released);
        let z = standardize(raw, stats);
        let z2 = standardize(released, stats);
        let linf = linf_delta(z.as_slice(), z2.as_slice())?;
        let unchanged = unchanged_fraction(z.as_slice(), z2.as_slice(), DEFAULT_UNCHANGED_TOL)?;
        Ok(Self {
            alpha,
            d_mu,
            d_sigma,
            linf,
            unchanged_fraction: unchanged,
            c1_margin: C1_TOLERANCE - d_mu.max(d_sigma),
            c2_margin: alpha - linf,
        })
    }

    pub fn c1_ok(&self) -> bool {
        self.c1_margin >= 0.0
    }

    pub fn c2_ok(&self) -> bool {
        self.c2_margin >= -C2_SLACK * self.alpha.max(1.0)
    }

    pub fn passed(&self) -> bool {
        self.c1_ok() && self.c2_ok()
    }

    fn failure_reason(&self) -> Option<String> {
        if !self.c1_ok() {
            Some(format!(
                "C1 moment drift d_mu={:.3e} d_sigma={:.3e} exceeds {C1_TOLERANCE:e}",
                self.d_mu, self.d_sigma
            ))
        } else if !self.c2_ok() {
            Some(format!(
                "C2 displacement {:.6} exceeds alpha {}",
                self.linf, self.alpha
            ))
        } else {
            None
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariableRun {
    pub operator: String,
    pub plan_fingerprint: String,
    pub alpha: f64,
    pub qmix: bool,
    pub n_stays: usize,
    pub column_len: usize,
    pub gate: GateReport,
}

/// Run metadata written next to every released view. Holds no secret
/// material.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema_version: u32,
    pub skill_id: String,
    pub skill_hash: String,
    pub run_nonce: u64,
    pub cohort_fingerprint: String,
    pub started_at: String,
    pub finished_at: String,
    pub software_version: String,
    pub table: String,
    pub variables: BTreeMap<String, VariableRun>,
    /// SHA-256 of the persisted CSV, filled in on write.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub content_hash: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub view_name: Option<String>,
}

impl RunManifest {
    /// Versioned file stem `{table}__{skill hash prefix}__{nonce}`.
    pub fn versioned_name(&self) -> String {
        format!(
            "{}__{}__{}",
            self.table,
            &self.skill_hash[..12.min(self.skill_hash.len())],
            self.run_nonce
        )
    }
}

#[derive(Clone)]
pub struct RunOptions {
    pub cache: CalibrationCache,
    pub registry: OperatorRegistry,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            cache: CalibrationCache::default(),
            registry: OperatorRegistry::with_builtins(),
        }
    }
}

fn run_variable(
    spec: &SkillSpec,
    name: &str,
    data: &VariableData,
    secret: &Arc<SecretSeed>,
    run_nonce: u64,
    opts: &RunOptions,
) -> Result<(VariableData, VariableRun)> {
    let (column, layout) = data.column();
    let plan = resolve_variable_plan(spec, name, column.len(), &opts.cache)?;
    let op = opts.registry.build(&plan.config)?;
    let ctx = RandomnessContext::new(Arc::clone(secret), "", name, run_nonce);
    let released = apply_with_layout(&column, &data.stats, op.as_ref(), &layout, &ctx)?;
    if released.len() != column.len() || released.iter().any(|v| !v.is_finite()) {
        return Err(Error::SanityFailure {
            variable: name.to_string(),
            reason: "operator returned a malformed column".into(),
        });
    }
    let gate = GateReport::compute(&column, &released, &data.stats, plan.config.alpha)?;
    if let Some(reason) = gate.failure_reason() {
        return Err(Error::SanityFailure {
            variable: name.to_string(),
            reason,
        });
    }
    let mut stays = BTreeMap::new();
    for seg in layout.segments() {
        let id = seg.stay_id.clone().expect("cohort layouts carry stay ids");
        stays.insert(id, released[seg.range()].to_vec());
    }
    let run = VariableRun {
        operator: plan.operator.clone(),
        plan_fingerprint: plan.fingerprint(),
        alpha: plan.config.alpha,
        qmix: plan.qmix,
        n_stays: data.stays.len(),
        column_len: column.len(),
        gate,
    };
    Ok((
        VariableData {
            stays,
            stats: data.stats,
            range: data.range.clone(),
        },
        run,
    ))
}

/// Transform every variable of `cohort` per the skill. Any column failing
/// the C1/C2 gate aborts the run with [`Error::SanityFailure`].
pub fn run_skill(
    spec: &SkillSpec,
    cohort: &CohortView,
    secret: &Arc<SecretSeed>,
    run_nonce: u64,
    opts: &RunOptions,
) -> Result<(CohortView, RunManifest)> {
    let findings = validate_skill(spec);
    if has_errors(&findings) {
        let msgs: Vec<String> = findings.iter().map(ToString::to_string).collect();
        return Err(Error::ConfigError(format!(
            "skill {} failed validation: {}",
            spec.id,
            msgs.join("; ")
        )));
    }
    let started_at = chrono::Utc::now().to_rfc3339();
    let results: Vec<(String, VariableData, VariableRun)> = cohort
        .variables
        .par_iter()
        .map(|(name, data)| {
            run_variable(spec, name, data, secret, run_nonce, opts)
                .map(|(d, r)| (name.clone(), d, r))
        })
        .collect::<Result<_>>()?;
    let mut view = CohortView::new(cohort.start_hour, cohort.t_len);
    let mut variables = BTreeMap::new();
    for (name, data, run) in results {
        view.variables.insert(name.clone(), data);
        variables.insert(name, run);
    }
    let manifest = RunManifest {
        schema_version: MANIFEST_SCHEMA_VERSION,
        skill_id: spec.id.clone(),
        skill_hash: spec.content_hash(),
        run_nonce,
        cohort_fingerprint: cohort.fingerprint(),
        started_at,
        finished_at: chrono::Utc::now().to_rfc3339(),
        software_version: env!("CARGO_PKG_VERSION").to_string(),
        table: spec.output.table.clone(),
        variables,
        content_hash: None,
        view_name: None,
    };
    Ok((view, manifest))
}
