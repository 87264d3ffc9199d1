//! YAML skill documents: parsing, policy validation and per-variable plan
//! resolution.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::attacks::{AttackFamily, LeakageLevel};
use crate::error::{Error, Result};
use crate::operators::{
    CalibrationCache, OperatorConfig, OperatorKind, QmixConfig, DEFAULT_BANDWIDTH,
    DEFAULT_BLOCK_LENGTH,
};

/// Smallest alpha accepted for externally shared views.
pub const EXPORT_MIN_ALPHA: f64 = 0.8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Usage {
    InHospitalResearch,
    Export,
    TeachingDemo,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThreatModel {
    pub leakage: LeakageLevel,
    #[serde(default)]
    pub attacks: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VariablePlan {
    pub ops: Vec<String>,
    /// Falls back to `default_alpha` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OperatorsSection {
    pub default_alpha: f64,
    #[serde(default)]
    pub per_variable: BTreeMap<String, VariablePlan>,
}

fn default_block_length() -> usize {
    DEFAULT_BLOCK_LENGTH
}

fn default_bandwidth() -> usize {
    DEFAULT_BANDWIDTH
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QmixSection {
    pub enabled: bool,
    #[serde(default)]
    pub variables: Vec<String>,
    #[serde(default = "default_block_length")]
    pub block_length: usize,
    #[serde(default = "default_bandwidth")]
    pub bandwidth: usize,
    /// Environment reference such as `${HOSPITAL_SEED}`; never a literal.
    #[serde(
        rename = "secret_seed",
        default,
        skip_serializing_if = "Option::is_none"
    )]
    pub secret_seed_ref: Option<String>,
}

impl Default for QmixSection {
    fn default() -> Self {
        Self {
            enabled: false,
            variables: Vec::new(),
            block_length: DEFAULT_BLOCK_LENGTH,
            bandwidth: DEFAULT_BANDWIDTH,
            secret_seed_ref: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputFormat {
    Long,
    Wide,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    pub table: String,
    /// Half-open window `[lo, hi)` in hours since admission.
    pub time_window_hours: [u32; 2],
    pub format: OutputFormat,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SkillSpec {
    pub id: String,
    pub usage: Usage,
    pub threat_model: ThreatModel,
    pub operators: OperatorsSection,
    #[serde(default)]
    pub qmix: QmixSection,
    pub output: OutputSpec,
}

/// Name of the environment variable in a `${NAME}` reference.
pub fn env_reference_name(reference: &str) -> Option<&str> {
    let inner = reference.strip_prefix("${")?.strip_suffix('}')?;
    let mut chars = inner.chars();
    let first = chars.next()?;
    if !(first.is_ascii_alphabetic() || first == '_')
        || !chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
    {
        return None;
    }
    Some(inner)
}

fn map_yaml_error(e: serde_yaml::Error) -> Error {
    let msg = e.to_string();
    if let Some(rest) = msg
        .strip_prefix("missing field `")
        .or_else(|| msg.split("missing field `").nth(1))
    {
        return Error::MissingField(rest.split('`').next().unwrap_or_default().to_string());
    }
    if msg.contains("unknown field") {
        return Error::StrictKeyError(msg);
    }
    let (line, column) = e
        .location()
        .map(|l| (l.line(), l.column()))
        .unwrap_or((0, 0));
    Error::ParseError {
        line,
        column,
        message: msg,
    }
}

/// Parse a skill document in strict mode.
pub fn parse_skill(text: &str) -> Result<SkillSpec> {
    let value: serde_yaml::Value = serde_yaml::from_str(text).map_err(map_yaml_error)?;
    if value.is_null() {
        return Err(Error::MissingField("id".into()));
    }
    let spec: SkillSpec = serde_yaml::from_str(text).map_err(map_yaml_error)?;
    if let Some(r) = &spec.qmix.secret_seed_ref {
        if env_reference_name(r).is_none() {
            return Err(Error::ConfigError(
                "qmix.secret_seed must be an environment reference of the form ${NAME}; literal seeds are not accepted"
                    .into(),
            ));
        }
    }
    Ok(spec)
}

pub fn load_skill(path: &Path) -> Result<SkillSpec> {
    parse_skill(&std::fs::read_to_string(path)?)
}

impl SkillSpec {
    pub fn to_yaml(&self) -> String {
        serde_yaml::to_string(self).expect("skill serializes")
    }

    /// Canonical JSON form recorded in manifests.
    pub fn to_canonical_json(&self) -> String {
        serde_json::to_string(self).expect("skill serializes")
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn content_hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_canonical_json().as_bytes()))
    }

    pub fn secret_env_name(&self) -> Option<&str> {
        self.qmix
            .secret_seed_ref
            .as_deref()
            .and_then(env_reference_name)
    }

    pub fn alpha_for(&self, variable: &str) -> f64 {
        self.operators
            .per_variable
            .get(variable)
            .and_then(|p| p.alpha)
            .unwrap_or(self.operators.default_alpha)
    }

    pub fn qmix_applies(&self, variable: &str) -> bool {
        self.qmix.enabled && self.qmix.variables.iter().any(|v| v == variable)
    }

    /// Attack families named in the threat model, in canonical order.
    pub fn attack_families(&self) -> Result<Vec<AttackFamily>> {
        let mut out: Vec<AttackFamily> = self
            .threat_model
            .attacks
            .iter()
            .map(|t| AttackFamily::from_tag(t))
            .collect::<Result<_>>()?;
        out.sort();
        out.dedup();
        Ok(out)
    }

    /// Every alpha the skill can resolve to.
    pub fn alphas(&self) -> Vec<f64> {
        let mut a: Vec<f64> = std::iter::once(self.operators.default_alpha)
            .chain(self.operators.per_variable.values().filter_map(|p| p.alpha))
            .collect();
        a.sort_by(f64::total_cmp);
        a.dedup();
        a
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Severity {
    Error,
    Warning,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Finding {
    pub severity: Severity,
    pub code: String,
    pub message: String,
}

impl Finding {
    fn error(code: &str, message: impl Into<String>) -> Self {
        Self {
            severity: Severity::Error,
            code: code.into(),
            message: message.into(),
        }
    }

    fn warning(code: &str, message: impl Into<String>) -> Self {
        Self {
            severity: Severity::Warning,
            code: code.into(),
            message: message.into(),
        }
    }
}

impl fmt::Display for Finding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sev = match self.severity {
            Severity::Error => "ERROR",
            Severity::Warning => "WARNING",
        };
        write!(f, "{sev} [{}] {}", self.code, self.message)
    }
}

pub fn has_errors(findings: &[Finding]) -> bool {
    findings.iter().any(|f| f.severity == Severity::Error)
}

/// Policy and consistency checks. Findings come back sorted.
pub fn validate_skill(spec: &SkillSpec) -> Vec<Finding> {
    let mut out = Vec::new();
    let export = spec.usage == Usage::Export;
    if spec.id.trim().is_empty() {
        out.push(Finding::error("empty-id", "skill id must be non-empty"));
    }
    let d = spec.operators.default_alpha;
    if !(d >= 0.0) || !d.is_finite() {
        out.push(Finding::error(
            "alpha-range",
            format!("default_alpha {d} must be finite and >= 0"),
        ));
    }
    for (var, plan) in &spec.operators.per_variable {
        if plan.ops.is_empty() {
            out.push(Finding::error(
                "empty-ops",
                format!("{var}: ops list is empty"),
            ));
        }
        for op in &plan.ops {
            match OperatorKind::from_name(op) {
                Ok(OperatorKind::T3) if export => out.push(Finding::error(
                    "export-t3",
                    format!(
                        "{var}: T3 is linearly invertible and may not appear in an export skill"
                    ),
                )),
                Ok(_) => {}
                Err(_) => out.push(Finding::error(
                    "unknown-operator",
                    format!("{var}: unknown operator `{op}`"),
                )),
            }
        }
        if let Some(a) = plan.alpha {
            if !(a >= 0.0) || !a.is_finite() {
                out.push(Finding::error(
                    "alpha-range",
                    format!("{var}: alpha {a} must be finite and >= 0"),
                ));
            } else if export && a < EXPORT_MIN_ALPHA {
                out.push(Finding::error(
                    "export-alpha",
                    format!("{var}: alpha {a} is below the export minimum {EXPORT_MIN_ALPHA}"),
                ));
            }
        }
    }
    if export && d < EXPORT_MIN_ALPHA && spec.operators.per_variable.is_empty() {
        out.push(Finding::error(
            "export-alpha",
            format!("default_alpha {d} is below the export minimum {EXPORT_MIN_ALPHA} and no per-variable overrides are given"),
        ));
    }
    let q = &spec.qmix;
    if q.enabled {
        if q.variables.is_empty() {
            out.push(Finding::error(
                "qmix-empty",
                "qmix is enabled but lists no variables",
            ));
        }
        if q.block_length < 2 {
            out.push(Finding::error(
                "qmix-block",
                format!("block_length {} must be >= 2", q.block_length),
            ));
        }
        if q.bandwidth > q.block_length {
            out.push(Finding::error(
                "qmix-bandwidth",
                format!(
                    "bandwidth {} exceeds block_length {}",
                    q.bandwidth, q.block_length
                ),
            ));
        }
        if !spec.operators.per_variable.is_empty() {
            for v in &q.variables {
                if !spec.operators.per_variable.contains_key(v) {
                    out.push(Finding::error(
                        "qmix-undeclared",
                        format!("qmix variable {v} has no per_variable entry"),
                    ));
                }
            }
        }
        for v in &q.variables {
            let first = spec
                .operators
                .per_variable
                .get(v)
                .and_then(|p| p.ops.first());
            if first.map(|o| o == OperatorKind::T3.name()).unwrap_or(false) {
                out.push(Finding::error(
                    "qmix-t3",
                    format!("{v}: Q-mix cannot wrap T3"),
                ));
            }
        }
    }
    if export && !(q.enabled && !q.variables.is_empty()) {
        out.push(Finding::warning(
            "export-no-qmix",
            "export skill without Q-mix on any variable",
        ));
    }
    for t in &spec.threat_model.attacks {
        if AttackFamily::from_tag(t).is_err() {
            out.push(Finding::error(
                "unknown-attack",
                format!("unknown attack family `{t}`"),
            ));
        }
    }
    let [lo, hi] = spec.output.time_window_hours;
    if lo >= hi {
        out.push(Finding::error(
            "time-window",
            format!("time window [{lo}, {hi}) is empty"),
        ));
    }
    if spec.output.table.trim().is_empty() {
        out.push(Finding::error(
            "output-table",
            "output table name must be non-empty",
        ));
    }
    out.sort();
    out.dedup();
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResolvedPlan {
    pub variable: String,
    pub operator: String,
    pub qmix: bool,
    pub config: OperatorConfig,
}

impl ResolvedPlan {
    pub fn fingerprint(&self) -> String {
        self.config.fingerprint()
    }
}

/// First-listed operator wins; unlisted variables get T2 at the default
/// alpha. `column_len` fixes the Householder entry bound for T3.
pub fn resolve_variable_plan(
    spec: &SkillSpec,
    variable: &str,
    column_len: usize,
    cache: &CalibrationCache,
) -> Result<ResolvedPlan> {
    let kind = match spec.operators.per_variable.get(variable) {
        Some(plan) => {
            let first = plan
                .ops
                .first()
                .ok_or_else(|| Error::ConfigError(format!("{variable}: ops list is empty")))?;
            OperatorKind::from_name(first)?
        }
        None => OperatorKind::T2,
    };
    let alpha = spec.alpha_for(variable);
    let mut config =
        OperatorConfig::from_calibration(kind, &cache.lookup(alpha)).with_column_len(column_len);
    let qmix = spec.qmix_applies(variable) && kind != OperatorKind::Identity;
    if qmix {
        config = config.with_qmix(QmixConfig {
            enabled: true,
            block_length: spec.qmix.block_length,
            bandwidth: spec.qmix.bandwidth,
        });
    }
    config.validate()?;
    Ok(ResolvedPlan {
        variable: variable.to_string(),
        operator: config.label(),
        qmix,
        config,
    })
}
