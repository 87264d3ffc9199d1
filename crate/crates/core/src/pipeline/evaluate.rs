use std::collections::BTreeMap;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::cohort::CohortView;
use super::run::GateReport;
use crate::attacks::{
    make_leakage_split, AttackFamily, AttackInput, AttackRegistry, AttackReport, LeakageLevel,
};
use crate::error::Result;
use crate::manifold::standardize;
use crate::metrics::{
    corr_frobenius, downstream_auroc, nn_distance_profile, summary_features, variable_metrics,
    LogisticConfig, MetricReport, DEFAULT_MAX_LAG,
};
use crate::operators::CalibrationCache;
use crate::skills::{resolve_variable_plan, SkillSpec, Usage};

pub const EVAL_SCHEMA_VERSION: u32 = 1;

/// Alerting limits. A check passes when the value is within its limit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdPolicy {
    /// Largest Toeplitz-attacker R² tolerated on export skills.
    pub max_export_r2: f64,
    pub max_ks: f64,
    pub max_oor: f64,
    /// Smallest C1/C2 gate margin tolerated.
    pub min_gate_margin: f64,
}

impl Default for ThresholdPolicy {
    fn default() -> Self {
        Self {
            max_export_r2: 0.3,
            max_ks: 0.2,
            max_oor: 0.05,
            min_gate_margin: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdCheck {
    pub check: String,
    pub variable: String,
    pub value: f64,
    pub limit: f64,
    pub passed: bool,
}

/// A failed [`ThresholdCheck`].
pub type Alert = ThresholdCheck;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub schema_version: u32,
    pub skill_id: String,
    pub usage: Usage,
    pub level: LeakageLevel,
    pub families: Vec<AttackFamily>,
    pub metrics: MetricReport,
    pub gates: BTreeMap<String, GateReport>,
    pub attacks: Vec<AttackReport>,
    pub policy: ThresholdPolicy,
    pub thresholds: Vec<ThresholdCheck>,
}

impl EvalReport {
    pub fn alerts(&self) -> Vec<&ThresholdCheck> {
        self.thresholds.iter().filter(|t| !t.passed).collect()
    }

    pub fn attack(&self, family: AttackFamily, variable: &str) -> Option<&AttackReport> {
        self.attacks
            .iter()
            .find(|a| a.family == family && a.variable == variable)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

#[derive(Clone)]
pub struct EvalOptions {
    /// Attack families to run; `None` uses the skill's threat model.
    pub families: Option<Vec<AttackFamily>>,
    /// Leakage level; `None` uses the skill's threat model.
    pub level: Option<LeakageLevel>,
    pub split_seed: u64,
    pub attack_seed: u64,
    /// Per-stay binary labels for the downstream-utility check.
    pub labels: Option<BTreeMap<String, bool>>,
    pub max_lag: usize,
    pub cache: CalibrationCache,
    pub attacks: Arc<AttackRegistry>,
    pub policy: ThresholdPolicy,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            families: None,
            level: None,
            split_seed: 0,
            attack_seed: 0,
            labels: None,
            max_lag: DEFAULT_MAX_LAG,
            cache: CalibrationCache::default(),
            attacks: Arc::new(AttackRegistry::with_builtins()),
            policy: ThresholdPolicy::default(),
        }
    }
}

/// Every configured threshold with its outcome.
pub fn threshold_checks(report: &EvalReport, policy: &ThresholdPolicy) -> Vec<ThresholdCheck> {
    let mut out = Vec::new();
    let mut push = |check: &str, variable: &str, value: f64, limit: f64, passed: bool| {
        out.push(ThresholdCheck {
            check: check.into(),
            variable: variable.into(),
            value,
            limit,
            passed,
        })
    };
    for (var, m) in &report.metrics.variables {
        push("ks", var, m.ks, policy.max_ks, m.ks <= policy.max_ks);
        push(
            "oor",
            var,
            m.oor_rate,
            policy.max_oor,
            m.oor_rate <= policy.max_oor,
        );
    }
    for (var, g) in &report.gates {
        let c1 = g.c1_margin;
        push(
            "c1_margin",
            var,
            c1,
            policy.min_gate_margin,
            c1 >= policy.min_gate_margin,
        );
        let c2 = g.c2_margin;
        let slack = super::run::C2_SLACK * g.alpha.max(1.0);
        push(
            "c2_margin",
            var,
            c2,
            policy.min_gate_margin,
            c2 >= policy.min_gate_margin - slack,
        );
    }
    if report.usage == Usage::Export {
        for a in report
            .attacks
            .iter()
            .filter(|a| a.family == AttackFamily::A)
        {
            if let Some(r2) = a.metric("r2") {
                push(
                    "attack_r2",
                    &a.variable,
                    r2,
                    policy.max_export_r2,
                    r2 <= policy.max_export_r2,
                );
            }
        }
    }
    out
}

/// Failed checks only.
pub fn check_thresholds(report: &EvalReport, policy: &ThresholdPolicy) -> Vec<Alert> {
    threshold_checks(report, policy)
        .into_iter()
        .filter(|c| !c.passed)
        .collect()
}

fn features(view: &CohortView, ids: &[String]) -> Vec<Vec<f64>> {
    ids.iter()
        .map(|id| {
            view.variables
                .values()
                .flat_map(|v| summary_features(&v.stays[id]))
                .collect()
        })
        .collect()
}

/// Run the metric suite on every variable, then the selected attack
/// families at the chosen leakage level, in z-space under the raw stats.
pub fn evaluate_view(
    raw: &CohortView,
    private: &CohortView,
    spec: &SkillSpec,
    opts: &EvalOptions,
) -> Result<EvalReport> {
    raw.same_shape(private)?;
    let level = opts.level.unwrap_or(spec.threat_model.leakage);
    let families = match &opts.families {
        Some(f) => f.clone(),
        None => spec.attack_families()?,
    };

    let per_var: Vec<_> = raw
        .variables
        .par_iter()
        .map(|(name, r)| -> Result<_> {
            let p = &private.variables[name];
            let (rs, ps) = (r.series(), p.series());
            let m = variable_metrics(&rs, &ps, r.range.as_ref(), opts.max_lag)?;
            let (rc, _) = r.column();
            let (pc, _) = p.column();
            let gate = GateReport::compute(&rc, &pc, &r.stats, spec.alpha_for(name))?;
            let mut reports = Vec::new();
            if !families.is_empty() {
                let ids = r.stay_ids();
                let to_z = |s: &Vec<f64>| standardize(s, &r.stats).into_inner();
                let zr: Vec<Vec<f64>> = rs.iter().map(to_z).collect();
                let zp: Vec<Vec<f64>> = ps.iter().map(to_z).collect();
                let split = make_leakage_split(&ids, level, opts.split_seed)?;
                let plan = resolve_variable_plan(spec, name, rc.len(), &opts.cache)?;
                let input = AttackInput {
                    variable: name,
                    stay_ids: &ids,
                    raw: &zr,
                    released: &zp,
                    split: &split,
                    seed: opts.attack_seed,
                    fingerprint: Some(plan.fingerprint()),
                };
                reports = opts.attacks.run(&families, &input)?;
            }
            Ok((name.clone(), m, gate, reports))
        })
        .collect::<Result<_>>()?;

    let mut metrics = MetricReport {
        variables: BTreeMap::new(),
        corr_frobenius: None,
        constant_columns: Vec::new(),
        downstream_auroc: None,
        nn_distance: None,
    };
    let mut gates = BTreeMap::new();
    let mut attacks = Vec::new();
    for (name, m, gate, reports) in per_var {
        metrics.variables.insert(name.clone(), m);
        gates.insert(name, gate);
        attacks.extend(reports);
    }

    let complete = raw.complete_stay_ids();
    let names = raw.variable_names();
    if names.len() >= 2 && complete.len() >= 2 {
        let cols = |v: &CohortView| -> Vec<Vec<f64>> {
            names
                .iter()
                .map(|n| {
                    complete
                        .iter()
                        .flat_map(|id| v.variables[n].stays[id].iter().copied())
                        .collect()
                })
                .collect()
        };
        let c = corr_frobenius(&cols(raw), &cols(private))?;
        metrics.corr_frobenius = Some(c.frobenius);
        metrics.constant_columns = c
            .constant_columns
            .iter()
            .map(|&i| names[i].clone())
            .collect();
    }
    if !complete.is_empty() {
        let (fr, fp) = (features(raw, &complete), features(private, &complete));
        metrics.nn_distance = Some(nn_distance_profile(&fr, &fp)?);
        if let Some(labels) = &opts.labels {
            let (ids, y): (Vec<usize>, Vec<bool>) = complete
                .iter()
                .enumerate()
                .filter_map(|(i, id)| labels.get(id).map(|&l| (i, l)))
                .unzip();
            let pick = |f: &[Vec<f64>]| ids.iter().map(|&i| f[i].clone()).collect::<Vec<_>>();
            metrics.downstream_auroc = Some(downstream_auroc(
                &pick(&fr),
                &pick(&fp),
                &y,
                &LogisticConfig::default(),
            )?);
        }
    }

    let mut report = EvalReport {
        schema_version: EVAL_SCHEMA_VERSION,
        skill_id: spec.id.clone(),
        usage: spec.usage,
        level,
        families,
        metrics,
        gates,
        attacks,
        policy: opts.policy,
        thresholds: Vec::new(),
    };
    report.thresholds = threshold_checks(&report, &opts.policy);
    Ok(report)
}
