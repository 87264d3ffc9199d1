//! Attack harness: leakage splits and the four attack families, each
//! registered by name behind [`AttackFamilyRunner`].
//!
//! All attacks operate on single-variable z-sequences, one per stay.

mod attribute;
mod linkage;
mod reconstruction;

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::quantile_sorted;

pub use attribute::{
    attack_d_attribute, attack_d_ind, extract_attribute, AttributeKind, IndResult, IndTrial,
};
pub use linkage::{attack_b_linkage, attack_c_membership, LinkageResult, MembershipResult};
pub use reconstruction::{
    attack_a_eval, attack_a_full_linear_ridge, attack_a_train, pooled_r2, ridge_fit,
    LinearAttacker, Reconstructor, RidgeModel, ToeplitzHyper, DEFAULT_KERNEL_WIDTH,
};

/// A released sequence `y` with the raw sequence `z` it came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pair {
    pub y: Vec<f64>,
    pub z: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum LeakageLevel {
    L0,
    L1,
    L2,
}

impl LeakageLevel {
    pub fn from_name(s: &str) -> Result<Self> {
        match s {
            "L0" => Ok(Self::L0),
            "L1" => Ok(Self::L1),
            "L2" => Ok(Self::L2),
            other => Err(Error::ConfigError(format!(
                "unknown leakage level `{other}`"
            ))),
        }
    }

    /// Default paired fraction of stays.
    pub fn default_fraction(self) -> f64 {
        match self {
            Self::L0 => 0.0,
            Self::L1 => 1e-4,
            Self::L2 => 0.20,
        }
    }
}

impl fmt::Display for LeakageLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

/// Minimum cohort so that L2's 20% is at least 10 stays.
pub const MIN_SPLIT_STAYS: usize = 50;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeakageSplit {
    pub level: LeakageLevel,
    pub paired_fraction: f64,
    pub paired_ids: Vec<String>,
    pub heldout_ids: Vec<String>,
    pub seed: u64,
}

/// Deterministic partition of stays into paired and heldout sets.
pub fn make_leakage_split(
    stay_ids: &[String],
    level: LeakageLevel,
    seed: u64,
) -> Result<LeakageSplit> {
    make_leakage_split_with(stay_ids, level, level.default_fraction(), seed)
}

/// As [`make_leakage_split`] with an explicit paired fraction. L1 always
/// pairs at least 2 stays so the regime stays trainable on small cohorts.
pub fn make_leakage_split_with(
    stay_ids: &[String],
    level: LeakageLevel,
    paired_fraction: f64,
    seed: u64,
) -> Result<LeakageSplit> {
    let n = stay_ids.len();
    if n < MIN_SPLIT_STAYS {
        return Err(Error::InsufficientCohort(format!(
            "{n} stays; at least {MIN_SPLIT_STAYS} are needed"
        )));
    }
    if !(0.0..1.0).contains(&paired_fraction) {
        return Err(Error::ConfigError(format!(
            "paired fraction {paired_fraction} outside [0, 1)"
        )));
    }
    let k = match level {
        LeakageLevel::L0 => 0,
        LeakageLevel::L1 => ((paired_fraction * n as f64).ceil() as usize).max(2),
        LeakageLevel::L2 => (paired_fraction * n as f64).round() as usize,
    };
    let mut ids = stay_ids.to_vec();
    ids.sort();
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let heldout_ids = ids.split_off(k);
    Ok(LeakageSplit {
        level,
        paired_fraction,
        paired_ids: ids,
        heldout_ids,
        seed,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum AttackFamily {
    A,
    B,
    C,
    D,
}

impl AttackFamily {
    pub const ALL: [AttackFamily; 4] = [
        AttackFamily::A,
        AttackFamily::B,
        AttackFamily::C,
        AttackFamily::D,
    ];

    /// Tag used in skill files.
    pub fn tag(self) -> &'static str {
        match self {
            Self::A => "A_reconstruction",
            Self::B => "B_linkage",
            Self::C => "C_membership",
            Self::D => "D_attribute",
        }
    }

    /// Accepts the full tag (`A_reconstruction`) or the bare letter.
    pub fn from_tag(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|f| f.tag() == s || &f.tag()[..1] == s)
            .ok_or_else(|| Error::ConfigError(format!("unknown attack family `{s}`")))
    }
}

impl fmt::Display for AttackFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackReport {
    pub family: AttackFamily,
    pub variable: String,
    pub level: LeakageLevel,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub operator_fingerprint: Option<String>,
    pub metrics: BTreeMap<String, f64>,
    /// Set when the family could not run, e.g. `NoPairedData` under L0.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

impl AttackReport {
    fn new(family: AttackFamily, input: &AttackInput<'_>) -> Self {
        Self {
            family,
            variable: input.variable.to_string(),
            level: input.split.level,
            operator_fingerprint: input.fingerprint.clone(),
            metrics: BTreeMap::new(),
            note: None,
        }
    }

    pub fn metric(&self, name: &str) -> Option<f64> {
        self.metrics.get(name).copied()
    }
}

/// Everything an attack family sees for one variable.
#[derive(Debug, Clone)]
pub struct AttackInput<'a> {
    pub variable: &'a str,
    pub stay_ids: &'a [String],
    /// Raw z-sequences, one per stay, aligned with `stay_ids`.
    pub raw: &'a [Vec<f64>],
    /// Released z-sequences, aligned with `stay_ids`.
    pub released: &'a [Vec<f64>],
    pub split: &'a LeakageSplit,
    pub seed: u64,
    pub fingerprint: Option<String>,
}

impl AttackInput<'_> {
    fn check(&self) -> Result<()> {
        if self.raw.len() != self.stay_ids.len() || self.released.len() != self.stay_ids.len() {
            return Err(Error::ShapeError(
                "raw, released and stay ids differ in count".into(),
            ));
        }
        Ok(())
    }

    fn indices(&self, ids: &[String]) -> Vec<usize> {
        let pos: HashMap<&str, usize> = self
            .stay_ids
            .iter()
            .enumerate()
            .map(|(i, s)| (s.as_str(), i))
            .collect();
        ids.iter()
            .filter_map(|s| pos.get(s.as_str()).copied())
            .collect()
    }

    fn pairs(&self, ids: &[String]) -> Vec<Pair> {
        self.indices(ids)
            .into_iter()
            .map(|i| Pair {
                y: self.released[i].clone(),
                z: self.raw[i].clone(),
            })
            .collect()
    }

    fn cohort_p90(&self) -> f64 {
        let mut all: Vec<f64> = self.raw.iter().flatten().copied().collect();
        all.sort_by(f64::total_cmp);
        quantile_sorted(&all, 0.9)
    }
}

/// One attack family.
pub trait AttackFamilyRunner: Send + Sync {
    fn family(&self) -> AttackFamily;
    fn run(&self, input: &AttackInput<'_>) -> Result<AttackReport>;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct ReconstructionAttack {
    pub hyper: ToeplitzHyper,
    pub ridge_lambda: f64,
}

impl AttackFamilyRunner for ReconstructionAttack {
    fn family(&self) -> AttackFamily {
        AttackFamily::A
    }

    fn run(&self, input: &AttackInput<'_>) -> Result<AttackReport> {
        input.check()?;
        let mut report = AttackReport::new(AttackFamily::A, input);
        let paired = input.pairs(&input.split.paired_ids);
        let heldout = input.pairs(&input.split.heldout_ids);
        if paired.len() < 2 {
            report.note = Some(format!(
                "NoPairedData: {} paired stays under {}",
                paired.len(),
                input.split.level
            ));
            return Ok(report);
        }
        let hyper = ToeplitzHyper {
            seed: input.seed,
            ..self.hyper
        };
        let n = paired[0].z.len();
        let width = if n >= DEFAULT_KERNEL_WIDTH {
            DEFAULT_KERNEL_WIDTH
        } else {
            n - (1 - n % 2)
        };
        let toeplitz = attack_a_train(&paired, width, &hyper)?;
        let (r2, mae) = attack_a_eval(&toeplitz, &heldout)?;
        report.metrics.insert("r2".into(), r2);
        report.metrics.insert("mae_z".into(), mae);
        report
            .metrics
            .insert("epochs".into(), toeplitz.epochs as f64);
        match attack_a_full_linear_ridge(&paired, self.ridge_lambda.max(1e-6)) {
            Ok(ridge) => {
                let (r2, mae) = attack_a_eval(&ridge, &heldout)?;
                report.metrics.insert("ridge_r2".into(), r2);
                report.metrics.insert("ridge_mae_z".into(), mae);
            }
            Err(e) => report.note = Some(format!("ridge oracle skipped: {e}")),
        }
        Ok(report)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LinkageAttack {
    pub m: usize,
    pub k: usize,
}

impl Default for LinkageAttack {
    fn default() -> Self {
        Self { m: 10, k: 5 }
    }
}

impl AttackFamilyRunner for LinkageAttack {
    fn family(&self) -> AttackFamily {
        AttackFamily::B
    }

    fn run(&self, input: &AttackInput<'_>) -> Result<AttackReport> {
        input.check()?;
        let mut report = AttackReport::new(AttackFamily::B, input);
        let idx = input.indices(&input.split.heldout_ids);
        let ext: Vec<Vec<f64>> = idx.iter().map(|&i| input.raw[i].clone()).collect();
        let rel: Vec<Vec<f64>> = idx.iter().map(|&i| input.released[i].clone()).collect();
        let r = attack_b_linkage(&ext, &rel, self.m.min(rel.len()), self.k, input.seed)?;
        report.metrics.insert("reid_at_1".into(), r.reid_at_1);
        report
            .metrics
            .insert(format!("reid_at_{}", r.k), r.reid_at_k);
        report.metrics.insert("linkage_auc".into(), r.linkage_auc);
        report
            .metrics
            .insert("candidates".into(), self.m.min(rel.len()) as f64);
        Ok(report)
    }
}

/// Heldout stays are split in half; the released view contains only the
/// first half.
#[derive(Debug, Clone, Copy, Default)]
pub struct MembershipAttack;

impl AttackFamilyRunner for MembershipAttack {
    fn family(&self) -> AttackFamily {
        AttackFamily::C
    }

    fn run(&self, input: &AttackInput<'_>) -> Result<AttackReport> {
        input.check()?;
        let mut report = AttackReport::new(AttackFamily::C, input);
        let mut idx = input.indices(&input.split.heldout_ids);
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(input.seed ^ 0xC));
        let (mem, non) = idx.split_at(idx.len() / 2);
        let members: Vec<Vec<f64>> = mem.iter().map(|&i| input.raw[i].clone()).collect();
        let nonmembers: Vec<Vec<f64>> = non.iter().map(|&i| input.raw[i].clone()).collect();
        let released: Vec<Vec<f64>> = mem.iter().map(|&i| input.released[i].clone()).collect();
        let r = attack_c_membership(&members, &nonmembers, &released)?;
        report.metrics.insert("membership_auc".into(), r.auc);
        report.metrics.insert("membership_adv".into(), r.advantage);
        Ok(report)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct AttributeAttack {
    pub ridge_lambda: f64,
}

impl Default for AttributeAttack {
    fn default() -> Self {
        Self { ridge_lambda: 1.0 }
    }
}

impl AttackFamilyRunner for AttributeAttack {
    fn family(&self) -> AttackFamily {
        AttackFamily::D
    }

    fn run(&self, input: &AttackInput<'_>) -> Result<AttackReport> {
        input.check()?;
        let mut report = AttackReport::new(AttackFamily::D, input);
        let paired = input.pairs(&input.split.paired_ids);
        let heldout = input.pairs(&input.split.heldout_ids);
        if paired.len() >= 2 {
            let p90 = input.cohort_p90();
            for kind in AttributeKind::ALL {
                match attack_d_attribute(&paired, &heldout, kind, self.ridge_lambda, p90) {
                    Ok(r2) => {
                        report
                            .metrics
                            .insert(format!("attr_r2_{}", kind.name()), r2);
                    }
                    Err(Error::InvalidLength(_)) => {}
                    Err(e) => return Err(e),
                }
            }
        } else {
            report.note = Some(format!(
                "NoPairedData: attribute regression skipped under {}",
                input.split.level
            ));
        }

        let idx = input.indices(&input.split.heldout_ids);
        if idx.len() >= 2 {
            let mut rng = ChaCha8Rng::seed_from_u64(input.seed ^ 0xD);
            let trials: Vec<IndTrial> = idx
                .iter()
                .map(|&i| {
                    let mut j = idx[rng.gen_range(0..idx.len())];
                    while j == i {
                        j = idx[rng.gen_range(0..idx.len())];
                    }
                    let b: bool = rng.gen();
                    let (x0, x1) = if b { (j, i) } else { (i, j) };
                    IndTrial {
                        x0: input.raw[x0].clone(),
                        x1: input.raw[x1].clone(),
                        y: input.released[i].clone(),
                        b,
                    }
                })
                .collect();
            let r = attack_d_ind(&trials)?;
            report.metrics.insert("ind_acc".into(), r.acc);
            report.metrics.insert("ind_adv".into(), r.ind_adv);
        }
        Ok(report)
    }
}

/// Attack families keyed by tag.
#[derive(Clone, Default)]
pub struct AttackRegistry {
    runners: BTreeMap<AttackFamily, Arc<dyn AttackFamilyRunner>>,
}

impl fmt::Debug for AttackRegistry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.runners.keys()).finish()
    }
}

impl AttackRegistry {
    pub fn with_builtins() -> Self {
        let mut r = Self::default();
        r.register(Arc::new(ReconstructionAttack {
            hyper: ToeplitzHyper::default(),
            ridge_lambda: 1e-6,
        }));
        r.register(Arc::new(LinkageAttack::default()));
        r.register(Arc::new(MembershipAttack));
        r.register(Arc::new(AttributeAttack::default()));
        r
    }

    pub fn register(&mut self, runner: Arc<dyn AttackFamilyRunner>) {
        self.runners.insert(runner.family(), runner);
    }

    pub fn get(&self, family: AttackFamily) -> Result<&dyn AttackFamilyRunner> {
        self.runners
            .get(&family)
            .map(|r| r.as_ref())
            .ok_or_else(|| Error::ConfigError(format!("attack family {family} is not registered")))
    }

    pub fn families(&self) -> Vec<AttackFamily> {
        self.runners.keys().copied().collect()
    }

    pub fn run(
        &self,
        families: &[AttackFamily],
        input: &AttackInput<'_>,
    ) -> Result<Vec<AttackReport>> {
        families.iter().map(|&f| self.get(f)?.run(input)).collect()
    }
}
