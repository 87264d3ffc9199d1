//! Column operators on the mean–variance manifold.
//!
//! Every operator implements [`ColumnOperator`] and is constructed by name
//! through an [`OperatorRegistry`]. Operators receive a standardized column
//! plus a [`Layout`] describing which stay owns which contiguous range, so
//! that per-stay randomness (rotation angles, noise, Q-mix permutations) is
//! drawn from that stay's own stream.

mod calibration;
mod householder;
mod noise;
mod qmix;
mod registry;
mod rotation;

use std::fmt;
use std::ops::Range;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::manifold::{
    destandardize, standardize, ColumnStats, StandardizedColumn, DEFAULT_SIGMA_FLOOR,
};
use crate::rng::RandomnessContext;

pub use calibration::{
    t1_calibrate_theta_max, t1_grid_displacement, t1_worst_case_displacement, t2_calibrate,
    Calibration, CalibrationCache,
};
pub use householder::{t3_make_vector, t3_select_vector, t3_transform, HouseholderReflection};
pub use noise::{t2_transform, NoiseProjection};
pub use qmix::{
    qmix_make_permutation, qmix_permutation_from_rng, qmix_stay_permutation, qmix_wrap, QmixWrapper,
};
pub use registry::{OperatorFactory, OperatorRegistry};
pub use rotation::{t1_angle_bound, t1_transform, TripletRotation};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum OperatorKind {
    Identity,
    T1Uniform,
    /// Currently an alias of [`OperatorKind::T1Uniform`]; kept distinct so a
    /// time-weighted angle schedule can be slotted in without a config change.
    T1Weighted,
    T2,
    T3,
}

impl OperatorKind {
    pub const ALL: [OperatorKind; 5] = [
        OperatorKind::Identity,
        OperatorKind::T1Uniform,
        OperatorKind::T1Weighted,
        OperatorKind::T2,
        OperatorKind::T3,
    ];

    /// Name used in skill files.
    pub fn name(self) -> &'static str {
        match self {
            OperatorKind::Identity => "identity",
            OperatorKind::T1Uniform => "T1_uniform",
            OperatorKind::T1Weighted => "T1_weighted",
            OperatorKind::T2 => "T2",
            OperatorKind::T3 => "T3",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == name)
            .ok_or_else(|| Error::ConfigError(format!("unknown operator `{name}`")))
    }

    pub fn is_rotation(self) -> bool {
        matches!(self, OperatorKind::T1Uniform | OperatorKind::T1Weighted)
    }
}

impl fmt::Display for OperatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

pub const DEFAULT_BLOCK_LENGTH: usize = 48;
pub const DEFAULT_BANDWIDTH: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct QmixConfig {
    pub enabled: bool,
    pub block_length: usize,
    pub bandwidth: usize,
}

impl Default for QmixConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            block_length: DEFAULT_BLOCK_LENGTH,
            bandwidth: DEFAULT_BANDWIDTH,
        }
    }
}

impl QmixConfig {
    pub fn validate(&self) -> Result<()> {
        if self.block_length < 2 {
            return Err(Error::ConfigError(format!(
                "qmix block_length must be >= 2, got {}",
                self.block_length
            )));
        }
        if self.bandwidth > self.block_length {
            return Err(Error::ConfigError(format!(
                "qmix bandwidth must lie in [0, {}], got {}",
                self.block_length, self.bandwidth
            )));
        }
        Ok(())
    }
}

/// Fully resolved parameters for one column transform.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OperatorConfig {
    pub kind: OperatorKind,
    pub alpha: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta_max: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clip_c: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub householder_entry_bound: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub qmix: Option<QmixConfig>,
}

impl OperatorConfig {
    /// Config with no calibrated internals filled in.
    pub fn uncalibrated(kind: OperatorKind, alpha: f64) -> Self {
        Self {
            kind,
            alpha,
            theta_max: None,
            tau: None,
            clip_c: None,
            householder_entry_bound: None,
            qmix: None,
        }
    }

    pub fn identity() -> Self {
        Self::uncalibrated(OperatorKind::Identity, 0.0)
    }

    /// Config with the offline calibration for `alpha` attached.
    pub fn calibrated(kind: OperatorKind, alpha: f64) -> Self {
        Self::from_calibration(kind, &Calibration::compute(alpha))
    }

    pub fn from_calibration(kind: OperatorKind, cal: &Calibration) -> Self {
        let mut cfg = Self::uncalibrated(kind, cal.alpha);
        match kind {
            OperatorKind::T1Uniform | OperatorKind::T1Weighted => {
                cfg.theta_max = Some(cal.theta_max)
            }
            OperatorKind::T2 => {
                cfg.tau = Some(cal.tau);
                cfg.clip_c = Some(cal.clip_c);
            }
            OperatorKind::T3 | OperatorKind::Identity => {}
        }
        cfg
    }

    pub fn with_qmix(mut self, qmix: QmixConfig) -> Self {
        self.qmix = Some(qmix);
        self
    }

    /// Attach the column-length dependent Householder entry bound.
    pub fn with_column_len(mut self, n: usize) -> Self {
        if self.kind == OperatorKind::T3 && n > 0 {
            self.householder_entry_bound = Some(householder::entry_bound(n, self.alpha));
        }
        self
    }

    pub fn qmix_enabled(&self) -> bool {
        self.qmix.map(|q| q.enabled).unwrap_or(false)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0) || !self.alpha.is_finite() {
            return Err(Error::ConfigError(format!(
                "alpha must be finite and >= 0, got {}",
                self.alpha
            )));
        }
        if let Some(t) = self.theta_max {
            if !(0.0..=std::f64::consts::PI).contains(&t) {
                return Err(Error::ConfigError(format!("theta_max {t} outside [0, pi]")));
            }
        }
        if let Some(t) = self.tau {
            if !(t >= 0.0) {
                return Err(Error::ConfigError(format!("tau must be >= 0, got {t}")));
            }
        }
        if let Some(c) = self.clip_c {
            if !(c >= 0.0) || c > self.alpha / 2.0 + 1e-15 {
                return Err(Error::ConfigError(format!(
                    "clip_c {c} must lie in [0, alpha/2 = {}]",
                    self.alpha / 2.0
                )));
            }
        }
        if let Some(q) = &self.qmix {
            if q.enabled {
                q.validate()?;
            }
        }
        Ok(())
    }

    /// Short stable hash of the canonical JSON form.
    pub fn fingerprint(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(&Sha256::digest(&json)[..8])
    }

    pub fn label(&self) -> String {
        if self.qmix_enabled() {
            format!("Q+{}", self.kind)
        } else {
            self.kind.to_string()
        }
    }
}

/// One stay's contiguous range inside a column.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Segment {
    /// `None` means "use the context's own stay id".
    pub stay_id: Option<String>,
    pub start: usize,
    pub len: usize,
}

impl Segment {
    pub fn range(&self) -> Range<usize> {
        self.start..self.start + self.len
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    segments: Vec<Segment>,
    len: usize,
}

impl Layout {
    /// The whole column is one stay, owned by the context passed to `apply`.
    pub fn single(n: usize) -> Self {
        Self {
            segments: vec![Segment {
                stay_id: None,
                start: 0,
                len: n,
            }],
            len: n,
        }
    }

    /// Consecutive stays, in column order.
    pub fn from_stays<I, S>(stays: I) -> Self
    where
        I: IntoIterator<Item = (S, usize)>,
        S: Into<String>,
    {
        let mut start = 0;
        let segments = stays
            .into_iter()
            .map(|(id, len)| {
                let seg = Segment {
                    stay_id: Some(id.into()),
                    start,
                    len,
                };
                start += len;
                seg
            })
            .collect();
        Self {
            segments,
            len: start,
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub(crate) fn check(&self, n: usize) -> Result<()> {
        if self.len != n {
            return Err(Error::ShapeError(format!(
                "layout covers {} points, column has {n}",
                self.len
            )));
        }
        Ok(())
    }

    pub(crate) fn context(&self, seg: &Segment, ctx: &RandomnessContext) -> RandomnessContext {
        match &seg.stay_id {
            Some(id) => ctx.for_stay(id),
            None => ctx.clone(),
        }
    }
}

/// A randomized map `M(0,1) -> M(0,1)` with a z-space `l_inf` budget.
pub trait ColumnOperator: Send + Sync + fmt::Debug {
    fn name(&self) -> String;

    fn alpha(&self) -> f64;

    /// Identity operators let callers skip the standardize round trip.
    fn is_identity(&self) -> bool {
        false
    }

    fn apply(
        &self,
        z: &StandardizedColumn,
        layout: &Layout,
        ctx: &RandomnessContext,
    ) -> Result<StandardizedColumn>;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityOperator;

impl ColumnOperator for IdentityOperator {
    fn name(&self) -> String {
        OperatorKind::Identity.name().to_string()
    }

    fn alpha(&self) -> f64 {
        0.0
    }

    fn is_identity(&self) -> bool {
        true
    }

    fn apply(
        &self,
        z: &StandardizedColumn,
        layout: &Layout,
        _: &RandomnessContext,
    ) -> Result<StandardizedColumn> {
        layout.check(z.len())?;
        Ok(z.clone())
    }
}

/// Standardize, transform, de-standardize a single-stay column.
pub fn apply_operator(
    x: &[f64],
    stats: &ColumnStats,
    cfg: &OperatorConfig,
    ctx: &RandomnessContext,
) -> Result<Vec<f64>> {
    let op = OperatorRegistry::with_builtins().build(cfg)?;
    apply_with_layout(x, stats, op.as_ref(), &Layout::single(x.len()), ctx)
}

/// Like [`apply_operator`] with a prepared operator and an explicit layout.
///
/// Identity and columns whose sigma sits on the floor pass through
/// bit-for-bit.
pub fn apply_with_layout(
    x: &[f64],
    stats: &ColumnStats,
    op: &dyn ColumnOperator,
    layout: &Layout,
    ctx: &RandomnessContext,
) -> Result<Vec<f64>> {
    layout.check(x.len())?;
    if op.is_identity() {
        return Ok(x.to_vec());
    }
    if stats.is_floored(DEFAULT_SIGMA_FLOOR) {
        return Ok(x.to_vec());
    }
    let z = standardize(x, stats);
    let out = op.apply(&z, layout, ctx)?;
    Ok(destandardize(&out, stats))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kind_names_round_trip() {
        for k in OperatorKind::ALL {
            assert_eq!(OperatorKind::from_name(k.name()).unwrap(), k);
        }
        assert!(matches!(
            OperatorKind::from_name("T9"),
            Err(Error::ConfigError(_))
        ));
    }

    #[test]
    fn config_validation() {
        assert!(OperatorConfig::calibrated(OperatorKind::T2, 1.0)
            .validate()
            .is_ok());
        let mut bad = OperatorConfig::calibrated(OperatorKind::T2, 1.0);
        bad.clip_c = Some(0.6);
        assert!(bad.validate().is_err());
        assert!(OperatorConfig::uncalibrated(OperatorKind::T1Uniform, -0.1)
            .validate()
            .is_err());
        let q = QmixConfig {
            enabled: true,
            block_length: 1,
            bandwidth: 1,
        };
        assert!(OperatorConfig::calibrated(OperatorKind::T2, 1.0)
            .with_qmix(q)
            .validate()
            .is_err());
    }

    #[test]
    fn identity_passes_through() {
        let x = vec![3.0, 1.0, 4.0, 1.0, 5.0];
        let s = crate::manifold::column_stats(&x, DEFAULT_SIGMA_FLOOR).unwrap();
        let ctx = RandomnessContext::from_parts(b"k", "s", "v", 0);
        assert_eq!(
            apply_operator(&x, &s, &OperatorConfig::identity(), &ctx).unwrap(),
            x
        );
    }

    #[test]
    fn layout_from_stays() {
        let l = Layout::from_stays([("a", 3), ("b", 4)]);
        assert_eq!(l.len(), 7);
        assert_eq!(l.segments()[1].range(), 3..7);
        assert!(l.check(6).is_err());
    }

    #[test]
    fn fingerprint_is_stable_and_sensitive() {
        let a = OperatorConfig::calibrated(OperatorKind::T2, 1.0);
        assert_eq!(a.fingerprint(), a.clone().fingerprint());
        assert_ne!(
            a.fingerprint(),
            OperatorConfig::calibrated(OperatorKind::T2, 0.5).fingerprint()
        );
    }
}
