//! Family D: attribute inference and the indistinguishability game.

use serde::{Deserialize, Serialize};

use super::linkage::euclid;
use super::reconstruction::{pooled_r2, ridge_fit};
use super::Pair;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum AttributeKind {
    Max,
    AboveP90,
    ValueAt24h,
}

impl AttributeKind {
    pub const ALL: [AttributeKind; 3] = [
        AttributeKind::Max,
        AttributeKind::AboveP90,
        AttributeKind::ValueAt24h,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AttributeKind::Max => "max",
            AttributeKind::AboveP90 => "above_p90",
            AttributeKind::ValueAt24h => "value_at_24h",
        }
    }
}

/// Scalar attribute of a z-sequence. `cohort_p90` is the 90th percentile of
/// the pooled cohort values, used by [`AttributeKind::AboveP90`].
pub fn extract_attribute(z: &[f64], kind: AttributeKind, cohort_p90: f64) -> Result<f64> {
    if z.is_empty() {
        return Err(Error::InvalidLength("empty sequence".into()));
    }
    Ok(match kind {
        AttributeKind::Max => z.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        AttributeKind::AboveP90 => f64::from(u8::from(z.iter().any(|&v| v > cohort_p90))),
        AttributeKind::ValueAt24h => {
            if z.len() < 25 {
                return Err(Error::InvalidLength(format!(
                    "value at 24h needs length >= 25, got {}",
                    z.len()
                )));
            }
            z[24]
        }
    })
}

/// Ridge regression from the released sequence to the raw attribute,
/// trained on `paired` and scored on `heldout`. Targets are z-scored with
/// the paired-set statistics.
pub fn attack_d_attribute(
    paired: &[Pair],
    heldout: &[Pair],
    kind: AttributeKind,
    lambda: f64,
    cohort_p90: f64,
) -> Result<f64> {
    if paired.len() < 2 {
        return Err(Error::NoPairedData(format!(
            "need at least 2 paired stays, got {}",
            paired.len()
        )));
    }
    if heldout.is_empty() {
        return Err(Error::InvalidSample("empty heldout set".into()));
    }
    let attr = |p: &Pair| extract_attribute(&p.z, kind, cohort_p90);
    let train_t: Vec<f64> = paired.iter().map(attr).collect::<Result<_>>()?;
    let held_t: Vec<f64> = heldout.iter().map(attr).collect::<Result<_>>()?;
    let m = train_t.iter().sum::<f64>() / train_t.len() as f64;
    let sd = (train_t.iter().map(|v| (v - m).powi(2)).sum::<f64>() / train_t.len() as f64).sqrt();
    let sd = if sd > 1e-12 { sd } else { 1.0 };
    let x: Vec<Vec<f64>> = paired.iter().map(|p| p.y.clone()).collect();
    let t: Vec<Vec<f64>> = train_t.iter().map(|v| vec![(v - m) / sd]).collect();
    let model = ridge_fit(&x, &t, lambda)?;
    let truth: Vec<f64> = held_t.iter().map(|v| (v - m) / sd).collect();
    let pred: Vec<f64> = heldout.iter().map(|p| model.predict(&p.y)[0]).collect();
    Ok(pooled_r2(&truth, &pred))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndTrial {
    pub x0: Vec<f64>,
    pub x1: Vec<f64>,
    pub y: Vec<f64>,
    pub b: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IndResult {
    pub acc: f64,
    pub ind_adv: f64,
}

/// Guess the hidden bit as the candidate closer to `y`; ties guess 0.
pub fn attack_d_ind(trials: &[IndTrial]) -> Result<IndResult> {
    if trials.is_empty() {
        return Err(Error::InvalidSample("no IND trials".into()));
    }
    let correct = trials
        .iter()
        .filter(|t| (euclid(&t.y, &t.x1) < euclid(&t.y, &t.x0)) == t.b)
        .count();
    let acc = correct as f64 / trials.len() as f64;
    Ok(IndResult {
        acc,
        ind_adv: (acc - 0.5).abs(),
    })
}
