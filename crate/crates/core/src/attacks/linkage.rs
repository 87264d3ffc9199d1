//! Families B and C: record linkage and membership inference by distance.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{auroc_two_sample, nn_distances};

pub(crate) fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkageResult {
    pub reid_at_1: f64,
    pub reid_at_k: f64,
    pub k: usize,
    pub linkage_auc: f64,
}

/// Each external record `i` is truly released as `released[i]`. For every
/// record, the true match and `m - 1` seeded decoys are ranked by negative
/// z-space Euclidean distance; ties count against the true match.
pub fn attack_b_linkage(
    external_raw: &[Vec<f64>],
    released: &[Vec<f64>],
    m: usize,
    k: usize,
    seed: u64,
) -> Result<LinkageResult> {
    if m < 2 {
        return Err(Error::InvalidCandidates(format!(
            "candidate set size must be >= 2, got {m}"
        )));
    }
    if external_raw.len() != released.len() {
        return Err(Error::ShapeError(
            "external and released sets differ in size".into(),
        ));
    }
    if m > released.len() {
        return Err(Error::InvalidCandidates(format!(
            "candidate set size {m} exceeds released size {}",
            released.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = released.len();
    let (mut hit1, mut hitk) = (0usize, 0usize);
    let mut pos = Vec::with_capacity(n);
    let mut neg = Vec::with_capacity(n * (m - 1));
    for (i, ext) in external_raw.iter().enumerate() {
        let true_score = -euclid(ext, &released[i]);
        let decoys = sample(&mut rng, n - 1, m - 1);
        let mut better = 0;
        for d in decoys.iter() {
            let j = if d >= i { d + 1 } else { d };
            let s = -euclid(ext, &released[j]);
            if s >= true_score {
                better += 1;
            }
            neg.push(s);
        }
        pos.push(true_score);
        let rank = better + 1;
        hit1 += usize::from(rank <= 1);
        hitk += usize::from(rank <= k);
    }
    Ok(LinkageResult {
        reid_at_1: hit1 as f64 / n as f64,
        reid_at_k: hitk as f64 / n as f64,
        k,
        linkage_auc: auroc_two_sample(&pos, &neg)?,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MembershipResult {
    pub auc: f64,
    pub advantage: f64,
}

/// Score each candidate by its negative nearest-neighbour distance into
/// the released view; members should score higher.
pub fn attack_c_membership(
    members: &[Vec<f64>],
    nonmembers: &[Vec<f64>],
    released: &[Vec<f64>],
) -> Result<MembershipResult> {
    if members.is_empty() || nonmembers.is_empty() {
        return Err(Error::InvalidSample(
            "membership needs members and non-members".into(),
        ));
    }
    let pos: Vec<f64> = nn_distances(members, released)?
        .into_iter()
        .map(|d| -d)
        .collect();
    let neg: Vec<f64> = nn_distances(nonmembers, released)?
        .into_iter()
        .map(|d| -d)
        .collect();
    let auc = auroc_two_sample(&pos, &neg)?;
    Ok(MembershipResult {
        auc,
        advantage: (auc - 0.5).abs(),
    })
}
