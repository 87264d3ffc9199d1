//! Downstream utility and embedding distance: summary features, a logistic
//! regression baseline, rank AUROC and nearest-neighbour distances.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-variable summary features of one series: mean, max, min and the
/// endpoint slope `(last - first) / (n - 1)`.
pub fn summary_features(series: &[f64]) -> [f64; 4] {
    let n = series.len();
    if n == 0 {
        return [0.0; 4];
    }
    let mean = series.iter().sum::<f64>() / n as f64;
    let max = series.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = series.iter().copied().fold(f64::INFINITY, f64::min);
    let slope = if n > 1 {
        (series[n - 1] - series[0]) / (n - 1) as f64
    } else {
        0.0
    };
    [mean, max, min, slope]
}

/// AUROC of `scores` for positive `labels`, Mann–Whitney form with ties
/// counted as one half.
pub fn auroc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::ShapeError(format!(
            "{} scores, {} labels",
            scores.len(),
            labels.len()
        )));
    }
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::InvalidLabels("AUROC needs both classes".into()));
    }
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // midranks over tie groups
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && scores[idx[j + 1]] == scores[idx[i]] {
            j += 1;
        }
        let mid = (i + j) as f64 / 2.0 + 1.0;
        rank_sum_pos += idx[i..=j].iter().filter(|&&k| labels[k]).count() as f64 * mid;
        i = j + 1;
    }
    let (p, q) = (n_pos as f64, n_neg as f64);
    Ok((rank_sum_pos - p * (p + 1.0) / 2.0) / (p * q))
}

/// AUROC from two score populations (positives vs negatives).
pub fn auroc_two_sample(pos: &[f64], neg: &[f64]) -> Result<f64> {
    let scores: Vec<f64> = pos.iter().chain(neg).copied().collect();
    let labels: Vec<bool> = std::iter::repeat_n(true, pos.len())
        .chain(std::iter::repeat_n(false, neg.len()))
        .collect();
    auroc(&scores, &labels)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogisticConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub l2: f64,
    pub test_fraction: f64,
    pub seed: u64,
}

impl Default for LogisticConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.5,
            epochs: 500,
            l2: 1e-4,
            test_fraction: 0.3,
            seed: 17,
        }
    }
}

/// Logistic regression on standardized features, trained by full-batch
/// gradient descent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticModel {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub feature_mean: Vec<f64>,
    pub feature_scale: Vec<f64>,
}

fn sigmoid(t: f64) -> f64 {
    1.0 / (1.0 + (-t).exp())
}

impl LogisticModel {
    pub fn fit(x: &[Vec<f64>], y: &[bool], cfg: &LogisticConfig) -> Result<Self> {
        let n = x.len();
        if n == 0 || n != y.len() {
            return Err(Error::ShapeError(format!("{n} rows, {} labels", y.len())));
        }
        let d = x[0].len();
        let feature_mean: Vec<f64> = (0..d)
            .map(|j| x.iter().map(|r| r[j]).sum::<f64>() / n as f64)
            .collect();
        let feature_scale: Vec<f64> = (0..d)
            .map(|j| {
                let v = x
                    .iter()
                    .map(|r| (r[j] - feature_mean[j]).powi(2))
                    .sum::<f64>()
                    / n as f64;
                if v > 1e-24 {
                    v.sqrt()
                } else {
                    1.0
                }
            })
            .collect();
        let mut model = Self {
            weights: vec![0.0; d],
            bias: 0.0,
            feature_mean,
            feature_scale,
        };
        let xs: Vec<Vec<f64>> = x.iter().map(|r| model.scale(r)).collect();
        for _ in 0..cfg.epochs {
            let mut gw = vec![0.0; d];
            let mut gb = 0.0;
            for (r, &label) in xs.iter().zip(y) {
                let err = sigmoid(model.margin(r)) - if label { 1.0 } else { 0.0 };
                gw.iter_mut().zip(r).for_each(|(g, v)| *g += err * v);
                gb += err;
            }
            for (w, g) in model.weights.iter_mut().zip(&gw) {
                *w -= cfg.learning_rate * (g / n as f64 + cfg.l2 * *w);
            }
            model.bias -= cfg.learning_rate * gb / n as f64;
        }
        Ok(model)
    }

    fn scale(&self, row: &[f64]) -> Vec<f64> {
        row.iter()
            .zip(self.feature_mean.iter().zip(&self.feature_scale))
            .map(|(v, (m, s))| (v - m) / s)
            .collect()
    }

    fn margin(&self, scaled: &[f64]) -> f64 {
        self.bias
            + self
                .weights
                .iter()
                .zip(scaled)
                .map(|(w, v)| w * v)
                .sum::<f64>()
    }

    pub fn predict_proba(&self, row: &[f64]) -> f64 {
        sigmoid(self.margin(&self.scale(row)))
    }
}

/// Train on a fixed seeded split of each view and return held-out AUROCs
/// `(raw, private)`.
pub fn downstream_auroc(
    features_raw: &[Vec<f64>],
    features_priv: &[Vec<f64>],
    labels: &[bool],
    cfg: &LogisticConfig,
) -> Result<(f64, f64)> {
    let n = labels.len();
    if features_raw.len() != n || features_priv.len() != n {
        return Err(Error::ShapeError(
            "feature rows and labels differ in count".into(),
        ));
    }
    if labels.iter().all(|&l| l) || labels.iter().all(|&l| !l) {
        return Err(Error::InvalidLabels("labels contain a single class".into()));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(cfg.seed));
    let n_test = ((n as f64 * cfg.test_fraction).round() as usize).clamp(1, n - 1);
    let (test, train) = idx.split_at(n_test);
    let eval = |features: &[Vec<f64>]| -> Result<f64> {
        let xtr: Vec<Vec<f64>> = train.iter().map(|&i| features[i].clone()).collect();
        let ytr: Vec<bool> = train.iter().map(|&i| labels[i]).collect();
        let model = LogisticModel::fit(&xtr, &ytr, cfg)?;
        let scores: Vec<f64> = test
            .iter()
            .map(|&i| model.predict_proba(&features[i]))
            .collect();
        let yte: Vec<bool> = test.iter().map(|&i| labels[i]).collect();
        auroc(&scores, &yte)
    };
    Ok((eval(features_raw)?, eval(features_priv)?))
}

fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Nearest-neighbour Euclidean distance from every row of `from` into `to`.
pub fn nn_distances(from: &[Vec<f64>], to: &[Vec<f64>]) -> Result<Vec<f64>> {
    if from.is_empty() || to.is_empty() {
        return Err(Error::InvalidSample(
            "nearest-neighbour sets must be non-empty".into(),
        ));
    }
    Ok(from
        .par_iter()
        .map(|a| {
            to.iter()
                .map(|b| euclid(a, b))
                .fold(f64::INFINITY, f64::min)
        })
        .collect())
}

/// Linear-interpolation quantile of a sorted sample.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NnProfile {
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub mean: f64,
}

impl NnProfile {
    pub fn from_distances(d: &[f64]) -> Self {
        let mut s = d.to_vec();
        s.sort_by(f64::total_cmp);
        Self {
            q1: quantile_sorted(&s, 0.25),
            median: quantile_sorted(&s, 0.5),
            q3: quantile_sorted(&s, 0.75),
            mean: s.iter().sum::<f64>() / s.len().max(1) as f64,
        }
    }
}

/// Z-score both feature sets against the column statistics of `real`.
pub fn embed(real: &[Vec<f64>], other: &[Vec<f64>]) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let n = real.len().max(1) as f64;
    let d = real.first().map(|r| r.len()).unwrap_or(0);
    let m: Vec<f64> = (0..d)
        .map(|j| real.iter().map(|r| r[j]).sum::<f64>() / n)
        .collect();
    let s: Vec<f64> = (0..d)
        .map(|j| {
            let v = real.iter().map(|r| (r[j] - m[j]).powi(2)).sum::<f64>() / n;
            if v > 1e-24 {
                v.sqrt()
            } else {
                1.0
            }
        })
        .collect();
    let f = |rows: &[Vec<f64>]| -> Vec<Vec<f64>> {
        rows.iter()
            .map(|r| {
                r.iter()
                    .enumerate()
                    .map(|(j, v)| (v - m[j]) / s[j])
                    .collect()
            })
            .collect()
    };
    (f(real), f(other))
}

/// Distribution of nearest-neighbour distances from each real sample into
/// the candidate view, in the z-scored summary-feature embedding.
pub fn nn_distance_profile(
    real_features: &[Vec<f64>],
    candidate_features: &[Vec<f64>],
) -> Result<NnProfile> {
    let (a, b) = embed(real_features, candidate_features);
    Ok(NnProfile::from_distances(&nn_distances(&a, &b)?))
}
