//! Family A: linear reconstruction of the raw z-sequence from the released
//! one.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::Pair;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ToeplitzHyper {
    pub learning_rate: f64,
    pub decay: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub validation_fraction: f64,
    pub seed: u64,
}

impl Default for ToeplitzHyper {
    fn default() -> Self {
        Self {
            learning_rate: 0.05,
            decay: 0.99,
            max_epochs: 2000,
            patience: 20,
            validation_fraction: 0.1,
            seed: 0,
        }
    }
}

pub const DEFAULT_KERNEL_WIDTH: usize = 9;

/// `z_hat_t = sum_j kernel[j] * y_{t + j - h} + bias`, zero-padded at the
/// edges, `h = (w - 1) / 2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearAttacker {
    pub kernel: Vec<f64>,
    pub bias: f64,
    pub epochs: usize,
    pub final_loss: f64,
}

impl LinearAttacker {
    pub fn predict(&self, y: &[f64]) -> Vec<f64> {
        let w = self.kernel.len();
        let h = (w / 2) as isize;
        (0..y.len() as isize)
            .map(|t| {
                let mut acc = self.bias;
                for (j, k) in self.kernel.iter().enumerate() {
                    let s = t + j as isize - h;
                    if s >= 0 && (s as usize) < y.len() {
                        acc += k * y[s as usize];
                    }
                }
                acc
            })
            .collect()
    }
}

/// Second-moment statistics of `(features, target)` for a set of pairs,
/// where the features are the `w` shifted inputs plus a constant.
struct Moments {
    gram: DMatrix<f64>,
    cross: DVector<f64>,
    zz: f64,
}

impl Moments {
    fn from_pairs(pairs: &[&Pair], w: usize) -> Self {
        let d = w + 1;
        let h = (w / 2) as isize;
        let mut gram = DMatrix::zeros(d, d);
        let mut cross = DVector::zeros(d);
        let mut zz = 0.0;
        let mut count: f64 = 0.0;
        let mut f = vec![0.0; d];
        for p in pairs {
            let n = p.y.len() as isize;
            for t in 0..n {
                for (j, fj) in f.iter_mut().enumerate() {
                    let s = t + j as isize - h;
                    *fj = if s >= 0 && s < n {
                        p.y[s as usize]
                    } else {
                        0.0
                    };
                }
                f[w] = 1.0;
                let z = p.z[t as usize];
                for a in 0..d {
                    cross[a] += f[a] * z;
                    for b in a..d {
                        gram[(a, b)] += f[a] * f[b];
                    }
                }
                zz += z * z;
                count += 1.0;
            }
        }
        for a in 0..d {
            for b in 0..a {
                gram[(a, b)] = gram[(b, a)];
            }
        }
        let c = count.max(1.0);
        Self {
            gram: gram / c,
            cross: cross / c,
            zz: zz / c,
        }
    }

    /// Mean squared error of parameters `theta`.
    fn loss(&self, theta: &DVector<f64>) -> f64 {
        (theta.dot(&(&self.gram * theta)) - 2.0 * theta.dot(&self.cross) + self.zz).max(0.0)
    }
}

fn check_pairs(paired: &[Pair]) -> Result<usize> {
    if paired.is_empty() {
        return Err(Error::NoPairedData("empty paired set".into()));
    }
    let n = paired[0].z.len();
    if paired.iter().any(|p| p.y.len() != n || p.z.len() != n) {
        return Err(Error::ShapeError(
            "paired sequences must share one length".into(),
        ));
    }
    Ok(n)
}

/// Fit the Toeplitz attacker by full-batch gradient descent on the MSE,
/// with early stopping on a seeded validation carve-out of the pairs.
pub fn attack_a_train(
    paired: &[Pair],
    kernel_width: usize,
    hyper: &ToeplitzHyper,
) -> Result<LinearAttacker> {
    let n = check_pairs(paired)?;
    if paired.len() < 2 {
        return Err(Error::NoPairedData(format!(
            "need at least 2 paired stays, got {}",
            paired.len()
        )));
    }
    if kernel_width == 0 || kernel_width.is_multiple_of(2) || kernel_width > n {
        return Err(Error::ConfigError(format!(
            "kernel width {kernel_width} must be odd and in [1, {n}]"
        )));
    }
    let mut order: Vec<usize> = (0..paired.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(hyper.seed));
    let n_val = ((paired.len() as f64 * hyper.validation_fraction).round() as usize)
        .clamp(1, paired.len() - 1);
    let val: Vec<&Pair> = order[..n_val].iter().map(|&i| &paired[i]).collect();
    let train: Vec<&Pair> = order[n_val..].iter().map(|&i| &paired[i]).collect();
    let tm = Moments::from_pairs(&train, kernel_width);
    let vm = Moments::from_pairs(&val, kernel_width);

    // keep plain gradient descent stable on unusually scaled inputs
    let trace = tm.gram.trace();
    let mut lr = hyper.learning_rate;
    if 2.0 * lr * trace > 1.9 {
        lr = 1.9 / (2.0 * trace);
    }

    let d = kernel_width + 1;
    let mut theta = DVector::zeros(d);
    let mut best = (vm.loss(&theta), theta.clone(), 0usize);
    let mut since_best = 0;
    let mut epochs = 0;
    for epoch in 1..=hyper.max_epochs {
        let grad = (&tm.gram * &theta - &tm.cross) * 2.0;
        theta -= grad * lr;
        lr *= hyper.decay;
        epochs = epoch;
        let v = vm.loss(&theta);
        if v < best.0 {
            best = (v, theta.clone(), epoch);
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= hyper.patience {
                break;
            }
        }
    }
    let theta = best.1;
    Ok(LinearAttacker {
        kernel: theta.as_slice()[..kernel_width].to_vec(),
        bias: theta[kernel_width],
        epochs,
        final_loss: tm.loss(&theta),
    })
}

/// Dense ridge model `z_hat = W y + b`.
#[derive(Debug, Clone)]
pub struct RidgeModel {
    pub weights: DMatrix<f64>,
    pub bias: DVector<f64>,
}

impl RidgeModel {
    pub fn predict(&self, y: &[f64]) -> Vec<f64> {
        let v = &self.weights * DVector::from_column_slice(y) + &self.bias;
        v.as_slice().to_vec()
    }
}

/// Multi-output ridge regression on centered data; the intercept is not
/// penalized.
pub fn ridge_fit(x: &[Vec<f64>], targets: &[Vec<f64>], lambda: f64) -> Result<RidgeModel> {
    if x.is_empty() || x.len() != targets.len() {
        return Err(Error::ShapeError(format!(
            "{} inputs, {} targets",
            x.len(),
            targets.len()
        )));
    }
    if !(lambda >= 0.0) {
        return Err(Error::ConfigError(format!(
            "ridge lambda must be >= 0, got {lambda}"
        )));
    }
    let (rows, p, q) = (x.len(), x[0].len(), targets[0].len());
    let xm = DMatrix::from_fn(rows, p, |i, j| x[i][j]);
    let ym = DMatrix::from_fn(rows, q, |i, j| targets[i][j]);
    let x_mean = xm.row_mean();
    let y_mean = ym.row_mean();
    let mut xc = xm;
    let mut yc = ym;
    for mut r in xc.row_iter_mut() {
        r -= &x_mean;
    }
    for mut r in yc.row_iter_mut() {
        r -= &y_mean;
    }
    let mut a = xc.transpose() * &xc;
    for i in 0..p {
        a[(i, i)] += lambda;
    }
    let rhs = xc.transpose() * &yc;
    let chol = a.cholesky().ok_or_else(|| {
        Error::SingularSystem(format!(
            "normal equations ({p}x{p}) not positive definite at lambda = {lambda}"
        ))
    })?;
    let beta = chol.solve(&rhs); // p x q
                                 // guard against numerically singular systems that still factor
    if beta.iter().any(|v| !v.is_finite()) {
        return Err(Error::SingularSystem("non-finite ridge solution".into()));
    }
    let weights = beta.transpose();
    let bias = y_mean.transpose() - &weights * x_mean.transpose();
    Ok(RidgeModel { weights, bias })
}

/// The strongest linear inverse: one ridge regression per output time step
/// on the whole released sequence.
pub fn attack_a_full_linear_ridge(paired: &[Pair], lambda: f64) -> Result<RidgeModel> {
    check_pairs(paired)?;
    let x: Vec<Vec<f64>> = paired.iter().map(|p| p.y.clone()).collect();
    let z: Vec<Vec<f64>> = paired.iter().map(|p| p.z.clone()).collect();
    ridge_fit(&x, &z, lambda)
}

/// Any fitted reconstruction model.
pub trait Reconstructor {
    fn reconstruct(&self, y: &[f64]) -> Vec<f64>;
}

impl Reconstructor for LinearAttacker {
    fn reconstruct(&self, y: &[f64]) -> Vec<f64> {
        self.predict(y)
    }
}

impl Reconstructor for RidgeModel {
    fn reconstruct(&self, y: &[f64]) -> Vec<f64> {
        self.predict(y)
    }
}

/// Pooled `R^2 = 1 - SSE/SST` (SST about the pooled mean of the truth).
pub fn pooled_r2(truth: &[f64], pred: &[f64]) -> f64 {
    let m = truth.iter().sum::<f64>() / truth.len().max(1) as f64;
    let sse: f64 = truth.iter().zip(pred).map(|(a, b)| (a - b) * (a - b)).sum();
    let sst: f64 = truth.iter().map(|a| (a - m) * (a - m)).sum();
    if sst > 0.0 {
        1.0 - sse / sst
    } else if sse == 0.0 {
        1.0
    } else {
        f64::NEG_INFINITY
    }
}

/// Heldout `(r2, mae_z)` pooled over stays and time.
pub fn attack_a_eval(attacker: &dyn Reconstructor, heldout: &[Pair]) -> Result<(f64, f64)> {
    if heldout.is_empty() {
        return Err(Error::InvalidSample("empty heldout set".into()));
    }
    let mut truth = Vec::new();
    let mut pred = Vec::new();
    for p in heldout {
        truth.extend_from_slice(&p.z);
        pred.extend(attacker.reconstruct(&p.y));
    }
    let mae = truth
        .iter()
        .zip(&pred)
        .map(|(a, b)| (a - b).abs())
        .sum::<f64>()
        / truth.len() as f64;
    Ok((pooled_r2(&truth, &pred), mae))
}
