//! Temporal dependence: ACF, PACF, Ljung–Box and Welch spectra.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::error::{Error, Result};
use crate::manifold::mean;

fn check_lag(n: usize, k: usize) -> Result<()> {
    if k == 0 || k >= n {
        return Err(Error::InvalidLag(format!(
            "max lag {k} must satisfy 1 <= K < n = {n}"
        )));
    }
    Ok(())
}

/// Sample autocorrelations at lags `1..=k`, using the common-mean estimator
/// `sum_t (x_t - m)(x_{t+k} - m) / sum_t (x_t - m)^2`. A constant series has
/// all-zero autocorrelations.
pub fn acf(x: &[f64], k: usize) -> Result<Vec<f64>> {
    check_lag(x.len(), k)?;
    let m = mean(x);
    let d: Vec<f64> = x.iter().map(|v| v - m).collect();
    let denom: f64 = d.iter().map(|v| v * v).sum();
    if !(denom > 1e-300) {
        return Ok(vec![0.0; k]);
    }
    Ok((1..=k)
        .map(|lag| d.iter().zip(&d[lag..]).map(|(a, b)| a * b).sum::<f64>() / denom)
        .collect())
}

/// Partial autocorrelations at lags `1..=k` by the Durbin–Levinson recursion.
pub fn pacf(x: &[f64], k: usize) -> Result<Vec<f64>> {
    let r = acf(x, k)?;
    Ok(durbin_levinson(&r))
}

/// PACF from autocorrelations `r[0] = rho_1, ..., r[k-1] = rho_k`.
pub fn durbin_levinson(r: &[f64]) -> Vec<f64> {
    let k = r.len();
    let mut out = Vec::with_capacity(k);
    let mut phi: Vec<f64> = Vec::with_capacity(k);
    let mut v: f64 = 1.0;
    for n in 0..k {
        let num = r[n]
            - phi
                .iter()
                .enumerate()
                .map(|(j, p)| p * r[n - 1 - j])
                .sum::<f64>();
        let a = if v.abs() > 1e-300 { num / v } else { 0.0 };
        let prev = phi.clone();
        for j in 0..n {
            phi[j] = prev[j] - a * prev[n - 1 - j];
        }
        phi.push(a);
        v *= 1.0 - a * a;
        out.push(a);
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LjungBox {
    pub q_stat: f64,
    pub p_value: f64,
}

/// Ljung–Box portmanteau test over lags `1..=k`.
pub fn ljung_box(x: &[f64], k: usize) -> Result<LjungBox> {
    let r = acf(x, k)?;
    let n = x.len() as f64;
    let q = n
        * (n + 2.0)
        * r.iter()
            .enumerate()
            .map(|(i, rk)| rk * rk / (n - (i + 1) as f64))
            .sum::<f64>();
    Ok(LjungBox {
        q_stat: q,
        p_value: chi_square_sf(q, k as f64),
    })
}

/// Upper tail of the chi-square distribution with `dof` degrees of freedom.
pub fn chi_square_sf(x: f64, dof: f64) -> f64 {
    if !(x > 0.0) {
        return 1.0;
    }
    ChiSquared::new(dof).map(|d| d.sf(x)).unwrap_or(f64::NAN)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Psd {
    pub freqs: Vec<f64>,
    pub power: Vec<f64>,
}

impl Psd {
    /// Total power `sum(power) * df`.
    pub fn total_power(&self) -> f64 {
        let df = if self.freqs.len() > 1 {
            self.freqs[1] - self.freqs[0]
        } else {
            1.0
        };
        self.power.iter().sum::<f64>() * df
    }

    /// Spectrum scaled to unit total power; all zeros stay zeros.
    pub fn normalized(&self) -> Vec<f64> {
        let s: f64 = self.power.iter().sum();
        if s > 0.0 {
            self.power.iter().map(|p| p / s).collect()
        } else {
            self.power.clone()
        }
    }
}

/// One-sided Welch density estimate at unit sampling rate: Hann-windowed
/// segments, per-segment mean removal, averaged periodograms.
pub fn welch_psd(x: &[f64], segment_len: usize, overlap_frac: f64) -> Result<Psd> {
    if segment_len < 8 || segment_len > x.len() {
        return Err(Error::InvalidSegment(format!(
            "segment length {segment_len} must lie in [8, n = {}]",
            x.len()
        )));
    }
    if !(0.0..1.0).contains(&overlap_frac) {
        return Err(Error::InvalidSegment(format!(
            "overlap {overlap_frac} outside [0, 1)"
        )));
    }
    let l = segment_len;
    let step = (l - (l as f64 * overlap_frac).floor() as usize).max(1);
    let window: Vec<f64> = (0..l)
        .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / l as f64).cos())
        .collect();
    let wss: f64 = window.iter().map(|w| w * w).sum();
    let fft = FftPlanner::<f64>::new().plan_fft_forward(l);
    let bins = l / 2 + 1;
    let mut acc = vec![0.0; bins];
    let mut count = 0usize;
    let mut buf = vec![Complex::new(0.0, 0.0); l];
    let mut start = 0;
    while start + l <= x.len() {
        let seg = &x[start..start + l];
        let m = mean(seg);
        for (b, (v, w)) in buf.iter_mut().zip(seg.iter().zip(&window)) {
            *b = Complex::new((v - m) * w, 0.0);
        }
        fft.process(&mut buf);
        for (a, c) in acc.iter_mut().zip(&buf) {
            *a += c.norm_sqr();
        }
        count += 1;
        start += step;
    }
    let scale = 1.0 / (wss * count as f64);
    let mut power: Vec<f64> = acc.iter().map(|a| a * scale).collect();
    let last = if l.is_multiple_of(2) { bins - 1 } else { bins };
    for p in power.iter_mut().take(last).skip(1) {
        *p *= 2.0;
    }
    let freqs = (0..bins).map(|k| k as f64 / l as f64).collect();
    Ok(Psd { freqs, power })
}
