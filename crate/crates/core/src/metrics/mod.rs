//! Fidelity and utility measurements comparing a raw view with a released
//! one.

mod correlation;
mod distribution;
mod temporal;
mod utility;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use correlation::{corr_frobenius, corr_matrix, CorrComparison};
pub use distribution::{excess_kurtosis, ks_distance, oor_rate, skewness, PhysicalRange};
pub use temporal::{
    acf, chi_square_sf, durbin_levinson, ljung_box, pacf, welch_psd, LjungBox, Psd,
};
pub use utility::{
    auroc, auroc_two_sample, downstream_auroc, embed, nn_distance_profile, nn_distances,
    quantile_sorted, summary_features, LogisticConfig, LogisticModel, NnProfile,
};

/// Default maximum lag for ACF/PACF/Ljung–Box on 48-hour windows.
pub const DEFAULT_MAX_LAG: usize = 10;
pub const DEFAULT_WELCH_SEGMENT: usize = 16;
pub const DEFAULT_WELCH_OVERLAP: f64 = 0.5;

/// Metrics for one variable, raw versus released.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariableMetrics {
    pub ks: f64,
    pub shape_utility: f64,
    pub oor_rate: f64,
    /// Pooled-column mean change relative to `max(|mu|, sigma)`.
    pub d_mu: f64,
    /// Pooled-column standard-deviation change relative to `sigma`.
    pub d_sigma: f64,
    pub skewness: (f64, f64),
    pub excess_kurtosis: (f64, f64),
    /// Stay-averaged ACF at lags `1..=K`, raw then released.
    pub acf_raw: Vec<f64>,
    pub acf_priv: Vec<f64>,
    pub pacf_raw: Vec<f64>,
    pub pacf_priv: Vec<f64>,
    /// Median Ljung–Box p-value over stays.
    pub ljung_box_p_raw: f64,
    pub ljung_box_p_priv: f64,
    /// Half the L1 distance between stay-averaged normalized Welch spectra.
    pub psd_distance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub variables: BTreeMap<String, VariableMetrics>,
    pub corr_frobenius: Option<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub constant_columns: Vec<String>,
    pub downstream_auroc: Option<(f64, f64)>,
    pub nn_distance: Option<NnProfile>,
}

fn pooled(series: &[Vec<f64>]) -> Vec<f64> {
    series.iter().flatten().copied().collect()
}

fn mean_std(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    let v = x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n;
    (m, v.sqrt())
}

/// Relative moment drift `(d_mu, d_sigma)` between two pooled columns.
pub fn moment_drift(raw: &[f64], private: &[f64]) -> (f64, f64) {
    let (m0, s0) = mean_std(raw);
    let (m1, s1) = mean_std(private);
    let scale = m0.abs().max(s0).max(crate::manifold::DEFAULT_SIGMA_FLOOR);
    (
        (m1 - m0).abs() / scale,
        (s1 - s0).abs() / s0.max(crate::manifold::DEFAULT_SIGMA_FLOOR),
    )
}

fn average(rows: &[Vec<f64>], width: usize) -> Vec<f64> {
    if rows.is_empty() {
        return vec![0.0; width];
    }
    let mut acc = vec![0.0; width];
    for r in rows {
        for (a, v) in acc.iter_mut().zip(r) {
            *a += v;
        }
    }
    acc.iter().map(|a| a / rows.len() as f64).collect()
}

fn median(mut v: Vec<f64>) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(f64::total_cmp);
    quantile_sorted(&v, 0.5)
}

struct Temporal {
    acf: Vec<f64>,
    pacf: Vec<f64>,
    lb_p: f64,
    psd: Vec<f64>,
}

fn temporal(series: &[Vec<f64>], lag: usize) -> Result<Temporal> {
    let usable: Vec<&Vec<f64>> = series.iter().filter(|s| s.len() > lag).collect();
    let acfs: Vec<Vec<f64>> = usable.iter().map(|s| acf(s, lag)).collect::<Result<_>>()?;
    let pacfs: Vec<Vec<f64>> = usable.iter().map(|s| pacf(s, lag)).collect::<Result<_>>()?;
    let lb: Vec<f64> = usable
        .iter()
        .map(|s| ljung_box(s, lag).map(|r| r.p_value))
        .collect::<Result<_>>()?;
    let psds: Vec<Vec<f64>> = series
        .iter()
        .filter(|s| s.len() >= DEFAULT_WELCH_SEGMENT)
        .map(|s| welch_psd(s, DEFAULT_WELCH_SEGMENT, DEFAULT_WELCH_OVERLAP).map(|p| p.normalized()))
        .collect::<Result<_>>()?;
    Ok(Temporal {
        acf: average(&acfs, lag),
        pacf: average(&pacfs, lag),
        lb_p: median(lb),
        psd: average(&psds, DEFAULT_WELCH_SEGMENT / 2 + 1),
    })
}

/// Full metric row for one variable given aligned per-stay series in
/// physical units.
pub fn variable_metrics(
    raw: &[Vec<f64>],
    private: &[Vec<f64>],
    range: Option<&PhysicalRange>,
    max_lag: usize,
) -> Result<VariableMetrics> {
    if raw.len() != private.len() || raw.iter().zip(private).any(|(a, b)| a.len() != b.len()) {
        return Err(Error::ShapeError(
            "raw and released series differ in shape".into(),
        ));
    }
    let (pr, pp) = (pooled(raw), pooled(private));
    if pr.is_empty() {
        return Err(Error::InvalidSample("no observations".into()));
    }
    let ks = ks_distance(&pr, &pp)?;
    let (d_mu, d_sigma) = moment_drift(&pr, &pp);
    let tr = temporal(raw, max_lag)?;
    let tp = temporal(private, max_lag)?;
    let psd_distance = 0.5
        * tr.psd
            .iter()
            .zip(&tp.psd)
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>();
    Ok(VariableMetrics {
        ks,
        shape_utility: 1.0 - ks,
        oor_rate: match range {
            Some(r) => oor_rate(&pp, r)?,
            None => 0.0,
        },
        d_mu,
        d_sigma,
        skewness: (skewness(&pr), skewness(&pp)),
        excess_kurtosis: (excess_kurtosis(&pr), excess_kurtosis(&pp)),
        acf_raw: tr.acf,
        acf_priv: tp.acf,
        pacf_raw: tr.pacf,
        pacf_priv: tp.pacf,
        ljung_box_p_raw: tr.lb_p,
        ljung_box_p_priv: tp.lb_p,
        psd_distance,
    })
}
