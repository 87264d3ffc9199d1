//! Cross-variable correlation structure.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::manifold::mean;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrComparison {
    pub frobenius: f64,
    /// Columns (by index) that were constant in either input; their
    /// correlations were taken as 0.
    pub constant_columns: Vec<usize>,
}

/// Pearson correlation matrix of the given columns. Constant columns get
/// zero off-diagonal correlations and are reported by index.
pub fn corr_matrix(cols: &[Vec<f64>]) -> Result<(Vec<Vec<f64>>, Vec<usize>)> {
    let p = cols.len();
    if p < 2 {
        return Err(Error::ShapeError(format!(
            "need at least 2 columns, got {p}"
        )));
    }
    let n = cols[0].len();
    if n < 2 || cols.iter().any(|c| c.len() != n) {
        return Err(Error::ShapeError(
            "columns must share a length of at least 2".into(),
        ));
    }
    let centered: Vec<Vec<f64>> = cols
        .iter()
        .map(|c| {
            let m = mean(c);
            c.iter().map(|v| v - m).collect()
        })
        .collect();
    let norms: Vec<f64> = centered
        .iter()
        .map(|c| c.iter().map(|v| v * v).sum::<f64>().sqrt())
        .collect();
    let constant: Vec<usize> = (0..p).filter(|&j| !(norms[j] > 0.0)).collect();
    let mut r = vec![vec![0.0; p]; p];
    for i in 0..p {
        r[i][i] = 1.0;
        for j in (i + 1)..p {
            let v = if norms[i] > 0.0 && norms[j] > 0.0 {
                let dot: f64 = centered[i]
                    .iter()
                    .zip(&centered[j])
                    .map(|(a, b)| a * b)
                    .sum();
                dot / (norms[i] * norms[j])
            } else {
                0.0
            };
            r[i][j] = v;
            r[j][i] = v;
        }
    }
    Ok((r, constant))
}

/// `||Corr(priv) - Corr(raw)||_F`.
pub fn corr_frobenius(raw: &[Vec<f64>], private: &[Vec<f64>]) -> Result<CorrComparison> {
    if raw.len() != private.len() {
        return Err(Error::ShapeError(format!(
            "raw has {} columns, private has {}",
            raw.len(),
            private.len()
        )));
    }
    let (ra, ca) = corr_matrix(raw)?;
    let (rb, cb) = corr_matrix(private)?;
    if ra.len() != rb.len() || raw[0].len() != private[0].len() {
        return Err(Error::ShapeError(
            "raw and private snapshots differ in shape".into(),
        ));
    }
    let frobenius = ra
        .iter()
        .flatten()
        .zip(rb.iter().flatten())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    let mut constant_columns: Vec<usize> = ca.into_iter().chain(cb).collect();
    constant_columns.sort_unstable();
    constant_columns.dedup();
    Ok(CorrComparison {
        frobenius,
        constant_columns,
    })
}
