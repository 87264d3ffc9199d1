use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::manifold::{column_stats, ColumnStats, DEFAULT_SIGMA_FLOOR};
use crate::metrics::PhysicalRange;
use crate::operators::Layout;

/// One variable's hourly series for every stay that observed it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariableData {
    pub stays: BTreeMap<String, Vec<f64>>,
    pub stats: ColumnStats,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub range: Option<PhysicalRange>,
}

impl VariableData {
    pub fn stay_ids(&self) -> Vec<String> {
        self.stays.keys().cloned().collect()
    }

    /// Series in stay-id order.
    pub fn series(&self) -> Vec<Vec<f64>> {
        self.stays.values().cloned().collect()
    }

    /// Concatenated cohort column and its per-stay layout.
    pub fn column(&self) -> (Vec<f64>, Layout) {
        let values = self.stays.values().flatten().copied().collect();
        let layout = Layout::from_stays(self.stays.iter().map(|(id, s)| (id.clone(), s.len())));
        (values, layout)
    }
}

/// Gridded cohort: every series has `t_len` hourly points starting at
/// `start_hour`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortView {
    pub start_hour: u32,
    pub t_len: usize,
    pub variables: BTreeMap<String, VariableData>,
}

impl CohortView {
    pub fn new(start_hour: u32, t_len: usize) -> Self {
        Self {
            start_hour,
            t_len,
            variables: BTreeMap::new(),
        }
    }

    /// Insert a variable; stats are computed over all of its stays.
    pub fn insert_variable(
        &mut self,
        name: &str,
        stays: BTreeMap<String, Vec<f64>>,
        range: Option<PhysicalRange>,
    ) -> Result<()> {
        if let Some((id, s)) = stays.iter().find(|(_, s)| s.len() != self.t_len) {
            return Err(Error::ShapeError(format!(
                "{name}/{id}: series length {} differs from grid length {}",
                s.len(),
                self.t_len
            )));
        }
        let pooled: Vec<f64> = stays.values().flatten().copied().collect();
        let stats = column_stats(&pooled, DEFAULT_SIGMA_FLOOR)?;
        self.variables.insert(
            name.to_string(),
            VariableData {
                stays,
                stats,
                range,
            },
        );
        Ok(())
    }

    pub fn variable(&self, name: &str) -> Result<&VariableData> {
        self.variables
            .get(name)
            .ok_or_else(|| Error::InvalidColumn(format!("variable {name} not in cohort")))
    }

    pub fn variable_names(&self) -> Vec<String> {
        self.variables.keys().cloned().collect()
    }

    /// Union of stay ids across variables.
    pub fn stay_ids(&self) -> Vec<String> {
        let all: BTreeSet<&String> = self
            .variables
            .values()
            .flat_map(|v| v.stays.keys())
            .collect();
        all.into_iter().cloned().collect()
    }

    /// Stays observed for every variable.
    pub fn complete_stay_ids(&self) -> Vec<String> {
        self.stay_ids()
            .into_iter()
            .filter(|id| self.variables.values().all(|v| v.stays.contains_key(id)))
            .collect()
    }

    pub fn n_stays(&self) -> usize {
        self.stay_ids().len()
    }

    /// Recompute every variable's stats from the given stays only.
    pub fn restrict_stats_to(&mut self, ids: &[String]) -> Result<()> {
        let keep: BTreeSet<&String> = ids.iter().collect();
        for (name, v) in self.variables.iter_mut() {
            let pooled: Vec<f64> = v
                .stays
                .iter()
                .filter(|(id, _)| keep.contains(id))
                .flat_map(|(_, s)| s.iter().copied())
                .collect();
            if pooled.is_empty() {
                return Err(Error::InvalidSample(format!(
                    "{name}: no stays in the statistics partition"
                )));
            }
            v.stats = column_stats(&pooled, DEFAULT_SIGMA_FLOOR)?;
        }
        Ok(())
    }

    /// Hex SHA-256 over grid shape, ids and value bits.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.start_hour.to_le_bytes());
        h.update((self.t_len as u64).to_le_bytes());
        for (name, v) in &self.variables {
            h.update(name.as_bytes());
            h.update([0]);
            for (id, s) in &v.stays {
                h.update(id.as_bytes());
                h.update([0]);
                for x in s {
                    h.update(x.to_bits().to_le_bytes());
                }
            }
        }
        hex::encode(h.finalize())
    }

    /// Same variables, stays and grid.
    pub fn same_shape(&self, other: &CohortView) -> Result<()> {
        if self.t_len != other.t_len || self.start_hour != other.start_hour {
            return Err(Error::ShapeError(format!(
                "grid [{}, +{}) differs from [{}, +{})",
                self.start_hour, self.t_len, other.start_hour, other.t_len
            )));
        }
        if self.variable_names() != other.variable_names() {
            return Err(Error::ShapeError("views hold different variables".into()));
        }
        for (name, v) in &self.variables {
            if !v.stays.keys().eq(other.variables[name].stays.keys()) {
                return Err(Error::ShapeError(format!(
                    "{name}: views hold different stays"
                )));
            }
        }
        Ok(())
    }
}

/// Physical ranges for the bundled variables.
pub fn default_ranges() -> BTreeMap<String, PhysicalRange> {
    [
        ("HR", 20.0, 250.0),
        ("Glucose", 20.0, 1000.0),
        ("Lactate", 0.1, 30.0),
    ]
    .into_iter()
    .map(|(v, lo, hi)| {
        (
            v.to_string(),
            PhysicalRange {
                variable: v.to_string(),
                lo,
                hi,
            },
        )
    })
    .collect()
}

/// Read a `variable,lo,hi` CSV.
pub fn read_ranges(path: &std::path::Path) -> Result<BTreeMap<String, PhysicalRange>> {
    #[derive(Deserialize)]
    struct Row {
        variable: String,
        lo: f64,
        hi: f64,
    }
    let mut rdr = csv::Reader::from_path(path)?;
    let mut out = BTreeMap::new();
    for row in rdr.deserialize() {
        let r: Row = row?;
        out.insert(
            r.variable.clone(),
            PhysicalRange::new(r.variable, r.lo, r.hi)?,
        );
    }
    Ok(out)
}

pub fn write_ranges(
    path: &std::path::Path,
    ranges: &BTreeMap<String, PhysicalRange>,
) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["variable", "lo", "hi"])?;
    for r in ranges.values() {
        w.write_record([r.variable.clone(), r.lo.to_string(), r.hi.to_string()])?;
    }
    w.flush()?;
    Ok(())
}
