use std::collections::BTreeMap;
use std::io::Read;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::cohort::CohortView;
use crate::error::{Error, Result};
use crate::metrics::PhysicalRange;

pub const LONG_HEADER: [&str; 4] = ["stay_id", "variable", "hour", "value"];

/// Largest tolerated share of malformed rows.
pub const MAX_MALFORMED_FRACTION: f64 = 0.01;

/// Default last grid hour: 48 hourly points.
pub const DEFAULT_T_MAX: u32 = 47;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawEvent {
    pub stay_id: String,
    pub variable: String,
    /// Hours since admission.
    pub hour: f64,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestReport {
    pub events: Vec<RawEvent>,
    pub rows: usize,
    pub malformed: usize,
    pub pre_admission: usize,
}

fn parse_row(rec: &csv::StringRecord) -> Option<RawEvent> {
    if rec.len() != 4 {
        return None;
    }
    let stay_id = rec[0].trim();
    let variable = rec[1].trim();
    if stay_id.is_empty() || variable.is_empty() {
        return None;
    }
    let hour: f64 = rec[2].trim().parse().ok()?;
    let value: f64 = rec[3].trim().parse().ok()?;
    if !hour.is_finite() || !value.is_finite() {
        return None;
    }
    Some(RawEvent {
        stay_id: stay_id.to_string(),
        variable: variable.to_string(),
        hour,
        value,
    })
}

/// Parse a long CSV from any reader.
pub fn ingest_long_reader<R: Read>(reader: R) -> Result<IngestReport> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(reader);
    let mut records = rdr.records();
    let header = match records.next() {
        Some(r) => r?,
        None => {
            return Err(Error::FormatError(
                "empty file: expected header stay_id,variable,hour,value".into(),
            ))
        }
    };
    if header.iter().map(str::trim).ne(LONG_HEADER) {
        return Err(Error::FormatError(format!(
            "header must be exactly stay_id,variable,hour,value; found {}",
            header.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let mut report = IngestReport {
        events: Vec::new(),
        rows: 0,
        malformed: 0,
        pre_admission: 0,
    };
    for rec in records {
        report.rows += 1;
        let parsed = rec.ok().as_ref().and_then(parse_row);
        match parsed {
            None => report.malformed += 1,
            Some(e) if e.hour < 0.0 => report.pre_admission += 1,
            Some(e) => report.events.push(e),
        }
    }
    if report.rows > 0 && report.malformed as f64 > MAX_MALFORMED_FRACTION * report.rows as f64 {
        return Err(Error::IngestError(format!(
            "{} of {} rows malformed (limit {:.0}%)",
            report.malformed,
            report.rows,
            MAX_MALFORMED_FRACTION * 100.0
        )));
    }
    Ok(report)
}

pub fn ingest_long_csv(path: &Path) -> Result<IngestReport> {
    ingest_long_reader(std::fs::File::open(path)?)
}

/// Fill one series of `t_len` hours from `(hour index, value)` anchors
/// sorted by hour: back-fill before the first anchor, linear interpolation
/// between anchors, forward-fill after the last.
fn fill_series(anchors: &[(usize, f64)], t_len: usize) -> Vec<f64> {
    let mut out = vec![0.0; t_len];
    let (first_h, first_v) = anchors[0];
    for v in out.iter_mut().take(first_h + 1) {
        *v = first_v;
    }
    for w in anchors.windows(2) {
        let ((h0, v0), (h1, v1)) = (w[0], w[1]);
        for (k, o) in out[h0..=h1].iter_mut().enumerate() {
            let t = k as f64 / (h1 - h0) as f64;
            *o = if h0 + k == h1 { v1 } else { v0 + t * (v1 - v0) };
        }
    }
    let (last_h, last_v) = anchors[anchors.len() - 1];
    for v in out.iter_mut().skip(last_h) {
        *v = last_v;
    }
    out
}

/// Grid events onto hours `0..=t_max` (after subtracting `start_hour`).
/// Offsets are floored to the hour and the last value in each hour wins.
/// Stays without observations for a variable are left out of that
/// variable. Values are clipped to their physical range when one is given.
pub fn grid_hourly(
    events: &[RawEvent],
    start_hour: u32,
    t_max: u32,
    ranges: &BTreeMap<String, PhysicalRange>,
) -> Result<CohortView> {
    let t_len = t_max as usize + 1;
    // (hour offset, input order, value) per (stay, variable)
    type Obs = Vec<(f64, usize, f64)>;
    let mut cells: BTreeMap<(&str, &str), Obs> = BTreeMap::new();
    for (i, e) in events.iter().enumerate() {
        let rel = e.hour - f64::from(start_hour);
        if rel < 0.0 || rel.floor() > f64::from(t_max) {
            continue;
        }
        cells
            .entry((e.variable.as_str(), e.stay_id.as_str()))
            .or_default()
            .push((rel, i, e.value));
    }
    if cells.is_empty() {
        return Err(Error::EmptyCohort);
    }
    let filled: Vec<((&str, &str), Vec<f64>)> = cells
        .into_par_iter()
        .map(|(key, mut obs)| {
            obs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            let mut anchors: Vec<(usize, f64)> = Vec::with_capacity(obs.len());
            for (rel, _, v) in obs {
                let h = rel.floor() as usize;
                match anchors.last_mut() {
                    Some(last) if last.0 == h => last.1 = v,
                    _ => anchors.push((h, v)),
                }
            }
            let mut s = fill_series(&anchors, t_len);
            if let Some(r) = ranges.get(key.0) {
                s.iter_mut().for_each(|v| *v = r.clip(*v));
            }
            (key, s)
        })
        .collect();
    let mut by_var: BTreeMap<&str, BTreeMap<String, Vec<f64>>> = BTreeMap::new();
    for ((var, stay), s) in filled {
        by_var.entry(var).or_default().insert(stay.to_string(), s);
    }
    let mut view = CohortView::new(start_hour, t_len);
    for (var, stays) in by_var {
        view.insert_variable(var, stays, ranges.get(var).cloned())?;
    }
    Ok(view)
}

/// Grid over a half-open window `[lo, hi)` of hours. The grid ends at the
/// last hour any event reaches, so a window longer than the data does not
/// fabricate trailing hours.
pub fn grid_window(
    events: &[RawEvent],
    window: [u32; 2],
    ranges: &BTreeMap<String, PhysicalRange>,
) -> Result<CohortView> {
    let [lo, hi] = window;
    if lo >= hi {
        return Err(Error::ConfigError(format!(
            "time window [{lo}, {hi}) is empty"
        )));
    }
    let last_seen = events
        .iter()
        .filter(|e| e.hour >= f64::from(lo) && e.hour < f64::from(hi))
        .map(|e| e.hour.floor() as u32)
        .max()
        .ok_or(Error::EmptyCohort)?;
    grid_hourly(events, lo, last_seen - lo, ranges)
}

/// Write a gridded cohort as raw long-format events with integer hours.
pub fn write_events_csv<W: std::io::Write>(view: &CohortView, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(LONG_HEADER)?;
    for (stay, var, hour, value) in long_rows(view) {
        w.write_record([stay, var, &hour.to_string(), &format!("{value:.16e}")])?;
    }
    w.flush()?;
    Ok(())
}

/// Rows `(stay, variable, hour, value)` sorted by stay, variable, hour.
pub(crate) fn long_rows(view: &CohortView) -> Vec<(&str, &str, u32, f64)> {
    let mut rows = Vec::new();
    for (var, data) in &view.variables {
        for (stay, s) in &data.stays {
            for (t, v) in s.iter().enumerate() {
                rows.push((stay.as_str(), var.as_str(), view.start_hour + t as u32, *v));
            }
        }
    }
    rows.sort_by(|a, b| a.0.cmp(b.0).then(a.1.cmp(b.1)).then(a.2.cmp(&b.2)));
    rows
}
