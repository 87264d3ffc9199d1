use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use super::cohort::CohortView;
use super::ingest::{long_rows, LONG_HEADER};
use super::run::RunManifest;
use crate::error::{Error, Result};
use crate::skills::OutputFormat;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ViewPaths {
    pub csv: PathBuf,
    pub manifest: PathBuf,
    pub index: PathBuf,
}

fn fmt_value(v: f64) -> String {
    format!("{v:.16e}")
}

/// Serialize a view; values carry 17 significant digits so parsing them
/// back is exact.
pub fn view_to_csv(view: &CohortView, format: OutputFormat) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    match format {
        OutputFormat::Long => {
            w.write_record(LONG_HEADER)?;
            for (stay, var, hour, value) in long_rows(view) {
                w.write_record([stay, var, &hour.to_string(), &fmt_value(value)])?;
            }
        }
        OutputFormat::Wide => {
            let names = view.variable_names();
            let mut header = vec!["stay_id".to_string(), "hour".to_string()];
            header.extend(names.iter().cloned());
            w.write_record(&header)?;
            for stay in view.stay_ids() {
                for t in 0..view.t_len {
                    let mut row = vec![stay.clone(), (view.start_hour + t as u32).to_string()];
                    for n in &names {
                        row.push(
                            view.variables[n]
                                .stays
                                .get(&stay)
                                .map(|s| fmt_value(s[t]))
                                .unwrap_or_default(),
                        );
                    }
                    w.write_record(&row)?;
                }
            }
        }
    }
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}

fn parse_num<T: std::str::FromStr>(s: &str, line: usize) -> Result<T> {
    s.trim()
        .parse()
        .map_err(|_| Error::FormatError(format!("line {line}: cannot parse `{s}`")))
}

/// Parse a view written by [`view_to_csv`]; the header selects the format.
pub fn view_from_csv(bytes: &[u8]) -> Result<CohortView> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(bytes);
    let header: Vec<String> = rdr
        .headers()?
        .iter()
        .map(|s| s.trim().to_string())
        .collect();
    let mut cells: BTreeMap<String, BTreeMap<String, Vec<(u32, f64)>>> = BTreeMap::new();
    if header.iter().map(String::as_str).eq(LONG_HEADER) {
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let hour = parse_num(&rec[2], i + 2)?;
            let value = parse_num(&rec[3], i + 2)?;
            cells
                .entry(rec[1].to_string())
                .or_default()
                .entry(rec[0].to_string())
                .or_default()
                .push((hour, value));
        }
    } else if header.len() > 2 && header[0] == "stay_id" && header[1] == "hour" {
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let hour: u32 = parse_num(&rec[1], i + 2)?;
            for (j, name) in header.iter().enumerate().skip(2) {
                if !rec[j].is_empty() {
                    let value = parse_num(&rec[j], i + 2)?;
                    cells
                        .entry(name.clone())
                        .or_default()
                        .entry(rec[0].to_string())
                        .or_default()
                        .push((hour, value));
                }
            }
        }
    } else {
        return Err(Error::FormatError(format!(
            "unrecognized view header {}",
            header.join(",")
        )));
    }
    let start = cells
        .values()
        .flat_map(|m| m.values())
        .flat_map(|s| s.iter().map(|c| c.0))
        .min();
    let Some(start) = start else {
        return Err(Error::EmptyCohort);
    };
    let t_len = cells
        .values()
        .flat_map(|m| m.values())
        .map(Vec::len)
        .max()
        .unwrap_or(0);
    let mut view = CohortView::new(start, t_len);
    for (var, stays) in cells {
        let mut series = BTreeMap::new();
        for (stay, mut obs) in stays {
            obs.sort_by_key(|c| c.0);
            if obs.iter().enumerate().any(|(t, c)| c.0 != start + t as u32) || obs.len() != t_len {
                return Err(Error::FormatError(format!(
                    "{var}/{stay}: hours are not a complete grid"
                )));
            }
            series.insert(stay, obs.into_iter().map(|c| c.1).collect());
        }
        view.insert_variable(&var, series, None)?;
    }
    Ok(view)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn manifest_path_for(csv: &Path) -> PathBuf {
    let stem = csv
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    csv.with_file_name(format!("{stem}.manifest.json"))
}

pub fn index_path(dir: &Path, table: &str) -> PathBuf {
    dir.join(format!("{table}.current"))
}

/// Persist a released view as `{table}__{hash}__{nonce}.csv` with a JSON
/// manifest sidecar, then point the table's `.current` index at it.
pub fn write_view(
    dir: &Path,
    view: &CohortView,
    manifest: &RunManifest,
    format: OutputFormat,
) -> Result<(ViewPaths, RunManifest)> {
    fs::create_dir_all(dir)?;
    let name = manifest.versioned_name();
    let csv_path = dir.join(format!("{name}.csv"));
    let bytes = view_to_csv(view, format)?;
    let mut m = manifest.clone();
    m.content_hash = Some(sha256_hex(&bytes));
    m.view_name = Some(name.clone());
    let manifest_path = manifest_path_for(&csv_path);
    write_atomic(&csv_path, &bytes)?;
    write_atomic(&manifest_path, serde_json::to_string_pretty(&m)?.as_bytes())?;
    let index = index_path(dir, &m.table);
    write_atomic(&index, format!("{name}\n").as_bytes())?;
    Ok((
        ViewPaths {
            csv: csv_path,
            manifest: manifest_path,
            index,
        },
        m,
    ))
}

/// Load a view and its manifest, refusing content whose hash does not match.
pub fn read_view(csv_path: &Path) -> Result<(CohortView, RunManifest)> {
    let bytes = fs::read(csv_path)?;
    let manifest: RunManifest = serde_json::from_slice(&fs::read(manifest_path_for(csv_path))?)?;
    let expected = manifest
        .content_hash
        .as_deref()
        .ok_or_else(|| Error::IntegrityError("manifest has no content hash".into()))?;
    let actual = sha256_hex(&bytes);
    if actual != expected {
        return Err(Error::IntegrityError(format!(
            "{}: content hash {actual} does not match manifest {expected}",
            csv_path.display()
        )));
    }
    Ok((view_from_csv(&bytes)?, manifest))
}

/// Path of the view the table's index currently points at.
pub fn current_view(dir: &Path, table: &str) -> Result<PathBuf> {
    let name = fs::read_to_string(index_path(dir, table))?;
    Ok(dir.join(format!("{}.csv", name.trim())))
}

/// Re-point the table's index at an earlier view.
pub fn rollback(dir: &Path, table: &str, view_name: &str) -> Result<PathBuf> {
    let target = dir.join(format!("{view_name}.csv"));
    if !target.exists() {
        return Err(Error::Io(std::io::Error::new(
            std::io::ErrorKind::NotFound,
            format!("no view {view_name} in {}", dir.display()),
        )));
    }
    write_atomic(&index_path(dir, table), format!("{view_name}\n").as_bytes())?;
    Ok(target)
}
