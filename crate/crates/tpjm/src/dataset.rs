//! Two-file CSV dataset format.
//!
//! `longitudinal.csv`: `id,time,value`, one row per visit; `value = 0` marks a
//! zero measurement. `survival.csv`: `id,surv_time,event` followed by any
//! number of numeric covariate columns.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use tpjm_core::model::{SubjectData, VisitRecord};

use crate::error::{CliError, Result};

pub const LONGITUDINAL: &str = "longitudinal.csv";
pub const SURVIVAL: &str = "survival.csv";

fn reader(path: &Path) -> Result<csv::Reader<std::fs::File>> {
    csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path).map_err(|e| csv_error(path, e))
}

fn csv_error(path: &Path, e: csv::Error) -> CliError {
    let line = e.position().map_or(0, |p| p.line());
    match e.into_kind() {
        csv::ErrorKind::Io(io) => CliError::io(path, io),
        other => CliError::Parse { path: path.to_path_buf(), line, reason: format!("{other:?}") },
    }
}

fn field<'r>(rec: &'r csv::StringRecord, i: usize, path: &Path, line: u64) -> Result<&'r str> {
    rec.get(i).ok_or_else(|| CliError::Parse { path: path.to_path_buf(), line, reason: format!("missing column {}", i + 1) })
}

fn number(s: &str, what: &str, path: &Path, line: u64) -> Result<f64> {
    let v: f64 = s.parse().map_err(|_| CliError::Parse { path: path.to_path_buf(), line, reason: format!("{what} `{s}` is not a number") })?;
    if !v.is_finite() {
        return Err(CliError::Parse { path: path.to_path_buf(), line, reason: format!("{what} `{s}` is not finite") });
    }
    Ok(v)
}

fn id(s: &str, path: &Path, line: u64) -> Result<u64> {
    s.parse().map_err(|_| CliError::Parse { path: path.to_path_buf(), line, reason: format!("id `{s}` is not a non-negative integer") })
}

fn expect_header(r: &mut csv::Reader<std::fs::File>, path: &Path, want: &[&str]) -> Result<Vec<String>> {
    let h: Vec<String> = r.headers().map_err(|e| csv_error(path, e))?.iter().map(str::to_string).collect();
    if h.len() < want.len() || h.iter().zip(want).any(|(a, b)| a != b) {
        return Err(CliError::Parse { path: path.to_path_buf(), line: 1, reason: format!("header must start with {}", want.join(",")) });
    }
    Ok(h)
}

/// Joins the two files into validated subjects ordered by id.
pub fn read_dataset(longitudinal: &Path, survival: &Path) -> Result<Vec<SubjectData>> {
    let mut visits: BTreeMap<u64, Vec<VisitRecord>> = BTreeMap::new();
    let mut r = reader(longitudinal)?;
    expect_header(&mut r, longitudinal, &["id", "time", "value"])?;
    for rec in r.records() {
        let rec = rec.map_err(|e| csv_error(longitudinal, e))?;
        let line = rec.position().map_or(0, |p| p.line());
        let i = id(field(&rec, 0, longitudinal, line)?, longitudinal, line)?;
        let time = number(field(&rec, 1, longitudinal, line)?, "time", longitudinal, line)?;
        let value = number(field(&rec, 2, longitudinal, line)?, "value", longitudinal, line)?;
        if value < 0.0 {
            return Err(CliError::Data(format!("{}, line {line}: subject {i} has negative value {value}", longitudinal.display())));
        }
        let v = VisitRecord::new(time, value).map_err(|e| CliError::Data(format!("{}, line {line}: {e}", longitudinal.display())))?;
        visits.entry(i).or_default().push(v);
    }

    let mut r = reader(survival)?;
    let header = expect_header(&mut r, survival, &["id", "surv_time", "event"])?;
    let covariates = &header[3..];
    let mut out = Vec::new();
    let mut seen = BTreeSet::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| csv_error(survival, e))?;
        let line = rec.position().map_or(0, |p| p.line());
        let i = id(field(&rec, 0, survival, line)?, survival, line)?;
        if !seen.insert(i) {
            return Err(CliError::Data(format!("{}, line {line}: subject {i} appears twice", survival.display())));
        }
        let t = number(field(&rec, 1, survival, line)?, "surv_time", survival, line)?;
        let event = match field(&rec, 2, survival, line)? {
            "1" | "true" => true,
            "0" | "false" => false,
            other => return Err(CliError::Parse { path: survival.to_path_buf(), line, reason: format!("event `{other}` must be 0 or 1") }),
        };
        let mut cov = BTreeMap::new();
        for (k, name) in covariates.iter().enumerate() {
            cov.insert(name.clone(), number(field(&rec, 3 + k, survival, line)?, name, survival, line)?);
        }
        let mut v = visits.remove(&i).ok_or_else(|| CliError::Data(format!("subject {i} has no rows in {}", longitudinal.display())))?;
        v.sort_by(|a, b| a.time.total_cmp(&b.time));
        if let Some(w) = v.windows(2).find(|w| w[0].time == w[1].time) {
            return Err(CliError::Data(format!("subject {i} has two visits at time {}", w[0].time)));
        }
        out.push(SubjectData::new(i, v, t, event, cov)?);
    }
    if let Some(i) = visits.keys().next() {
        return Err(CliError::Data(format!("subject {i} has no row in {}", survival.display())));
    }
    out.sort_by_key(|s| s.id);
    Ok(out)
}

/// Reads `dir/longitudinal.csv` and `dir/survival.csv`.
pub fn read_dir(dir: &Path) -> Result<Vec<SubjectData>> {
    read_dataset(&dir.join(LONGITUDINAL), &dir.join(SURVIVAL))
}

fn writer(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    csv::Writer::from_path(path).map_err(|e| csv_error(path, e))
}

/// Writes the two files into `dir`, creating it if needed. Covariate columns
/// follow the first subject's covariate names.
pub fn write_dir(data: &[SubjectData], dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let lp = dir.join(LONGITUDINAL);
    let mut w = writer(&lp)?;
    let map = |e: csv::Error| csv_error(&lp, e);
    w.write_record(["id", "time", "value"]).map_err(map)?;
    for s in data {
        for v in &s.visits {
            w.write_record([s.id.to_string(), v.time.to_string(), v.value.to_string()]).map_err(map)?;
        }
    }
    w.flush().map_err(|e| CliError::io(&lp, e))?;

    let sp = dir.join(SURVIVAL);
    let mut w = writer(&sp)?;
    let map = |e: csv::Error| csv_error(&sp, e);
    let names: Vec<String> = data.first().map(|s| s.covariates.keys().cloned().collect()).unwrap_or_default();
    let mut header = vec!["id".to_string(), "surv_time".to_string(), "event".to_string()];
    header.extend(names.iter().cloned());
    w.write_record(&header).map_err(map)?;
    for s in data {
        let mut row = vec![s.id.to_string(), s.surv_time.to_string(), (s.event as u8).to_string()];
        for n in &names {
            let v = s.covariates.get(n).ok_or_else(|| CliError::Data(format!("subject {} lacks covariate {n}", s.id)))?;
            row.push(v.to_string());
        }
        w.write_record(&row).map_err(map)?;
    }
    w.flush().map_err(|e| CliError::io(&sp, e))?;
    Ok(())
}
