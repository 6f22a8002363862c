//! CSV and JSON artifacts.
//!
//! Floats are written in the shortest decimal form that parses back to the
//! same value, so identical runs produce byte-identical CSV files.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::experiments::{BoundTable, Surface};
use crate::{CliError, Result};

/// Version of the JSON summary layout.
pub const SCHEMA_VERSION: u32 = 1;

fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Io {
        path: path.to_path_buf(),
        msg: e.to_string(),
    }
}

pub fn fmt_f64(v: f64) -> String {
    format!("{v}")
}

/// Numeric rows of a headerless CSV file, with their line numbers. Blank
/// lines and lines starting with `#` are skipped; a first line that does not
/// parse is taken as a header.
pub fn read_rows(path: &Path) -> Result<Vec<(u64, Vec<f64>)>> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .comment(Some(b'#'))
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| io_err(path, e))?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.iter().all(|f| f.is_empty()) {
            continue;
        }
        let parsed: std::result::Result<Vec<f64>, _> = rec.iter().map(|f| f.parse::<f64>()).collect();
        match parsed {
            Ok(v) => rows.push((line, v)),
            Err(_) if rows.is_empty() && line <= 1 => continue,
            Err(e) => return Err(CliError::Config(format!("{}: line {line}: {e}", path.display()))),
        }
    }
    Ok(rows)
}

pub fn read_points(path: &Path) -> Result<Vec<Vec<f64>>> {
    let rows = read_rows(path)?;
    if rows.is_empty() {
        return Err(CliError::Config(format!("{}: no query points", path.display())));
    }
    Ok(rows.into_iter().map(|(_, r)| r).collect())
}

fn writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    csv::Writer::from_path(path).map_err(|e| io_err(path, e))
}

fn coordinate_header(dim: usize) -> Vec<String> {
    (1..=dim).map(|k| format!("x{k}")).collect()
}

/// Columns `x1,…,xn,lower,upper`.
pub fn write_surface(path: &Path, s: &Surface) -> Result<()> {
    let dim = s.queries.first().map_or(0, Vec::len);
    let mut w = writer(path)?;
    let mut header = coordinate_header(dim);
    header.extend(["lower".to_string(), "upper".to_string()]);
    w.write_record(&header).map_err(|e| io_err(path, e))?;
    for (x, b) in s.queries.iter().zip(&s.bounds) {
        let mut rec: Vec<String> = x.iter().map(|v| fmt_f64(*v)).collect();
        rec.push(fmt_f64(b.lower));
        rec.push(fmt_f64(b.upper));
        w.write_record(&rec).map_err(|e| io_err(path, e))?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

pub fn write_table(path: &Path, t: &BoundTable) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record([
        "sampling",
        "gamma_factor",
        "delta_factor",
        "gamma",
        "delta_bar",
        "method",
        "average_width",
        "average_upper_distance",
        "runtime_seconds",
    ])
    .map_err(|e| io_err(path, e))?;
    for r in &t.rows {
        w.write_record([
            r.sampling.to_string(),
            fmt_f64(r.gamma_factor),
            fmt_f64(r.delta_factor),
            fmt_f64(r.gamma),
            fmt_f64(r.delta_bar),
            r.method.to_string(),
            fmt_f64(r.average_width),
            fmt_f64(r.average_upper_distance),
            fmt_f64(r.runtime_seconds),
        ])
        .map_err(|e| io_err(path, e))?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

/// Columns `x1,…,xn,feasible` with `feasible` 0 or 1.
pub fn write_mask(path: &Path, mask: &[(Vec<f64>, bool)]) -> Result<()> {
    let dim = mask.first().map_or(0, |m| m.0.len());
    let mut w = writer(path)?;
    let mut header = coordinate_header(dim);
    header.push("feasible".into());
    w.write_record(&header).map_err(|e| io_err(path, e))?;
    for (x, f) in mask {
        let mut rec: Vec<String> = x.iter().map(|v| fmt_f64(*v)).collect();
        rec.push(if *f { "1" } else { "0" }.into());
        w.write_record(&rec).map_err(|e| io_err(path, e))?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

/// Wraps a payload as `{"schema_version", "command", ...payload}`.
pub fn summary<T: Serialize>(command: &str, payload: &T) -> serde_json::Value {
    let mut v = serde_json::json!({
        "schema_version": SCHEMA_VERSION,
        "command": command,
    });
    if let (Some(obj), Ok(serde_json::Value::Object(extra))) = (v.as_object_mut(), serde_json::to_value(payload)) {
        obj.extend(extra);
    }
    v
}

pub fn write_json(path: &Path, value: &serde_json::Value) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("json value serializes");
    fs::write(path, text + "\n").map_err(|e| io_err(path, e))
}

pub fn ensure_dir(dir: &Path) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    Ok(dir.to_path_buf())
}
