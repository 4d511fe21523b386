//! File outputs: atomic writes, CSV tables and landmark plots.

mod plot;

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

pub use plot::{export_landmark_plot, render_landmark_plot};

/// Replaces `path` with `bytes` in one rename, so readers never observe a
/// partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(path, e))?;
    tmp.as_file().sync_all().map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

/// Full-precision float text: 17 significant digits, which round-trips
/// every finite `f64` exactly.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn parse_f64(s: &str) -> Result<f64> {
    s.trim()
        .parse()
        .map_err(|_| Error::Argument(format!("not a number: {s:?}")))
}

/// `"0.974±0.020"`.
pub fn fmt_mean_std(mean: f64, std: f64) -> String {
    format!("{mean:.3}±{std:.3}")
}

/// Anything that renders as a header plus string rows.
pub trait CsvTable {
    fn header(&self) -> Vec<String>;
    fn rows(&self) -> Vec<Vec<String>>;
}

pub fn csv_bytes(table: &impl CsvTable) -> Result<Vec<u8>> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    let csv_err = |e: csv::Error| Error::Argument(format!("csv encoding: {e}"));
    w.write_record(table.header()).map_err(csv_err)?;
    for row in table.rows() {
        w.write_record(row).map_err(csv_err)?;
    }
    w.into_inner()
        .map_err(|e| Error::Argument(format!("csv encoding: {e}")))
}

/// Writes a mask, ranking, report or any other [`CsvTable`] atomically.
pub fn export_csv(table: &impl CsvTable, path: &Path) -> Result<()> {
    write_atomic(path, &csv_bytes(table)?)
}

/// Header and rows of a CSV file, all as strings.
pub fn read_csv(path: &Path) -> Result<(Vec<String>, Vec<Vec<String>>)> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::format(path, e.to_string()))?;
    let header = r
        .headers()
        .map_err(|e| Error::format(path, e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect();
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| Error::format(path, e.to_string()))?;
        rows.push(rec.iter().map(str::to_string).collect());
    }
    Ok((header, rows))
}
