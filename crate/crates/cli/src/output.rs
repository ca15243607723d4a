use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{Context, Result};
use serde::Serialize;
use serde_json::Value;

pub const SCHEMA_VERSION: &str = "1.0";

#[derive(Debug, Serialize)]
pub struct SystemInfo {
    pub name: String,
    pub source: String,
    pub n: usize,
    pub p: usize,
}

#[derive(Debug, Serialize)]
pub struct Settings {
    pub method: ltv_core::Method,
    pub step: Option<f64>,
    pub rtol: f64,
    pub atol: f64,
    pub horizon: f64,
}

#[derive(Debug, Serialize)]
pub struct Metadata {
    pub tool_version: &'static str,
    /// Seconds since the Unix epoch; the only field allowed to differ between identical runs.
    pub timestamp: u64,
}

#[derive(Debug, Serialize)]
pub struct Report {
    pub schema_version: &'static str,
    pub command: &'static str,
    pub seed: u64,
    pub system: SystemInfo,
    pub settings: Settings,
    pub result: Value,
    pub files: Vec<String>,
    pub metadata: Metadata,
}

impl Metadata {
    pub fn now() -> Self {
        let timestamp = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs());
        Metadata {
            tool_version: env!("CARGO_PKG_VERSION"),
            timestamp,
        }
    }
}

/// Collects CSV sidecars under the output directory.
pub struct Outputs {
    dir: PathBuf,
    files: Vec<String>,
}

impl Outputs {
    pub fn new(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir).with_context(|| format!("cannot create output directory {}", dir.display()))?;
        Ok(Outputs {
            dir: dir.to_path_buf(),
            files: Vec::new(),
        })
    }

    pub fn csv<I, R>(&mut self, name: &str, header: &[String], rows: I) -> Result<()>
    where
        I: IntoIterator<Item = R>,
        R: IntoIterator<Item = String>,
    {
        let path = self.dir.join(name);
        let mut w = csv::Writer::from_path(&path).with_context(|| format!("cannot write {}", path.display()))?;
        w.write_record(header)?;
        for row in rows {
            w.write_record(row)?;
        }
        w.flush()?;
        self.files.push(name.to_string());
        Ok(())
    }

    pub fn finish(self, mut report: Report) -> Result<PathBuf> {
        report.files = self.files;
        let path = self.dir.join("report.json");
        let mut text = serde_json::to_string_pretty(&report)?;
        text.push('\n');
        fs::write(&path, text).with_context(|| format!("cannot write {}", path.display()))?;
        Ok(path)
    }
}

pub fn header(names: &[&str]) -> Vec<String> {
    names.iter().map(|s| s.to_string()).collect()
}

pub fn num(v: f64) -> String {
    format!("{v}")
}

/// Column names `prefix_i_j` (1-based) for the entries of an r×c matrix, row-major.
pub fn matrix_columns(prefix: &str, rows: usize, cols: usize) -> Vec<String> {
    (0..rows)
        .flat_map(|i| (0..cols).map(move |j| format!("{prefix}_{}_{}", i + 1, j + 1)))
        .collect()
}

pub fn matrix_cells(m: &nalgebra::DMatrix<f64>) -> impl Iterator<Item = String> + '_ {
    (0..m.nrows()).flat_map(move |i| (0..m.ncols()).map(move |j| num(m[(i, j)])))
}
