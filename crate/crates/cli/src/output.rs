//! CSV and JSON emission.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;

use crate::config::RunConfig;
use crate::CliError;

/// Round-trip precision: 17 significant digits.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

/// One CSV cell.
pub enum Cell {
    F(f64),
    I(usize),
    S(String),
    B(bool),
}

impl From<f64> for Cell {
    fn from(x: f64) -> Self {
        Cell::F(x)
    }
}

impl From<usize> for Cell {
    fn from(x: usize) -> Self {
        Cell::I(x)
    }
}

impl From<bool> for Cell {
    fn from(x: bool) -> Self {
        Cell::B(x)
    }
}

impl From<&str> for Cell {
    fn from(x: &str) -> Self {
        Cell::S(x.to_string())
    }
}

impl Cell {
    fn render(&self) -> String {
        match self {
            Cell::F(x) => fmt_f64(*x),
            Cell::I(i) => i.to_string(),
            Cell::S(s) => s.clone(),
            Cell::B(b) => b.to_string(),
        }
    }
}

pub struct Table {
    pub columns: Vec<&'static str>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn new(columns: &[&'static str]) -> Self {
        Table { columns: columns.to_vec(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }
}

/// Comment block naming the scheme, parameters and seed; the last line is
/// the timestamp.
pub fn header(cfg: &RunConfig) -> String {
    let scheme = langevin_splitting::SchemeSpec::new(cfg.scheme, cfg.composition).label();
    let mut h = String::new();
    let _ = writeln!(h, "# experiment: {}", cfg.experiment);
    let _ = writeln!(h, "# scheme: {scheme}");
    let _ = writeln!(h, "# upsilon: {}", cfg.upsilon);
    let _ = writeln!(h, "# sigma: {}", cfg.sigma);
    let _ = writeln!(h, "# tau: {}", cfg.tau);
    let _ = writeln!(h, "# taus: {:?}", cfg.taus);
    let _ = writeln!(h, "# T: {}", cfg.horizon);
    let _ = writeln!(h, "# seed: {}", cfg.seed);
    let config = serde_json::to_string(cfg).unwrap_or_default();
    let _ = writeln!(h, "# config: {config}");
    let secs = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
    let _ = writeln!(h, "# generated: {secs}");
    h
}

pub fn write_csv(dir: &Path, name: &str, cfg: &RunConfig, table: &Table) -> Result<PathBuf, CliError> {
    let mut text = header(cfg);
    text.push_str(&table.columns.join(","));
    text.push('\n');
    for row in &table.rows {
        text.push_str(&row.iter().map(Cell::render).collect::<Vec<_>>().join(","));
        text.push('\n');
    }
    let path = dir.join(name);
    fs::write(&path, text).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    Ok(path)
}

#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub name: String,
    pub pass: bool,
    /// Positive when the check passes with room to spare.
    pub margin: f64,
}

impl Check {
    /// `value ≤ limit`.
    pub fn at_most(name: &str, value: f64, limit: f64) -> Self {
        Check { name: name.to_string(), pass: value <= limit, margin: limit - value }
    }

    /// `lo ≤ value ≤ hi`.
    pub fn within(name: &str, value: f64, lo: f64, hi: f64) -> Self {
        let margin = (value - lo).min(hi - value);
        Check { name: name.to_string(), pass: margin >= 0.0, margin }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Summary {
    pub experiment: String,
    pub config: RunConfig,
    pub metrics: serde_json::Map<String, serde_json::Value>,
    pub checks: Vec<Check>,
    pub files: Vec<String>,
}

impl Summary {
    pub fn new(cfg: &RunConfig) -> Self {
        Summary {
            experiment: cfg.experiment.clone(),
            config: cfg.clone(),
            metrics: serde_json::Map::new(),
            checks: Vec::new(),
            files: Vec::new(),
        }
    }

    pub fn metric(&mut self, key: &str, value: impl Serialize) {
        self.metrics.insert(key.to_string(), serde_json::to_value(value).unwrap_or(serde_json::Value::Null));
    }

    pub fn file(&mut self, path: PathBuf) {
        self.files.push(path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default());
    }
}
