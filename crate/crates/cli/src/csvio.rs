//! Deterministic CSV writers: UTF-8, header row, '.' decimal separator,
//! floats at fixed 9 significant digits.

use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::Path;

/// One CSV cell.
#[derive(Debug, Clone)]
pub enum Cell {
    Int(i64),
    Float(f64),
    Text(String),
}

impl From<usize> for Cell {
    fn from(v: usize) -> Self {
        Cell::Int(v as i64)
    }
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::Float(v)
    }
}

impl From<&str> for Cell {
    fn from(v: &str) -> Self {
        Cell::Text(v.to_string())
    }
}

impl From<bool> for Cell {
    fn from(v: bool) -> Self {
        Cell::Text(if v { "true".into() } else { "false".into() })
    }
}

/// 9 significant digits in scientific notation, bit-stable across runs.
pub fn fmt_float(v: f64) -> String {
    format!("{v:.8e}")
}

fn fmt_cell(c: &Cell) -> String {
    match c {
        Cell::Int(v) => v.to_string(),
        Cell::Float(v) => fmt_float(*v),
        Cell::Text(v) => v.clone(),
    }
}

/// Writes a header plus rows; creates parent directories as needed.
pub fn write_csv(
    path: &Path,
    header: &[&str],
    rows: impl IntoIterator<Item = Vec<Cell>>,
) -> io::Result<()> {
    let mut out = String::new();
    out.push_str(&header.join(","));
    out.push('\n');
    for row in rows {
        let mut first = true;
        for cell in &row {
            if !first {
                out.push(',');
            }
            let _ = write!(out, "{}", fmt_cell(cell));
            first = false;
        }
        out.push('\n');
    }
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    fs::write(path, out)
}
