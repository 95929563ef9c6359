//! Locale-free CSV with 17-significant-digit floats.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{PmdError, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Cell {
    Float(f64),
    Int(i64),
    Bool(bool),
}

impl Cell {
    pub fn render(&self, out: &mut String) {
        match *self {
            Cell::Float(x) => out.push_str(&crate::mdp::sci(x)),
            Cell::Int(i) => {
                let _ = write!(out, "{i}");
            }
            Cell::Bool(b) => out.push_str(if b { "true" } else { "false" }),
        }
    }

    pub fn as_f64(&self) -> f64 {
        match *self {
            Cell::Float(x) => x,
            Cell::Int(i) => i as f64,
            Cell::Bool(b) => f64::from(u8::from(b)),
        }
    }

    pub fn is_nan(&self) -> bool {
        matches!(self, Cell::Float(x) if x.is_nan())
    }
}

impl From<f64> for Cell {
    fn from(x: f64) -> Self {
        Cell::Float(x)
    }
}

impl From<usize> for Cell {
    fn from(i: usize) -> Self {
        Cell::Int(i as i64)
    }
}

impl From<bool> for Cell {
    fn from(b: bool) -> Self {
        Cell::Bool(b)
    }
}

/// Header plus uniform rows.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CsvTable {
    pub header: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

impl CsvTable {
    pub fn new(header: &[&str]) -> Self {
        Self {
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        assert_eq!(row.len(), self.header.len(), "row width must match header");
        self.rows.push(row);
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.header.iter().position(|h| h == name)
    }

    pub fn nan_count(&self) -> usize {
        self.rows.iter().flatten().filter(|c| c.is_nan()).count()
    }

    pub fn render(&self) -> String {
        let mut out = self.header.join(",");
        out.push('\n');
        for row in &self.rows {
            for (i, c) in row.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                c.render(&mut out);
            }
            out.push('\n');
        }
        out
    }
}

/// Writes the table, creating parent directories as needed.
pub fn emit_csv(table: &CsvTable, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, table.render())?;
    Ok(())
}

/// Parses a file produced by [`emit_csv`]; every cell comes back as a float
/// (`true`/`false` as 1/0, `nan`/`inf` as such).
pub fn parse_csv(text: &str) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let mut lines = text.lines();
    let header: Vec<String> = lines
        .next()
        .ok_or_else(|| PmdError::Parse("empty csv".into()))?
        .split(',')
        .map(str::to_string)
        .collect();
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        let row = line
            .split(',')
            .map(|c| match c {
                "true" => Ok(1.0),
                "false" => Ok(0.0),
                other => other
                    .parse::<f64>()
                    .map_err(|_| PmdError::Parse(format!("row {}: bad cell `{other}`", i + 1))),
            })
            .collect::<Result<Vec<f64>>>()?;
        if row.len() != header.len() {
            return Err(PmdError::Parse(format!("row {} has {} cells", i + 1, row.len())));
        }
        rows.push(row);
    }
    Ok((header, rows))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_table_is_header_only() {
        assert_eq!(CsvTable::new(&["iter", "x"]).render(), "iter,x\n");
    }

    #[test]
    fn nan_is_literal_and_counted() {
        let mut t = CsvTable::new(&["a", "b"]);
        t.push(vec![Cell::Float(f64::NAN), Cell::Int(3)]);
        assert_eq!(t.render(), "a,b\nnan,3\n");
        assert_eq!(t.nan_count(), 1);
    }

    #[test]
    fn floats_round_trip_bit_exact() {
        let vals = [0.1, 1.0 / 3.0, -2.5e-300, 6.02214076e23, f64::MIN_POSITIVE, 0.0];
        let mut t = CsvTable::new(&["v", "flag"]);
        for &v in &vals {
            t.push(vec![v.into(), (v > 0.0).into()]);
        }
        let text = t.render();
        assert!(text.lines().nth(2).unwrap().starts_with("3.3333333333333331e-1"));
        let (_, rows) = parse_csv(&text).unwrap();
        for (row, &v) in rows.iter().zip(&vals) {
            assert_eq!(row[0].to_bits(), v.to_bits());
        }
    }

    #[test]
    fn writes_to_disk() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("nested/out.csv");
        let mut t = CsvTable::new(&["x"]);
        t.push(vec![1.5.into()]);
        emit_csv(&t, &path).unwrap();
        assert_eq!(fs::read_to_string(path).unwrap(), "x\n1.5000000000000000e0\n");
    }
}
