//! Minimal CSV tables: comma separated, LF line endings, floats with nine
//! significant digits.

use std::fmt::Write as _;
use std::io;
use std::path::{Path, PathBuf};

#[derive(Clone, Debug, PartialEq)]
pub enum Cell {
    Int(i64),
    Float(f64),
    Text(String),
    Empty,
}

impl Cell {
    pub fn render(&self) -> String {
        match self {
            Cell::Int(v) => v.to_string(),
            Cell::Float(v) => format_float(*v),
            Cell::Text(s) => quote(s),
            Cell::Empty => String::new(),
        }
    }

    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Cell::Int(v) => Some(*v as f64),
            Cell::Float(v) => Some(*v),
            _ => None,
        }
    }
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::Float(v)
    }
}
impl From<u64> for Cell {
    fn from(v: u64) -> Self {
        Cell::Int(v as i64)
    }
}
impl From<usize> for Cell {
    fn from(v: usize) -> Self {
        Cell::Int(v as i64)
    }
}
impl From<bool> for Cell {
    fn from(v: bool) -> Self {
        Cell::Int(v as i64)
    }
}
impl From<&str> for Cell {
    fn from(v: &str) -> Self {
        Cell::Text(v.to_string())
    }
}
impl From<String> for Cell {
    fn from(v: String) -> Self {
        Cell::Text(v)
    }
}
impl<T: Into<Cell>> From<Option<T>> for Cell {
    fn from(v: Option<T>) -> Self {
        v.map_or(Cell::Empty, Into::into)
    }
}

/// `d.dddddddde±x`; non-finite values as `nan`, `inf`, `-inf`.
pub fn format_float(v: f64) -> String {
    if v.is_nan() {
        "nan".into()
    } else if v.is_infinite() {
        if v > 0.0 { "inf" } else { "-inf" }.into()
    } else {
        format!("{v:.8e}")
    }
}

fn quote(s: &str) -> String {
    if s.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// One CSV file: a stem and a header naming every column with its unit.
#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    pub name: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn new(name: impl Into<String>, columns: &[&str]) -> Self {
        Self {
            name: name.into(),
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        assert_eq!(row.len(), self.columns.len(), "row width must match the header of {}", self.name);
        self.rows.push(row);
    }

    pub fn column(&self, header: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == header)
    }

    /// Numeric values of a column, `None` for empty or text cells.
    pub fn values(&self, header: &str) -> Vec<Option<f64>> {
        let i = self.column(header).unwrap_or_else(|| panic!("no column `{header}` in {}", self.name));
        self.rows.iter().map(|r| r[i].as_f64()).collect()
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        let header: Vec<String> = self.columns.iter().map(|c| quote(c)).collect();
        out.push_str(&header.join(","));
        out.push('\n');
        for row in &self.rows {
            let cells: Vec<String> = row.iter().map(Cell::render).collect();
            let _ = writeln!(out, "{}", cells.join(","));
        }
        out
    }

    pub fn file_name(&self) -> String {
        format!("{}.csv", self.name)
    }

    pub fn write_to(&self, dir: &Path) -> io::Result<PathBuf> {
        std::fs::create_dir_all(dir)?;
        let path = dir.join(self.file_name());
        std::fs::write(&path, self.render())?;
        Ok(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nine_significant_digits() {
        assert_eq!(format_float(275.77), "2.75770000e2");
        assert_eq!(format_float(-1.0 / 3.0), "-3.33333333e-1");
        assert_eq!(format_float(0.0), "0.00000000e0");
        assert_eq!(format_float(f64::NAN), "nan");
    }

    #[test]
    fn rendering() {
        let mut t = Table::new("x", &["k [-]", "label [-]", "pe [-]"]);
        t.push(vec![3u64.into(), "a,b".into(), 0.5.into()]);
        t.push(vec![4u64.into(), Cell::Empty, Option::<f64>::None.into()]);
        assert_eq!(t.render(), "k [-],label [-],pe [-]\n3,\"a,b\",5.00000000e-1\n4,,\n");
        assert_eq!(t.values("pe [-]"), vec![Some(0.5), None]);
    }
}
