//! Report rendering. Every renderer is a pure function of its input so that
//! identical results give identical bytes.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::ValueEnum;
use serde::Serialize;

use crate::error::CliError;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, ValueEnum)]
pub enum Format {
    #[default]
    Json,
    Csv,
    Text,
}

impl Format {
    pub fn extension(self) -> &'static str {
        match self {
            Format::Json => "json",
            Format::Csv => "csv",
            Format::Text => "txt",
        }
    }
}

/// A result that can be rendered in each output format.
pub trait Report: Serialize {
    fn csv(&self) -> String;
    fn text(&self) -> String;

    fn render(&self, format: Format) -> Result<String, CliError> {
        Ok(match format {
            Format::Json => serde_json::to_string_pretty(self).map_err(elastocal::Error::from)? + "\n",
            Format::Csv => self.csv(),
            Format::Text => self.text(),
        })
    }
}

pub fn write_file(path: &Path, contents: &[u8]) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    std::fs::write(path, contents).map_err(|e| CliError::io(path, e))
}

/// Writes `report` as `<dir>/<stem>.<ext>` and returns the path.
pub fn emit<R: Report>(report: &R, format: Format, dir: &Path, stem: &str) -> Result<PathBuf, CliError> {
    let path = dir.join(format!("{stem}.{}", format.extension()));
    write_file(&path, report.render(format)?.as_bytes())?;
    Ok(path)
}

/// mm → 10⁻³ mm with three decimals.
pub fn micro_mm(v: f64) -> String {
    format!("{:.3}", v * 1e3)
}

/// rad/(N·m) → 10⁻⁹ rad/(N·m) with two decimals.
pub fn nano_compliance(v: f64) -> String {
    format!("{:.2}", v * 1e9)
}

pub fn csv_line(fields: &[String]) -> String {
    let mut s = fields.join(",");
    s.push('\n');
    s
}

pub fn joined(values: &[f64], f: impl Fn(f64) -> String) -> String {
    values.iter().map(|&v| f(v)).collect::<Vec<_>>().join(" ")
}

pub fn table_row(out: &mut String, label: &str, cells: &[String]) {
    let _ = write!(out, "{label:<22}");
    for c in cells {
        let _ = write!(out, "{c:>12}");
    }
    out.push('\n');
}
