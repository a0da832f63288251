//! Matrix text formats.
//!
//! - phylip: `n`, then per row a 10-character name field, a space, and
//!   values with 6 decimals.
//! - tsv: a header row (empty corner cell, then labels) and one row per
//!   sample, 12 significant digits.
//! - lossless tsv: same layout with shortest round-trip float text; used for
//!   checkpoints.
//!
//! Non-finite entries are written as `inf`, `-inf` and `nan`.

use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::Path;
use std::str::FromStr;

use thiserror::Error;

use crate::affuncs::Orientation;
use crate::engine::AfMatrix;

#[derive(Error, Debug)]
pub enum MatrixError {
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MatrixFormat {
    #[default]
    Phylip,
    Tsv,
}

impl MatrixFormat {
    pub fn extension(self) -> &'static str {
        match self {
            MatrixFormat::Phylip => "phylip",
            MatrixFormat::Tsv => "tsv",
        }
    }
}

impl FromStr for MatrixFormat {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.trim().to_ascii_lowercase().as_str() {
            "phylip" => Ok(MatrixFormat::Phylip),
            "tsv" => Ok(MatrixFormat::Tsv),
            other => Err(format!("unknown matrix format {other:?}")),
        }
    }
}

const PHYLIP_NAME: usize = 10;

fn special(v: f64) -> Option<&'static str> {
    if v.is_nan() {
        Some("nan")
    } else if v == f64::INFINITY {
        Some("inf")
    } else if v == f64::NEG_INFINITY {
        Some("-inf")
    } else {
        None
    }
}

fn fixed6(v: f64) -> String {
    special(v).map_or_else(|| format!("{v:.6}"), str::to_string)
}

/// Shortest decimal text that parses back to `v` rounded to 12 significant digits.
fn sig12(v: f64) -> String {
    if let Some(s) = special(v) {
        return s.to_string();
    }
    let rounded: f64 = format!("{v:.11e}").parse().expect("float text");
    format!("{rounded}")
}

fn lossless(v: f64) -> String {
    special(v).map_or_else(|| format!("{v}"), str::to_string)
}

/// Phylip name fields: truncated to 10 characters, made unique with numeric suffixes.
pub fn phylip_names(labels: &[String]) -> Vec<String> {
    let mut out: Vec<String> = Vec::with_capacity(labels.len());
    for label in labels {
        let base: String = label.chars().take(PHYLIP_NAME).collect();
        let mut name = base.clone();
        let mut counter = 1;
        while out.contains(&name) {
            let suffix = counter.to_string();
            let keep = PHYLIP_NAME.saturating_sub(suffix.len());
            name = base.chars().take(keep).collect::<String>() + &suffix;
            counter += 1;
        }
        out.push(name);
    }
    out
}

pub fn format_phylip(m: &AfMatrix) -> String {
    let mut out = format!("{}\n", m.len());
    for (name, row) in phylip_names(&m.labels).iter().zip(&m.values) {
        let _ = write!(out, "{name:<width$}", width = PHYLIP_NAME);
        for &v in row {
            let _ = write!(out, " {}", fixed6(v));
        }
        out.push('\n');
    }
    out
}

fn format_tsv_with(m: &AfMatrix, fmt: fn(f64) -> String) -> String {
    let mut out = String::new();
    for label in &m.labels {
        out.push('\t');
        out.push_str(label);
    }
    out.push('\n');
    for (label, row) in m.labels.iter().zip(&m.values) {
        out.push_str(label);
        for &v in row {
            out.push('\t');
            out.push_str(&fmt(v));
        }
        out.push('\n');
    }
    out
}

pub fn format_tsv(m: &AfMatrix) -> String {
    format_tsv_with(m, sig12)
}

pub fn format_tsv_lossless(m: &AfMatrix) -> String {
    format_tsv_with(m, lossless)
}

pub fn format_matrix(m: &AfMatrix, format: MatrixFormat) -> String {
    match format {
        MatrixFormat::Phylip => format_phylip(m),
        MatrixFormat::Tsv => format_tsv(m),
    }
}

fn parse_value(text: &str, line: usize) -> Result<f64, MatrixError> {
    text.parse::<f64>().map_err(|_| MatrixError::Parse {
        line,
        reason: format!("bad value {text:?}"),
    })
}

/// Labels and values of a tsv matrix.
pub fn parse_tsv(text: &str) -> Result<(Vec<String>, Vec<Vec<f64>>), MatrixError> {
    let mut lines = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines.next().ok_or(MatrixError::Parse {
        line: 1,
        reason: "empty matrix".into(),
    })?;
    let labels: Vec<String> = header.split('\t').skip(1).map(str::to_string).collect();
    let mut values = Vec::with_capacity(labels.len());
    for (idx, line) in lines {
        let mut fields = line.split('\t');
        let label = fields.next().unwrap_or_default();
        if label != labels.get(values.len()).map_or("", String::as_str) {
            return Err(MatrixError::Parse {
                line: idx + 1,
                reason: format!("row label {label:?} does not match the header"),
            });
        }
        let row = fields
            .map(|f| parse_value(f.trim(), idx + 1))
            .collect::<Result<Vec<f64>, _>>()?;
        if row.len() != labels.len() {
            return Err(MatrixError::Parse {
                line: idx + 1,
                reason: format!("expected {} values, found {}", labels.len(), row.len()),
            });
        }
        values.push(row);
    }
    if values.len() != labels.len() {
        return Err(MatrixError::Parse {
            line: text.lines().count(),
            reason: format!("expected {} rows, found {}", labels.len(), values.len()),
        });
    }
    Ok((labels, values))
}

/// Labels and values of a phylip matrix.
pub fn parse_phylip(text: &str) -> Result<(Vec<String>, Vec<Vec<f64>>), MatrixError> {
    let mut lines = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty());
    let (_, first) = lines.next().ok_or(MatrixError::Parse {
        line: 1,
        reason: "empty matrix".into(),
    })?;
    let n: usize = first.trim().parse().map_err(|_| MatrixError::Parse {
        line: 1,
        reason: format!("bad taxon count {first:?}"),
    })?;
    let mut labels = Vec::with_capacity(n);
    let mut values = Vec::with_capacity(n);
    for (idx, line) in lines {
        let split = line
            .char_indices()
            .nth(PHYLIP_NAME)
            .map_or(line.len(), |(i, _)| i);
        let (name, rest) = line.split_at(split);
        let row = rest
            .split_whitespace()
            .map(|f| parse_value(f, idx + 1))
            .collect::<Result<Vec<f64>, _>>()?;
        if row.len() != n {
            return Err(MatrixError::Parse {
                line: idx + 1,
                reason: format!("expected {n} values, found {}", row.len()),
            });
        }
        labels.push(name.trim().to_string());
        values.push(row);
    }
    if values.len() != n {
        return Err(MatrixError::Parse {
            line: text.lines().count(),
            reason: format!("expected {n} rows, found {}", values.len()),
        });
    }
    Ok((labels, values))
}

/// Parse either format; a first line holding only an integer means phylip.
pub fn parse_matrix(
    text: &str,
    orientation: Orientation,
    function_id: &str,
) -> Result<AfMatrix, MatrixError> {
    let first = text.lines().next().unwrap_or("").trim();
    let (labels, values) = if first.parse::<usize>().is_ok() {
        parse_phylip(text)?
    } else {
        parse_tsv(text)?
    };
    Ok(AfMatrix::new(labels, values, orientation, function_id))
}

/// Write `contents` to `path` through a temporary file and a rename.
pub fn write_atomic(path: &Path, contents: &str) -> io::Result<()> {
    let tmp = path.with_extension(format!(
        "{}.tmp",
        path.extension().and_then(|e| e.to_str()).unwrap_or("")
    ));
    fs::write(&tmp, contents)?;
    fs::rename(&tmp, path)
}

pub fn emit_matrix(m: &AfMatrix, format: MatrixFormat, path: &Path) -> io::Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir)?;
        }
    }
    write_atomic(path, &format_matrix(m, format))
}

pub fn read_matrix(path: &Path, orientation: Orientation) -> Result<AfMatrix, MatrixError> {
    let text = fs::read_to_string(path)?;
    let id = path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or_default()
        .to_string();
    parse_matrix(&text, orientation, &id)
}
