//! Deterministic CSV writing and reading, plus an aligned text
//! rendering for terminal-friendly tables. Fields containing commas,
//! quotes, or newlines are quoted with doubled inner quotes; floats are
//! written in shortest round-trip form, so identical values always
//! produce identical bytes.

use crate::fail::{CliError, CliResult};
use std::path::Path;

/// Escapes one field for a CSV cell.
fn escape(field: &str) -> String {
    if field.contains(',') || field.contains('"') || field.contains('\n') {
        format!("\"{}\"", field.replace('"', "\"\""))
    } else {
        field.to_string()
    }
}

/// Renders header and rows as CSV text with a trailing newline.
pub fn to_csv(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut out = String::new();
    out.push_str(&header.iter().map(|h| escape(h)).collect::<Vec<_>>().join(","));
    out.push('\n');
    for row in rows {
        out.push_str(&row.iter().map(|f| escape(f)).collect::<Vec<_>>().join(","));
        out.push('\n');
    }
    out
}

/// Writes a CSV file, failing with a run error on I/O problems.
pub fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> CliResult<()> {
    std::fs::write(path, to_csv(header, rows))
        .map_err(|e| CliError::run(format!("cannot write {}: {e}", path.display())))
}

/// Parses one CSV line honoring quoted fields.
fn parse_line(line: &str) -> Vec<String> {
    let mut fields = Vec::new();
    let mut cur = String::new();
    let mut chars = line.chars().peekable();
    let mut quoted = false;
    while let Some(c) = chars.next() {
        if quoted {
            if c == '"' {
                if chars.peek() == Some(&'"') {
                    cur.push('"');
                    chars.next();
                } else {
                    quoted = false;
                }
            } else {
                cur.push(c);
            }
        } else if c == '"' && cur.is_empty() {
            quoted = true;
        } else if c == ',' {
            fields.push(std::mem::take(&mut cur));
        } else {
            cur.push(c);
        }
    }
    fields.push(cur);
    fields
}

/// Reads a CSV file back into header and rows.
pub fn read_csv(path: &Path) -> CliResult<(Vec<String>, Vec<Vec<String>>)> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::run(format!("cannot read {}: {e}", path.display())))?;
    let mut lines = text.lines();
    let header = match lines.next() {
        Some(h) => parse_line(h),
        None => return Err(CliError::run(format!("{} is empty", path.display()))),
    };
    let rows = lines.filter(|l| !l.is_empty()).map(parse_line).collect();
    Ok((header, rows))
}

/// Renders header and rows as an aligned monospace table. Cells that
/// parse as numbers are right-aligned, everything else left-aligned.
pub fn aligned_text(header: &[&str], rows: &[Vec<String>]) -> String {
    let cols = header.len();
    let mut widths: Vec<usize> = header.iter().map(|h| h.chars().count()).collect();
    for row in rows {
        for (i, cell) in row.iter().enumerate().take(cols) {
            widths[i] = widths[i].max(cell.chars().count());
        }
    }
    let numeric: Vec<bool> = (0..cols)
        .map(|i| {
            rows.iter()
                .filter_map(|r| r.get(i))
                .filter(|c| !c.is_empty())
                .all(|c| c.parse::<f64>().is_ok())
                && rows.iter().any(|r| r.get(i).is_some_and(|c| !c.is_empty()))
        })
        .collect();
    let mut out = String::new();
    let fmt_row = |cells: &[String], out: &mut String| {
        let mut parts = Vec::with_capacity(cols);
        for i in 0..cols {
            let cell = cells.get(i).map(String::as_str).unwrap_or("");
            if numeric[i] {
                parts.push(format!("{cell:>width$}", width = widths[i]));
            } else {
                parts.push(format!("{cell:<width$}", width = widths[i]));
            }
        }
        out.push_str(parts.join("  ").trim_end());
        out.push('\n');
    };
    let header_cells: Vec<String> = header.iter().map(|h| h.to_string()).collect();
    fmt_row(&header_cells, &mut out);
    let rule_width = widths.iter().sum::<usize>() + 2 * (cols.saturating_sub(1));
    out.push_str(&"-".repeat(rule_width));
    out.push('\n');
    for row in rows {
        fmt_row(row, &mut out);
    }
    out
}

/// Shortest round-trip rendering of a float; empty string for NaN so
/// absent metrics leave a blank cell.
pub fn num(v: f64) -> String {
    if v.is_nan() {
        String::new()
    } else {
        format!("{v}")
    }
}

/// Fixed-precision rendering for percentages and other display values.
pub fn fixed(v: f64, decimals: usize) -> String {
    if v.is_nan() {
        String::new()
    } else {
        format!("{v:.decimals$}")
    }
}
