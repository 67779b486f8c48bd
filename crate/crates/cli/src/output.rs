//! CSV and run-manifest output helpers.
//!
//! Every data file starts with one comment line carrying the tool version
//! and the seed, then an RFC-4180-style header and rows. Numeric fields use
//! Rust's shortest round-trip formatting, so rewriting a parsed file
//! reproduces it byte for byte.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::Serialize;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub fn header_comment(seed: u64) -> String {
    format!("# hybridsens v{VERSION} seed={seed}\n")
}

pub fn csv_field(s: &str) -> String {
    if s.contains(',') || s.contains('"') || s.contains('\n') {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_owned()
    }
}

pub fn csv_row(fields: &[String]) -> String {
    let mut row = String::new();
    for (i, f) in fields.iter().enumerate() {
        if i > 0 {
            row.push(',');
        }
        let _ = write!(row, "{}", csv_field(f));
    }
    row.push('\n');
    row
}

pub fn fmt_f64(v: f64) -> String {
    format!("{v}")
}

/// Parse RFC-4180-style CSV content, skipping `#` comment lines. Returns
/// `(header, rows)`.
pub fn parse_csv(text: &str) -> Result<(Vec<String>, Vec<Vec<String>>), String> {
    let mut records: Vec<Vec<String>> = Vec::new();
    let mut field = String::new();
    let mut record: Vec<String> = Vec::new();
    let mut in_quotes = false;
    let mut chars = text.chars().peekable();
    let mut line_start = true;
    let mut comment = false;
    while let Some(c) = chars.next() {
        if line_start && !in_quotes {
            comment = c == '#';
            line_start = false;
        }
        if comment {
            if c == '\n' {
                comment = false;
                line_start = true;
            }
            continue;
        }
        if in_quotes {
            match c {
                '"' => {
                    if chars.peek() == Some(&'"') {
                        chars.next();
                        field.push('"');
                    } else {
                        in_quotes = false;
                    }
                }
                _ => field.push(c),
            }
            continue;
        }
        match c {
            '"' => in_quotes = true,
            ',' => record.push(std::mem::take(&mut field)),
            '\r' => {}
            '\n' => {
                record.push(std::mem::take(&mut field));
                if !(record.len() == 1 && record[0].is_empty()) {
                    records.push(std::mem::take(&mut record));
                }
                record.clear();
                line_start = true;
            }
            _ => field.push(c),
        }
    }
    if in_quotes {
        return Err("unterminated quoted field".into());
    }
    if !field.is_empty() || !record.is_empty() {
        record.push(field);
        records.push(record);
    }
    if records.is_empty() {
        return Err("no header row".into());
    }
    let header = records.remove(0);
    Ok((header, records))
}

/// Run manifest written next to each data output.
#[derive(Debug, Serialize)]
pub struct Manifest {
    pub command: String,
    pub version: String,
    pub seed: u64,
    pub inputs: BTreeMap<String, String>,
    pub options: serde_json::Value,
    pub wall_time_s: f64,
    pub extra: serde_json::Value,
}

impl Manifest {
    pub fn new(command: &str, seed: u64) -> Self {
        Manifest {
            command: command.to_owned(),
            version: VERSION.to_owned(),
            seed,
            inputs: BTreeMap::new(),
            options: serde_json::Value::Null,
            wall_time_s: 0.0,
            extra: serde_json::Value::Null,
        }
    }

    pub fn input(mut self, key: &str, path: Option<&Path>) -> Self {
        if let Some(p) = path {
            self.inputs.insert(key.to_owned(), p.display().to_string());
        }
        self
    }

    pub fn path_for(out: &Path) -> PathBuf {
        let mut name = out.file_name().map(|n| n.to_os_string()).unwrap_or_default();
        name.push(".manifest.json");
        out.with_file_name(name)
    }

    pub fn write(&self, out: &Path) -> std::io::Result<()> {
        let path = Self::path_for(out);
        std::fs::write(
            path,
            serde_json::to_string_pretty(self).expect("manifest serializes"),
        )
    }
}
