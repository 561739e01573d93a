//! Labeled example files.
//!
//! One example per line: `label<TAB>group<TAB>payload` or
//! `label<TAB>payload`. The payload is either whitespace-separated tokens or
//! `vec:` followed by comma-separated feature values. Blank lines and lines
//! starting with `#` are ignored.

use std::fmt::Write as _;
use std::path::Path;

use super::ModelInput;
use crate::error::{Error, Result};

pub const DEFAULT_GROUP: &str = "all";

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledExample {
    pub input: ModelInput,
    pub label: bool,
    pub group: String,
}

pub fn parse_labeled(text: &str) -> Result<Vec<LabeledExample>> {
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        let (label, group, payload) = match cols.as_slice() {
            [l, p] => (*l, DEFAULT_GROUP, *p),
            [l, g, p] => (*l, *g, *p),
            _ => {
                return Err(Error::invalid(format!(
                    "line {}: expected 2 or 3 tab-separated columns",
                    lineno + 1
                )))
            }
        };
        let label = match label.trim() {
            "1" | "true" => true,
            "0" | "false" => false,
            other => {
                return Err(Error::invalid(format!(
                    "line {}: bad label {other:?}",
                    lineno + 1
                )))
            }
        };
        let input = parse_payload(payload)
            .map_err(|e| Error::invalid(format!("line {}: {e}", lineno + 1)))?;
        out.push(LabeledExample {
            input,
            label,
            group: group.trim().to_string(),
        });
    }
    Ok(out)
}

fn parse_payload(payload: &str) -> std::result::Result<ModelInput, String> {
    match payload.trim().strip_prefix("vec:") {
        Some(rest) => rest
            .split(',')
            .map(|v| {
                v.trim()
                    .parse::<f64>()
                    .map_err(|e| format!("bad feature {v:?}: {e}"))
                    .and_then(|x| {
                        if x.is_finite() {
                            Ok(x)
                        } else {
                            Err("non-finite feature".to_string())
                        }
                    })
            })
            .collect::<std::result::Result<Vec<_>, _>>()
            .map(ModelInput::Features),
        None => Ok(ModelInput::Tokens(super::corpus::tokenize(payload))),
    }
}

pub fn read_labeled(path: impl AsRef<Path>) -> Result<Vec<LabeledExample>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            Error::not_found(format!("dataset {}", path.display()))
        } else {
            Error::Io(e)
        }
    })?;
    parse_labeled(&text)
}

pub fn format_labeled(examples: &[LabeledExample]) -> String {
    let mut s = String::new();
    for ex in examples {
        let label = if ex.label { 1 } else { 0 };
        let payload = match &ex.input {
            ModelInput::Tokens(t) => t.join(" "),
            ModelInput::Features(f) => {
                let vals: Vec<String> = f.iter().map(|v| format!("{v:?}")).collect();
                format!("vec:{}", vals.join(","))
            }
        };
        let _ = writeln!(s, "{label}\t{}\t{payload}", ex.group);
    }
    s
}
