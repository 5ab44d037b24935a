//! Plain `key = value` configuration files.
//!
//! One setting per line, `#` starts a comment, blank lines are ignored.
//! Consumers decide which keys exist; unknown keys are their error to raise.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

/// A `key = value` pair with the 1-based line it came from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigEntry {
    pub key: String,
    pub value: String,
    pub line: usize,
}

/// Parses a config file into its entries, in file order.
pub fn read_kv_file(path: impl AsRef<Path>) -> Result<Vec<ConfigEntry>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut entries = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = match raw.find('#') {
            Some(pos) => &raw[..pos],
            None => raw,
        };
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            Error::Config(format!(
                "{}:{}: expected `key = value`",
                path.display(),
                lineno + 1
            ))
        })?;
        let (key, value) = (key.trim(), value.trim());
        if key.is_empty() || value.is_empty() {
            return Err(Error::Config(format!(
                "{}:{}: expected `key = value`",
                path.display(),
                lineno + 1
            )));
        }
        entries.push(ConfigEntry {
            key: key.to_string(),
            value: value.to_string(),
            line: lineno + 1,
        });
    }
    Ok(entries)
}

/// Parses one typed value, wrapping failures in a uniform config error.
pub fn parse_value<T: std::str::FromStr>(entry: &ConfigEntry) -> Result<T> {
    entry.value.parse().map_err(|_| {
        Error::Config(format!(
            "line {}: bad value `{}` for key `{}`",
            entry.line, entry.value, entry.key
        ))
    })
}
