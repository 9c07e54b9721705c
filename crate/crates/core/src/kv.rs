//! Flat `key=value` configuration text with typed, line-addressed parsing.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::str::FromStr;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: expected key=value, found {text:?}")]
    Syntax { line: usize, text: String },
    #[error("line {line}: key {key} appears twice")]
    Duplicate { line: usize, key: String },
    #[error("line {line}: unknown key {key}")]
    Unknown { line: usize, key: String },
    #[error("missing required field {key}")]
    Missing { key: String },
    #[error("line {line}: field {key}: cannot parse {value:?} as {expected}")]
    Parse { line: usize, key: String, value: String, expected: &'static str },
    #[error("field {key}: {reason}")]
    Invalid { key: String, reason: String },
}

/// Parsed entries with the line each came from. Keys are consumed by the
/// typed getters so leftovers can be reported as unknown.
#[derive(Debug, Default)]
pub struct KvDoc {
    entries: BTreeMap<String, (usize, String)>,
}

impl KvDoc {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut entries = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let t = raw.trim();
            if t.is_empty() || t.starts_with('#') {
                continue;
            }
            let (k, v) = t.split_once('=').ok_or_else(|| ConfigError::Syntax { line, text: raw.to_string() })?;
            let (k, v) = (k.trim(), v.trim());
            if k.is_empty() {
                return Err(ConfigError::Syntax { line, text: raw.to_string() });
            }
            if entries.insert(k.to_string(), (line, v.to_string())).is_some() {
                return Err(ConfigError::Duplicate { line, key: k.to_string() });
            }
        }
        Ok(Self { entries })
    }

    pub fn take_str(&mut self, key: &str) -> Option<(usize, String)> {
        self.entries.remove(key)
    }

    pub fn take<T: FromStr>(&mut self, key: &str, expected: &'static str) -> Result<Option<T>, ConfigError> {
        match self.entries.remove(key) {
            None => Ok(None),
            Some((line, value)) => value
                .parse()
                .map(Some)
                .map_err(|_| ConfigError::Parse { line, key: key.to_string(), value, expected }),
        }
    }

    pub fn take_or<T: FromStr>(&mut self, key: &str, expected: &'static str, default: T) -> Result<T, ConfigError> {
        Ok(self.take(key, expected)?.unwrap_or(default))
    }

    pub fn require<T: FromStr>(&mut self, key: &str, expected: &'static str) -> Result<T, ConfigError> {
        self.take(key, expected)?.ok_or_else(|| ConfigError::Missing { key: key.to_string() })
    }

    /// Fails on the first key no getter consumed.
    pub fn finish(self) -> Result<(), ConfigError> {
        match self.entries.into_iter().min_by_key(|(_, (line, _))| *line) {
            Some((key, (line, _))) => Err(ConfigError::Unknown { line, key }),
            None => Ok(()),
        }
    }
}

/// Accumulates canonical `key=value` lines.
#[derive(Debug, Default)]
pub struct KvWriter {
    out: String,
}

impl KvWriter {
    pub fn put(&mut self, key: &str, value: impl Display) -> &mut Self {
        self.out.push_str(key);
        self.out.push('=');
        self.out.push_str(&value.to_string());
        self.out.push('\n');
        self
    }

    pub fn finish(self) -> String {
        self.out
    }
}

pub fn check(ok: bool, key: &str, reason: impl Into<String>) -> Result<(), ConfigError> {
    if ok {
        Ok(())
    } else {
        Err(ConfigError::Invalid { key: key.to_string(), reason: reason.into() })
    }
}
