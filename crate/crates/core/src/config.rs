//! Flat key=value config files.
//!
//! One `key=value` per line; `#` starts a comment; blank lines are ignored.
//! Parse errors carry 1-based line numbers, and missing-key errors name the
//! key, so the CLI can exit with a line-numbered message.

use crate::error::{Error, Result};
use std::collections::BTreeMap;
use std::path::Path;

#[derive(Debug, Clone, Default)]
pub struct Config {
    values: BTreeMap<String, String>,
}

impl Config {
    pub fn parse(text: &str) -> Result<Config> {
        let mut values = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            match line.split_once('=') {
                Some((k, v)) if !k.trim().is_empty() => {
                    values.insert(k.trim().to_string(), v.trim().to_string());
                }
                _ => {
                    return Err(Error::Config {
                        line: i + 1,
                        msg: format!("expected key=value, got {line:?}"),
                    })
                }
            }
        }
        Ok(Config { values })
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Config> {
        let text = std::fs::read_to_string(path)?;
        Config::parse(&text)
    }

    pub fn get(&self, key: &str) -> Result<&str> {
        self.values
            .get(key)
            .map(|s| s.as_str())
            .ok_or_else(|| Error::Config {
                line: 0,
                msg: format!("missing key `{key}`"),
            })
    }

    pub fn get_or<'a>(&'a self, key: &str, default: &'a str) -> &'a str {
        self.values.get(key).map(|s| s.as_str()).unwrap_or(default)
    }

    pub fn get_f64(&self, key: &str) -> Result<f64> {
        self.get(key)?.parse().map_err(|_| Error::Config {
            line: 0,
            msg: format!("key `{key}` is not a number: {:?}", self.get(key).unwrap()),
        })
    }

    pub fn get_f64_or(&self, key: &str, default: f64) -> Result<f64> {
        match self.values.get(key) {
            None => Ok(default),
            Some(_) => self.get_f64(key),
        }
    }

    pub fn get_usize(&self, key: &str) -> Result<usize> {
        self.get(key)?.parse().map_err(|_| Error::Config {
            line: 0,
            msg: format!("key `{key}` is not an integer: {:?}", self.get(key).unwrap()),
        })
    }

    pub fn get_usize_or(&self, key: &str, default: usize) -> Result<usize> {
        match self.values.get(key) {
            None => Ok(default),
            Some(_) => self.get_usize(key),
        }
    }

    pub fn get_u64_or(&self, key: &str, default: u64) -> Result<u64> {
        match self.values.get(key) {
            None => Ok(default),
            Some(v) => v.parse().map_err(|_| Error::Config {
                line: 0,
                msg: format!("key `{key}` is not an integer: {v:?}"),
            }),
        }
    }

    pub fn contains(&self, key: &str) -> bool {
        self.values.contains_key(key)
    }

    pub fn set(&mut self, key: impl Into<String>, value: impl Into<String>) {
        self.values.insert(key.into(), value.into());
    }
}
