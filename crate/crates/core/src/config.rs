//! Flat `key = value` configuration files.
//!
//! Blank lines and lines starting with `#` are ignored. Every module config
//! type reads its own keys out of one shared namespace; callers decide which
//! keys are legal and reject the rest with [`FlatConfig::reject_unknown`].

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

/// One documented configuration key.
#[derive(Debug, Clone, Copy)]
pub struct KeyDoc {
    pub key: &'static str,
    pub default: &'static str,
    pub help: &'static str,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct FlatConfig {
    values: BTreeMap<String, String>,
}

impl FlatConfig {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut values = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
                line: i + 1,
                reason: format!("expected `key = value`, got `{line}`"),
            })?;
            let k = k.trim();
            if k.is_empty() {
                return Err(Error::Parse {
                    line: i + 1,
                    reason: "empty key".into(),
                });
            }
            values.insert(k.to_string(), v.trim().to_string());
        }
        Ok(Self { values })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io_at(path, e))?;
        Self::parse(&text)
    }

    /// Overrides (or adds) a key; later calls win.
    pub fn set(&mut self, key: impl Into<String>, value: impl Into<String>) {
        self.values.insert(key.into(), value.into());
    }

    /// Parses a `key=value` override string.
    pub fn set_pair(&mut self, pair: &str) -> Result<()> {
        let (k, v) = pair
            .split_once('=')
            .ok_or_else(|| Error::config(format!("override `{pair}` is not key=value")))?;
        self.set(k.trim(), v.trim());
        Ok(())
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    pub fn get<T>(&self, key: &str, default: T) -> Result<T>
    where
        T: FromStr,
        T::Err: Display,
    {
        match self.values.get(key) {
            None => Ok(default),
            Some(v) => v
                .parse()
                .map_err(|e| Error::config(format!("key `{key}`: cannot parse `{v}`: {e}"))),
        }
    }

    pub fn get_bool(&self, key: &str, default: bool) -> Result<bool> {
        match self.values.get(key).map(|s| s.to_ascii_lowercase()) {
            None => Ok(default),
            Some(v) => match v.as_str() {
                "true" | "1" | "yes" | "on" => Ok(true),
                "false" | "0" | "no" | "off" => Ok(false),
                _ => Err(Error::config(format!("key `{key}`: `{v}` is not a boolean"))),
            },
        }
    }

    /// Comma-separated list.
    pub fn get_list<T>(&self, key: &str, default: Vec<T>) -> Result<Vec<T>>
    where
        T: FromStr,
        T::Err: Display,
    {
        match self.values.get(key) {
            None => Ok(default),
            Some(v) => parse_list(v).map_err(|e| Error::config(format!("key `{key}`: {e}"))),
        }
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.values.keys().map(String::as_str)
    }

    pub fn reject_unknown(&self, known: &[KeyDoc]) -> Result<()> {
        for k in self.values.keys() {
            if !known.iter().any(|d| d.key == k) {
                return Err(Error::config(format!("unknown key `{k}`")));
            }
        }
        Ok(())
    }
}

pub(crate) fn parse_list<T>(s: &str) -> std::result::Result<Vec<T>, String>
where
    T: FromStr,
    T::Err: Display,
{
    s.split(',')
        .map(str::trim)
        .filter(|p| !p.is_empty())
        .map(|p| p.parse::<T>().map_err(|e| format!("cannot parse `{p}`: {e}")))
        .collect()
}

/// Renders key docs as an aligned help block.
pub fn render_keys(keys: &[KeyDoc]) -> String {
    let width = keys.iter().map(|k| k.key.len()).max().unwrap_or(0);
    let mut out = String::new();
    for k in keys {
        out.push_str(&format!(
            "  {:width$}  {} [default: {}]\n",
            k.key,
            k.help,
            k.default,
            width = width
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_and_overrides() {
        let mut c = FlatConfig::parse("# hi\nbatch_size = 4\n\naug_prob=0.5\n").unwrap();
        assert_eq!(c.get("batch_size", 1usize).unwrap(), 4);
        c.set_pair("batch_size=8").unwrap();
        assert_eq!(c.get("batch_size", 1usize).unwrap(), 8);
        assert_eq!(c.get("missing", 3.5f64).unwrap(), 3.5);
    }

    #[test]
    fn rejects_garbage() {
        assert!(matches!(
            FlatConfig::parse("a = 1\nnot a pair"),
            Err(Error::Parse { line: 2, .. })
        ));
        let c = FlatConfig::parse("x = 1").unwrap();
        let known = [KeyDoc {
            key: "y",
            default: "0",
            help: "",
        }];
        assert!(c.reject_unknown(&known).is_err());
        assert!(c.get::<usize>("x", 0).is_ok());
        assert!(FlatConfig::parse("x = q").unwrap().get::<usize>("x", 0).is_err());
    }

    #[test]
    fn lists_and_bools() {
        let c = FlatConfig::parse("f = 0.9, 1.0,1.1\nb = off").unwrap();
        assert_eq!(c.get_list("f", vec![0.0f64]).unwrap(), vec![0.9, 1.0, 1.1]);
        assert!(!c.get_bool("b", true).unwrap());
    }
}
