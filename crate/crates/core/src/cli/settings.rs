//! Flat `key = value` configuration with flag overrides.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use super::CliError;

/// Parses `key = value` lines. Blank lines and text after `#` are ignored;
/// dashes in keys are read as underscores.
pub fn parse_config(text: &str) -> Result<Vec<(String, String)>, CliError> {
    let mut out = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("config line {}: expected key=value, got '{line}'", n + 1)))?;
        let key = normalize(key.trim());
        if key.is_empty() {
            return Err(CliError::Usage(format!("config line {}: empty key", n + 1)));
        }
        out.push((key, value.trim().to_string()));
    }
    Ok(out)
}

fn normalize(key: &str) -> String {
    key.replace('-', "_")
}

/// Resolved settings for one command.
///
/// Every lookup records the value actually used (default included), so
/// [`Settings::resolved`] is the full effective configuration.
#[derive(Debug, Default)]
pub struct Settings {
    given: BTreeMap<String, String>,
    resolved: BTreeMap<String, String>,
}

impl Settings {
    /// Layers `flags` over the optional config file. Keys outside `known`
    /// are rejected.
    pub fn load(file: Option<&Path>, flags: &[(&str, Option<&str>)], known: &[&str]) -> Result<Self, CliError> {
        let mut given = BTreeMap::new();
        if let Some(path) = file {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
            for (k, v) in parse_config(&text)? {
                given.insert(k, v);
            }
        }
        for (k, v) in flags {
            if let Some(v) = v {
                given.insert(normalize(k), v.to_string());
            }
        }
        if let Some(bad) = given.keys().find(|k| !known.contains(&k.as_str())) {
            return Err(CliError::Usage(format!(
                "unknown config key '{bad}' (expected one of: {})",
                known.join(", ")
            )));
        }
        Ok(Self {
            given,
            resolved: BTreeMap::new(),
        })
    }

    fn parse<T: FromStr>(key: &str, raw: &str) -> Result<T, CliError>
    where
        T::Err: Display,
    {
        raw.parse()
            .map_err(|e| CliError::Usage(format!("invalid value '{raw}' for '{key}': {e}")))
    }

    pub fn get<T: FromStr>(&mut self, key: &str, default: &str) -> Result<T, CliError>
    where
        T::Err: Display,
    {
        let raw = self.given.get(key).cloned().unwrap_or_else(|| default.to_string());
        let v = Self::parse(key, &raw)?;
        self.resolved.insert(key.to_string(), raw);
        Ok(v)
    }

    pub fn opt<T: FromStr>(&mut self, key: &str) -> Result<Option<T>, CliError>
    where
        T::Err: Display,
    {
        match self.given.get(key).cloned() {
            Some(raw) => {
                let v = Self::parse(key, &raw)?;
                self.resolved.insert(key.to_string(), raw);
                Ok(Some(v))
            }
            None => Ok(None),
        }
    }

    pub fn required<T: FromStr>(&mut self, key: &str) -> Result<T, CliError>
    where
        T::Err: Display,
    {
        self.opt(key)?
            .ok_or_else(|| CliError::Usage(format!("missing required key '{key}'")))
    }

    /// A strictly positive integer.
    pub fn dim(&mut self, key: &str, default: &str) -> Result<usize, CliError> {
        let v: usize = self.get(key, default)?;
        if v == 0 {
            return Err(CliError::Usage(format!("'{key}' must be positive")));
        }
        Ok(v)
    }

    /// Comma-separated list; an empty value is an empty list.
    pub fn list<T: FromStr>(&mut self, key: &str, default: &str) -> Result<Vec<T>, CliError>
    where
        T::Err: Display,
    {
        let raw: String = self.get(key, default)?;
        raw.split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| Self::parse(key, s))
            .collect()
    }

    pub fn resolved(&self) -> &BTreeMap<String, String> {
        &self.resolved
    }
}

/// Expands a grid axis: comma-separated values or inclusive ranges `a..b`
/// (`a..=b` also accepted). Zero is rejected.
pub fn parse_grid(key: &str, raw: &str) -> Result<Vec<u64>, CliError> {
    let bad = |what: &str| CliError::Usage(format!("invalid grid '{raw}' for '{key}': {what}"));
    let num = |s: &str| -> Result<u64, CliError> {
        let v: u64 = s.trim().parse().map_err(|_| bad(&format!("'{}' is not an integer", s.trim())))?;
        if v == 0 {
            return Err(bad("values must be positive"));
        }
        Ok(v)
    };
    let mut out = Vec::new();
    for item in raw.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        if let Some((a, b)) = item.split_once("..") {
            let (a, b) = (num(a)?, num(b.trim_start_matches('='))?);
            if a > b {
                return Err(bad("empty range"));
            }
            out.extend(a..=b);
        } else {
            out.push(num(item)?);
        }
    }
    Ok(out)
}
