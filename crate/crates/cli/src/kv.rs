//! Flat `key = value` configuration text.
//!
//! One entry per line, `#` starts a comment, blank lines are ignored.
//! Keys are consumed by typed getters; whatever is left when the reader
//! finishes is reported as unknown.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::str::FromStr;

use anyhow::{anyhow, bail, Context, Result};

#[derive(Debug, Clone)]
pub struct KvReader {
    source: String,
    entries: BTreeMap<String, (usize, String)>,
}

impl KvReader {
    pub fn parse(text: &str, source: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| anyhow!("{source}:{}: expected `key = value`, got `{line}`", i + 1))?;
            let (k, v) = (k.trim(), v.trim());
            if k.is_empty() {
                bail!("{source}:{}: empty key", i + 1);
            }
            if let Some((first, _)) = entries.insert(k.to_string(), (i + 1, v.to_string())) {
                bail!("{source}:{}: key `{k}` already set on line {first}", i + 1);
            }
        }
        Ok(Self {
            source: source.to_string(),
            entries,
        })
    }

    pub fn empty(source: &str) -> Self {
        Self {
            source: source.to_string(),
            entries: BTreeMap::new(),
        }
    }

    pub fn take_raw(&mut self, key: &str) -> Option<(usize, String)> {
        self.entries.remove(key)
    }

    pub fn take<T>(&mut self, key: &str) -> Result<Option<T>>
    where
        T: FromStr,
        T::Err: Display,
    {
        match self.entries.remove(key) {
            None => Ok(None),
            Some((line, v)) => v
                .parse()
                .map(Some)
                .map_err(|e| anyhow!("{}:{line}: bad value `{v}` for `{key}`: {e}", self.source)),
        }
    }

    pub fn take_or<T>(&mut self, key: &str, default: T) -> Result<T>
    where
        T: FromStr,
        T::Err: Display,
    {
        Ok(self.take(key)?.unwrap_or(default))
    }

    /// Comma-separated list.
    pub fn take_list<T>(&mut self, key: &str) -> Result<Option<Vec<T>>>
    where
        T: FromStr,
        T::Err: Display,
    {
        let Some((line, v)) = self.entries.remove(key) else {
            return Ok(None);
        };
        parse_list(&v)
            .map(Some)
            .with_context(|| format!("{}:{line}: bad list for `{key}`", self.source))
    }

    /// `none` or a value.
    pub fn take_optional<T>(&mut self, key: &str, default: Option<T>) -> Result<Option<T>>
    where
        T: FromStr,
        T::Err: Display,
    {
        match self.entries.remove(key) {
            None => Ok(default),
            Some((_, v)) if v == "none" || v == "auto" => Ok(None),
            Some((line, v)) => v
                .parse()
                .map(Some)
                .map_err(|e| anyhow!("{}:{line}: bad value `{v}` for `{key}`: {e}", self.source)),
        }
    }

    /// Fails on any key nobody asked for.
    pub fn finish(self) -> Result<()> {
        if self.entries.is_empty() {
            return Ok(());
        }
        let names: Vec<String> = self
            .entries
            .iter()
            .map(|(k, (line, _))| format!("`{k}` (line {line})"))
            .collect();
        bail!("{}: unknown keys {}", self.source, names.join(", "))
    }
}

pub fn parse_list<T>(v: &str) -> Result<Vec<T>>
where
    T: FromStr,
    T::Err: Display,
{
    v.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse().map_err(|e| anyhow!("`{s}`: {e}")))
        .collect()
}

pub fn join<T: Display>(items: &[T]) -> String {
    items.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

/// Accumulates `key = value` lines in insertion order.
#[derive(Debug, Default)]
pub struct KvWriter {
    out: String,
}

impl KvWriter {
    pub fn put(&mut self, key: &str, value: impl Display) -> &mut Self {
        self.out.push_str(&format!("{key} = {value}\n"));
        self
    }

    pub fn finish(self) -> String {
        self.out
    }
}
