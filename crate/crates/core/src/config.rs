//! Flat `key = value` configuration documents.
//!
//! One entry per line, `#` starts a comment, keys are dotted paths such as
//! `train.learning_rate`. Every diagnostic carries the line and key.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Result, TaidError};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Entry {
    pub line: usize,
    pub value: String,
}

/// Parsed document. Keys are consumed with [`Doc::take`] so that leftovers
/// can be reported as unknown.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Doc {
    entries: BTreeMap<String, Entry>,
}

fn config_err(line: usize, key: &str, reason: impl Into<String>) -> TaidError {
    TaidError::Config {
        line,
        key: key.to_string(),
        reason: reason.into(),
    }
}

impl Doc {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (key, value) = content
                .split_once('=')
                .ok_or_else(|| config_err(line, content, "expected `key = value`"))?;
            let key = key.trim();
            let valid = !key.is_empty()
                && key
                    .split('.')
                    .all(|part| !part.is_empty() && part.chars().all(|c| c.is_ascii_alphanumeric() || c == '_'));
            if !valid {
                return Err(config_err(line, key, "keys are dotted names of letters, digits and `_`"));
            }
            let entry = Entry {
                line,
                value: value.trim().to_string(),
            };
            if let Some(prev) = entries.insert(key.to_string(), entry) {
                return Err(config_err(line, key, format!("duplicate key (first set on line {})", prev.line)));
            }
        }
        Ok(Self { entries })
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| TaidError::io(path, e))?;
        Self::parse(&text)
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, key: &str) -> Option<&Entry> {
        self.entries.get(key)
    }

    pub fn contains(&self, key: &str) -> bool {
        self.entries.contains_key(key)
    }

    pub fn set(&mut self, key: &str, value: impl Into<String>, line: usize) {
        self.entries.insert(
            key.to_string(),
            Entry {
                line,
                value: value.into(),
            },
        );
    }

    pub fn remove(&mut self, key: &str) -> Option<Entry> {
        self.entries.remove(key)
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    /// Removes and returns every entry whose key starts with `prefix.`,
    /// with the prefix stripped.
    pub fn take_prefixed(&mut self, prefix: &str) -> Vec<(String, Entry)> {
        let dotted = format!("{prefix}.");
        let keys: Vec<String> = self.entries.keys().filter(|k| k.starts_with(&dotted)).cloned().collect();
        keys.into_iter()
            .map(|k| {
                let e = self.entries.remove(&k).expect("key listed");
                (k[dotted.len()..].to_string(), e)
            })
            .collect()
    }

    /// Removes `key` and parses it, if present.
    pub fn take<T: FromStr>(&mut self, key: &str) -> Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        match self.entries.remove(key) {
            None => Ok(None),
            Some(e) => e
                .value
                .parse()
                .map(Some)
                .map_err(|err| config_err(e.line, key, format!("cannot parse `{}`: {err}", e.value))),
        }
    }

    pub fn take_or<T: FromStr>(&mut self, key: &str, default: T) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        Ok(self.take(key)?.unwrap_or(default))
    }

    /// Line of `key` for diagnostics about values already taken (0 if absent).
    pub fn line_of(&self, key: &str) -> usize {
        self.entries.get(key).map_or(0, |e| e.line)
    }

    /// Fails on the first key nobody consumed.
    pub fn ensure_consumed(&self) -> Result<()> {
        match self.entries.iter().min_by_key(|(_, e)| e.line) {
            None => Ok(()),
            Some((k, e)) => Err(config_err(e.line, k, "unknown key")),
        }
    }

    /// Sorted `key = value` lines.
    pub fn canonical_text(&self) -> String {
        let mut out = String::new();
        for (k, e) in &self.entries {
            writeln!(out, "{k} = {}", e.value).unwrap();
        }
        out
    }
}

/// Comma-separated list; an empty value is the empty list.
pub fn split_list(value: &str) -> Vec<String> {
    if value.trim().is_empty() {
        return Vec::new();
    }
    value.split(',').map(|s| s.trim().to_string()).collect()
}

/// A value that is either a number or the word `none`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OptionalUsize(pub Option<usize>);

impl FromStr for OptionalUsize {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        if s == "none" {
            return Ok(Self(None));
        }
        s.parse().map(|v| Self(Some(v))).map_err(|_| "expected an integer or `none`".into())
    }
}

/// Builds a config error tied to a key.
pub fn invalid(line: usize, key: &str, reason: impl Into<String>) -> TaidError {
    config_err(line, key, reason)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_and_whitespace() {
        let doc = Doc::parse("# header\n a.b = 3  # trailing\n\nc = hello world\n").unwrap();
        assert_eq!(doc.get("a.b").unwrap(), &Entry { line: 2, value: "3".into() });
        assert_eq!(doc.get("c").unwrap().value, "hello world");
        assert_eq!(doc.canonical_text(), "a.b = 3\nc = hello world\n");
    }

    #[test]
    fn diagnostics_name_line_and_key() {
        let err = Doc::parse("a = 1\na = 2\n").unwrap_err();
        assert!(matches!(err, TaidError::Config { line: 2, ref key, .. } if key == "a"));
        let err = Doc::parse("a = 1\njunk\n").unwrap_err();
        assert!(matches!(err, TaidError::Config { line: 2, .. }));
        assert!(Doc::parse("bad key = 1").is_err());
        assert!(Doc::parse("a..b = 1").is_err());

        let mut doc = Doc::parse("x = 1\ny = abc\nz = 2\n").unwrap();
        assert_eq!(doc.take::<u32>("x").unwrap(), Some(1));
        let err = doc.take::<u32>("y").unwrap_err();
        assert!(matches!(err, TaidError::Config { line: 2, ref key, .. } if key == "y"));
        assert_eq!(doc.take_or("missing", 7u32).unwrap(), 7);
        let err = doc.ensure_consumed().unwrap_err();
        assert!(matches!(err, TaidError::Config { line: 3, ref key, .. } if key == "z"));
    }

    #[test]
    fn prefixed_and_lists() {
        let mut doc = Doc::parse("sweep.a.b = 1, 2\nsweep.c =\nother = 1\n").unwrap();
        let axes = doc.take_prefixed("sweep");
        assert_eq!(axes.len(), 2);
        assert_eq!(axes[0].0, "a.b");
        assert_eq!(split_list(&axes[0].1.value), vec!["1", "2"]);
        assert!(split_list(&axes[1].1.value).is_empty());
        assert!(doc.contains("other") && !doc.contains("sweep.c"));
        assert_eq!("none".parse::<OptionalUsize>().unwrap(), OptionalUsize(None));
        assert_eq!("12".parse::<OptionalUsize>().unwrap(), OptionalUsize(Some(12)));
    }
}
