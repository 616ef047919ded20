//! Flat `key = value` configuration files.
//!
//! Used for model specs, generative models, and study configs. Blank lines and
//! lines starting with `#` are ignored. List values are comma separated; an
//! empty value is an empty list. Keys may not repeat.

use std::cell::RefCell;
use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Default)]
pub struct KeyValues {
    entries: BTreeMap<String, (usize, String)>,
    used: RefCell<BTreeSet<String>>,
}

impl KeyValues {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::config(format!("line {line_no}: expected `key = value`, got `{line}`"))
            })?;
            let key = key.trim();
            if key.is_empty() {
                return Err(Error::config(format!("line {line_no}: empty key")));
            }
            if entries
                .insert(key.to_string(), (line_no, value.trim().to_string()))
                .is_some()
            {
                return Err(Error::config(format!("line {line_no}: duplicate key `{key}`")));
            }
        }
        Ok(Self {
            entries,
            used: RefCell::default(),
        })
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text)
    }

    pub fn contains(&self, key: &str) -> bool {
        self.entries.contains_key(key)
    }

    /// Keys starting with `prefix`, in sorted order. Does not mark them used.
    pub fn keys_with_prefix<'a>(&'a self, prefix: &'a str) -> impl Iterator<Item = &'a str> + 'a {
        self.entries
            .range(prefix.to_string()..)
            .map(|(k, _)| k.as_str())
            .take_while(move |k| k.starts_with(prefix))
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        let (_, value) = self.entries.get(key)?;
        self.used.borrow_mut().insert(key.to_string());
        Some(value.as_str())
    }

    pub fn require(&self, key: &str) -> Result<&str> {
        self.get(key)
            .ok_or_else(|| Error::config(format!("missing required key `{key}`")))
    }

    pub fn get_parsed<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        match self.get(key) {
            None => Ok(None),
            Some(v) => v.parse::<T>().map(Some).map_err(|_| {
                let line = self.entries[key].0;
                Error::config(format!("line {line}: cannot parse value `{v}` for `{key}`"))
            }),
        }
    }

    pub fn require_parsed<T: FromStr>(&self, key: &str) -> Result<T> {
        self.get_parsed(key)?
            .ok_or_else(|| Error::config(format!("missing required key `{key}`")))
    }

    pub fn parsed_or<T: FromStr>(&self, key: &str, default: T) -> Result<T> {
        Ok(self.get_parsed(key)?.unwrap_or(default))
    }

    pub fn get_list(&self, key: &str) -> Option<Vec<String>> {
        self.get(key).map(split_list)
    }

    pub fn get_bool(&self, key: &str) -> Result<Option<bool>> {
        match self.get(key) {
            None => Ok(None),
            Some("true" | "yes" | "1") => Ok(Some(true)),
            Some("false" | "no" | "0") => Ok(Some(false)),
            Some(other) => Err(Error::config(format!(
                "`{key}` must be true or false, got `{other}`"
            ))),
        }
    }

    /// Fails if any key was never read.
    pub fn ensure_all_used(&self) -> Result<()> {
        let used = self.used.borrow();
        let unknown: Vec<String> = self
            .entries
            .iter()
            .filter(|(k, _)| !used.contains(*k))
            .map(|(k, (line, _))| format!("`{k}` (line {line})"))
            .collect();
        if unknown.is_empty() {
            Ok(())
        } else {
            Err(Error::config(format!("unknown keys: {}", unknown.join(", "))))
        }
    }
}

fn split_list(value: &str) -> Vec<String> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(str::to_string)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_lists_and_numbers() {
        let kv = KeyValues::parse("# comment\n\nn = 37\ncontrols = a, b ,c\nempty =\n").unwrap();
        assert_eq!(kv.require_parsed::<usize>("n").unwrap(), 37);
        assert_eq!(kv.get_list("controls").unwrap(), vec!["a", "b", "c"]);
        assert!(kv.get_list("empty").unwrap().is_empty());
        kv.ensure_all_used().unwrap();
    }

    #[test]
    fn rejects_duplicates_and_garbage() {
        assert!(KeyValues::parse("a = 1\na = 2").is_err());
        assert!(KeyValues::parse("no equals sign").is_err());
        let kv = KeyValues::parse("n = x").unwrap();
        assert!(kv.require_parsed::<usize>("n").is_err());
    }

    #[test]
    fn reports_unused_keys() {
        let kv = KeyValues::parse("a = 1\ntypo = 2").unwrap();
        kv.get("a");
        let err = kv.ensure_all_used().unwrap_err().to_string();
        assert!(err.contains("typo"), "{err}");
    }

    #[test]
    fn prefix_scan() {
        let kv = KeyValues::parse("arms[0].prob = 0.3\narms[1].prob = 0.3\nb = 1").unwrap();
        let keys: Vec<_> = kv.keys_with_prefix("arms[").collect();
        assert_eq!(keys, vec!["arms[0].prob", "arms[1].prob"]);
    }
}
