//! Flat `key = value` configuration files.
//!
//! One assignment per line; `#` starts a comment; blank lines are ignored.
//! Lists are comma-separated. Keys may appear once. Every key in a file must
//! be consumed by the command reading it, so typos are reported instead of
//! silently ignored.

use std::cell::RefCell;
use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::str::FromStr;

use crate::error::{CliError, Result};

#[derive(Debug, Clone)]
struct Entry {
    value: String,
    line: usize,
}

#[derive(Debug)]
pub struct KvConfig {
    origin: String,
    entries: BTreeMap<String, Entry>,
    used: RefCell<BTreeSet<String>>,
}

impl KvConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (key, value) = content.split_once('=').ok_or_else(|| {
                CliError::Usage(format!("{origin}:{line}: expected `key = value`"))
            })?;
            let key = key.trim();
            if key.is_empty() || key.contains(char::is_whitespace) {
                return Err(CliError::Usage(format!(
                    "{origin}:{line}: invalid key {key:?}"
                )));
            }
            let entry = Entry {
                value: value.trim().to_string(),
                line,
            };
            if let Some(prev) = entries.insert(key.to_string(), entry) {
                return Err(CliError::Usage(format!(
                    "{origin}:{line}: duplicate key `{key}` (first set on line {})",
                    prev.line
                )));
            }
        }
        Ok(Self {
            origin: origin.to_string(),
            entries,
            used: RefCell::new(BTreeSet::new()),
        })
    }

    pub fn contains(&self, key: &str) -> bool {
        self.entries.contains_key(key)
    }

    fn raw(&self, key: &str) -> Option<&Entry> {
        let entry = self.entries.get(key)?;
        self.used.borrow_mut().insert(key.to_string());
        Some(entry)
    }

    fn bad(&self, key: &str, entry: &Entry, what: &str) -> CliError {
        CliError::Usage(format!(
            "{}:{}: `{key}` expects {what}, got {:?}",
            self.origin, entry.line, entry.value
        ))
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        match self.raw(key) {
            None => Ok(None),
            Some(e) => e
                .value
                .parse()
                .map(Some)
                .map_err(|_| self.bad(key, e, std::any::type_name::<T>())),
        }
    }

    pub fn get_or<T: FromStr>(&self, key: &str, default: T) -> Result<T> {
        Ok(self.get(key)?.unwrap_or(default))
    }

    pub fn get_list<T: FromStr>(&self, key: &str) -> Result<Option<Vec<T>>> {
        let Some(e) = self.raw(key) else {
            return Ok(None);
        };
        let items = e
            .value
            .split(',')
            .map(|s| s.trim().parse::<T>())
            .collect::<std::result::Result<Vec<T>, _>>()
            .map_err(|_| self.bad(key, e, "a comma-separated list"))?;
        if items.is_empty() {
            return Err(self.bad(key, e, "a non-empty list"));
        }
        Ok(Some(items))
    }

    pub fn get_list_or<T: FromStr>(&self, key: &str, default: Vec<T>) -> Result<Vec<T>> {
        Ok(self.get_list(key)?.unwrap_or(default))
    }

    /// Fails on the first key nobody asked for.
    pub fn finish(&self) -> Result<()> {
        let used = self.used.borrow();
        match self.entries.iter().find(|(k, _)| !used.contains(*k)) {
            Some((k, e)) => Err(CliError::Usage(format!(
                "{}:{}: unknown key `{k}`",
                self.origin, e.line
            ))),
            None => Ok(()),
        }
    }
}
