use std::collections::BTreeSet;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use log::warn;

use super::VERSION;
use crate::error::{Error, Result};
use crate::format::parse_kv;

/// Marker for options whose value is derived from other settings.
pub const AUTO: &str = "auto";

fn canonical(key: &str) -> String {
    key.trim().replace('_', "-")
}

/// Reads a `key=value` file. Keys may use `-` or `_`; repeated keys keep
/// the last value and log a warning.
pub fn load_config(path: &Path) -> Result<Vec<(String, String)>> {
    let text = fs::read_to_string(path)?;
    let kv = parse_kv(&text)?;
    let mut seen = BTreeSet::new();
    let mut out = Vec::with_capacity(kv.len());
    for (k, v) in kv {
        let k = canonical(&k);
        if !seen.insert(k.clone()) {
            warn!("`{k}` is set more than once in {}; the last value wins", path.display());
        }
        out.push((k, v));
    }
    Ok(out)
}

/// Fully resolved options of one subcommand: schema defaults, then the
/// config file, then command-line flags.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub command: String,
    entries: Vec<(String, String)>,
}

impl RunConfig {
    pub fn resolve(
        command: &str,
        defaults: Vec<(String, String)>,
        file: &[(String, String)],
        flags: &[(String, String)],
    ) -> Result<Self> {
        let mut entries = defaults;
        for (k, v) in file.iter().chain(flags) {
            let k = canonical(k);
            match entries.iter_mut().find(|(key, _)| *key == k) {
                Some(e) => e.1 = v.clone(),
                None => {
                    let valid: Vec<&str> = entries.iter().map(|(k, _)| k.as_str()).collect();
                    return Err(Error::Config(format!(
                        "unknown key `{k}` for {command}; valid keys: {}",
                        valid.join(", ")
                    )));
                }
            }
        }
        Ok(Self {
            command: command.to_string(),
            entries,
        })
    }

    pub fn entries(&self) -> &[(String, String)] {
        &self.entries
    }

    pub fn raw(&self, key: &str) -> &str {
        self.entries
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
            .unwrap_or_else(|| panic!("`{key}` is not in the {} schema", self.command))
    }

    pub fn is_set(&self, key: &str) -> bool {
        let v = self.raw(key);
        !v.is_empty() && v != AUTO
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<T> {
        let v = self.raw(key);
        if v.is_empty() {
            return Err(Error::Config(format!("`{key}` is required")));
        }
        v.parse()
            .map_err(|_| Error::Config(format!("bad value `{v}` for `{key}`")))
    }

    /// `None` for empty or `auto` values.
    pub fn opt<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        if self.is_set(key) {
            self.get(key).map(Some)
        } else {
            Ok(None)
        }
    }

    pub fn list<T: FromStr>(&self, key: &str) -> Result<Vec<T>> {
        let v = self.raw(key);
        if v.is_empty() || v == AUTO {
            return Ok(Vec::new());
        }
        v.split(',')
            .map(|p| {
                p.trim()
                    .parse()
                    .map_err(|_| Error::Config(format!("bad list item `{p}` in `{key}`")))
            })
            .collect()
    }

    /// Provenance lines for reports: version, command and every option.
    pub fn header(&self) -> String {
        let mut s = format!("# {VERSION}\n# command={}\n", self.command);
        for (k, v) in &self.entries {
            s.push_str(&format!("# {k}={v}\n"));
        }
        s
    }
}
