//! Sectioned key=value configuration files.
//!
//! ```text
//! # comment
//! [section]
//! key = value
//! key = another      # repeated keys accumulate
//! ```

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{HsiError, Result};

#[derive(Debug, Clone, Default)]
pub struct ConfigFile {
    sections: BTreeMap<String, Vec<(String, String)>>,
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<Self> {
        let mut sections: BTreeMap<String, Vec<(String, String)>> = BTreeMap::new();
        let mut current = String::new();
        for (ln, raw) in text.lines().enumerate() {
            let line = match raw.find('#') {
                Some(i) => &raw[..i],
                None => raw,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            if let Some(name) = line.strip_prefix('[') {
                let name = name
                    .strip_suffix(']')
                    .ok_or_else(|| HsiError::config(format!("line {}: unterminated section header", ln + 1)))?
                    .trim();
                if name.is_empty() {
                    return Err(HsiError::config(format!("line {}: empty section name", ln + 1)));
                }
                current = name.to_string();
                sections.entry(current.clone()).or_default();
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(HsiError::config(format!(
                    "line {}: expected `key = value`, got {line:?}",
                    ln + 1
                )));
            };
            let key = key.trim();
            if key.is_empty() {
                return Err(HsiError::config(format!("line {}: empty key", ln + 1)));
            }
            if current.is_empty() {
                return Err(HsiError::config(format!(
                    "line {}: key before any [section] header",
                    ln + 1
                )));
            }
            sections
                .get_mut(&current)
                .unwrap()
                .push((key.to_string(), value.trim().to_string()));
        }
        Ok(ConfigFile { sections })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn sections(&self) -> impl Iterator<Item = &str> {
        self.sections.keys().map(|s| s.as_str())
    }

    pub fn has_section(&self, section: &str) -> bool {
        self.sections.contains_key(section)
    }

    /// Last value wins when a key is repeated.
    pub fn get(&self, section: &str, key: &str) -> Option<&str> {
        self.sections.get(section).and_then(|kvs| {
            kvs.iter()
                .rev()
                .find(|(k, _)| k == key)
                .map(|(_, v)| v.as_str())
        })
    }

    /// All values of a repeated key, in file order.
    pub fn get_all(&self, section: &str, key: &str) -> Vec<&str> {
        self.sections
            .get(section)
            .map(|kvs| {
                kvs.iter()
                    .filter(|(k, _)| k == key)
                    .map(|(_, v)| v.as_str())
                    .collect()
            })
            .unwrap_or_default()
    }

    pub fn get_parsed<T: std::str::FromStr>(&self, section: &str, key: &str) -> Result<Option<T>> {
        match self.get(section, key) {
            None => Ok(None),
            Some(v) => v.parse().map(Some).map_err(|_| {
                HsiError::config(format!("[{section}] {key}: cannot parse {v:?}"))
            }),
        }
    }

    pub fn require<T: std::str::FromStr>(&self, section: &str, key: &str) -> Result<T> {
        self.get_parsed(section, key)?
            .ok_or_else(|| HsiError::config(format!("missing required key [{section}] {key}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_sections_comments_and_repeats() {
        let cfg = ConfigFile::parse(
            "# top comment\n[alpha]\na = 1\nb = two words # tail\n\n[beta]\nx = 1\nx = 2\n",
        )
        .unwrap();
        assert_eq!(cfg.get("alpha", "a"), Some("1"));
        assert_eq!(cfg.get("alpha", "b"), Some("two words"));
        assert_eq!(cfg.get("beta", "x"), Some("2"));
        assert_eq!(cfg.get_all("beta", "x"), vec!["1", "2"]);
        assert!(cfg.has_section("alpha"));
        assert!(!cfg.has_section("gamma"));
        assert_eq!(cfg.get("gamma", "a"), None);
    }

    #[test]
    fn typed_access_and_required_keys() {
        let cfg = ConfigFile::parse("[s]\nn = 42\nf = 0.5\nbad = xyz\n").unwrap();
        assert_eq!(cfg.require::<u64>("s", "n").unwrap(), 42);
        assert_eq!(cfg.require::<f64>("s", "f").unwrap(), 0.5);
        assert!(cfg.require::<u64>("s", "bad").is_err());
        assert!(cfg.require::<u64>("s", "missing").is_err());
        assert_eq!(cfg.get_parsed::<u64>("s", "missing").unwrap(), None);
    }

    #[test]
    fn malformed_lines_are_rejected() {
        assert!(ConfigFile::parse("[unterminated\n").is_err());
        assert!(ConfigFile::parse("[]\n").is_err());
        assert!(ConfigFile::parse("key = before section\n").is_err());
        assert!(ConfigFile::parse("[s]\nno equals sign\n").is_err());
        assert!(ConfigFile::parse("[s]\n= value\n").is_err());
    }
}
