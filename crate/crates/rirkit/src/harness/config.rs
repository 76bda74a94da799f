//! Flat key-value experiment configuration: `key = value` lines, `#`
//! comments. Parse errors cite the offending line number.

use std::collections::HashMap;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Default)]
pub struct KvConfig {
    entries: HashMap<String, (String, usize)>,
}

impl KvConfig {
    pub fn parse_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse_str(&text)
    }

    pub fn parse_str(text: &str) -> Result<Self> {
        let mut entries = HashMap::new();
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::Config {
                    line: line_no,
                    msg: format!("expected 'key = value', got '{raw}'"),
                });
            };
            let key = key.trim().to_string();
            let value = value.trim().to_string();
            if key.is_empty() {
                return Err(Error::Config { line: line_no, msg: "empty key".into() });
            }
            if let Some((_, first)) = entries.insert(key.clone(), (value, line_no)) {
                return Err(Error::Config {
                    line: line_no,
                    msg: format!("duplicate key '{key}' (first set on line {first})"),
                });
            }
        }
        Ok(Self { entries })
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(|s| s.as_str())
    }

    /// Error out on any key outside the recognized set, citing its line.
    pub fn deny_unknown(&self, known: &[&str]) -> Result<()> {
        let mut unknown: Vec<(&str, usize)> = self
            .entries
            .iter()
            .filter(|(k, _)| !known.contains(&k.as_str()))
            .map(|(k, (_, line))| (k.as_str(), *line))
            .collect();
        unknown.sort_by_key(|(_, line)| *line);
        if let Some((key, line)) = unknown.first() {
            return Err(Error::Config { line: *line, msg: format!("unknown key '{key}'") });
        }
        Ok(())
    }

    pub fn get_str(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(|(v, _)| v.as_str())
    }

    fn line_of(&self, key: &str) -> usize {
        self.entries.get(key).map(|(_, l)| *l).unwrap_or(0)
    }

    pub fn get_f64(&self, key: &str) -> Result<Option<f64>> {
        match self.get_str(key) {
            None => Ok(None),
            Some(v) => v.parse::<f64>().map(Some).map_err(|_| Error::Config {
                line: self.line_of(key),
                msg: format!("'{key}' must be a number, got '{v}'"),
            }),
        }
    }

    pub fn get_usize(&self, key: &str) -> Result<Option<usize>> {
        match self.get_str(key) {
            None => Ok(None),
            Some(v) => v.parse::<usize>().map(Some).map_err(|_| Error::Config {
                line: self.line_of(key),
                msg: format!("'{key}' must be a non-negative integer, got '{v}'"),
            }),
        }
    }

    pub fn get_u64(&self, key: &str) -> Result<Option<u64>> {
        match self.get_str(key) {
            None => Ok(None),
            Some(v) => v.parse::<u64>().map(Some).map_err(|_| Error::Config {
                line: self.line_of(key),
                msg: format!("'{key}' must be a non-negative integer, got '{v}'"),
            }),
        }
    }

    pub fn get_bool(&self, key: &str) -> Result<Option<bool>> {
        match self.get_str(key) {
            None => Ok(None),
            Some("true") | Some("yes") | Some("1") => Ok(Some(true)),
            Some("false") | Some("no") | Some("0") => Ok(Some(false)),
            Some(v) => Err(Error::Config {
                line: self.line_of(key),
                msg: format!("'{key}' must be true/false, got '{v}'"),
            }),
        }
    }

    /// Comma-separated list of trimmed tokens.
    pub fn get_list(&self, key: &str) -> Option<Vec<String>> {
        self.get_str(key).map(|v| {
            v.split(',').map(|t| t.trim().to_string()).filter(|t| !t.is_empty()).collect()
        })
    }

    pub fn get_f64_list(&self, key: &str) -> Result<Option<Vec<f64>>> {
        match self.get_list(key) {
            None => Ok(None),
            Some(tokens) => {
                let mut out = Vec::with_capacity(tokens.len());
                for t in tokens {
                    out.push(t.parse::<f64>().map_err(|_| Error::Config {
                        line: self.line_of(key),
                        msg: format!("'{key}' must be a comma-separated number list; '{t}' is not a number"),
                    })?);
                }
                Ok(Some(out))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_keys_comments_and_blanks() {
        let cfg = KvConfig::parse_str("# hello\n\nfoo = 1.5\nbar = abc\n").unwrap();
        assert_eq!(cfg.get_f64("foo").unwrap(), Some(1.5));
        assert_eq!(cfg.get_str("bar"), Some("abc"));
        assert_eq!(cfg.get_str("baz"), None);
    }

    #[test]
    fn errors_cite_line_numbers() {
        let err = KvConfig::parse_str("a = 1\nnonsense line\n").unwrap_err();
        match err {
            Error::Config { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
        let cfg = KvConfig::parse_str("a = 1\nb = x\n").unwrap();
        match cfg.get_f64("b").unwrap_err() {
            Error::Config { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn duplicate_and_unknown_keys_are_errors() {
        assert!(KvConfig::parse_str("a = 1\na = 2\n").is_err());
        let cfg = KvConfig::parse_str("a = 1\nzzz = 2\n").unwrap();
        match cfg.deny_unknown(&["a"]).unwrap_err() {
            Error::Config { line, msg } => {
                assert_eq!(line, 2);
                assert!(msg.contains("zzz"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn lists_parse() {
        let cfg = KvConfig::parse_str("xs = 1, 2.5, -3\nnames = a, b\n").unwrap();
        assert_eq!(cfg.get_f64_list("xs").unwrap(), Some(vec![1.0, 2.5, -3.0]));
        assert_eq!(cfg.get_list("names"), Some(vec!["a".into(), "b".into()]));
    }
}
