//! Plain-text `key = value` configuration files.
//!
//! One pair per line; `#` starts a comment; blank lines are ignored. Keys
//! are consumed with the `take*` methods so leftovers can be reported.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Default, PartialEq)]
pub struct KeyValues {
    entries: BTreeMap<String, (usize, String)>,
}

impl KeyValues {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::ParseLine {
                line: line_no,
                message: format!("expected key = value, found {line:?}"),
            })?;
            let key = k.trim();
            if key.is_empty() {
                return Err(Error::ParseLine { line: line_no, message: "empty key".into() });
            }
            if entries.insert(key.to_string(), (line_no, v.trim().to_string())).is_some() {
                return Err(Error::ParseLine { line: line_no, message: format!("duplicate key {key:?}") });
            }
        }
        Ok(Self { entries })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn take(&mut self, key: &str) -> Option<String> {
        self.entries.remove(key).map(|(_, v)| v)
    }

    /// Removes and parses `key`; parse failures name the line.
    pub fn take_parsed<T: FromStr>(&mut self, key: &str) -> Result<Option<T>> {
        match self.entries.remove(key) {
            None => Ok(None),
            Some((line, v)) => v.parse().map(Some).map_err(|_| Error::ParseLine {
                line,
                message: format!("invalid value {v:?} for {key}"),
            }),
        }
    }

    pub fn take_f64(&mut self, key: &str) -> Result<Option<f64>> {
        self.take_parsed(key)
    }

    pub fn remaining_keys(&self) -> Vec<&str> {
        self.entries.keys().map(String::as_str).collect()
    }

    /// Errors if any key was never consumed.
    pub fn finish(self) -> Result<()> {
        match self.entries.iter().next() {
            None => Ok(()),
            Some((k, (line, _))) => Err(Error::ParseLine { line: *line, message: format!("unknown key {k:?}") }),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kinematics::{Elbow, KinematicsConfig};

    #[test]
    fn parses_comments_and_values() {
        let mut kv = KeyValues::parse("# geometry\nl1 = 42 # mm\n\n branch_a=-\nseed = 7\n").unwrap();
        assert_eq!(kv.take_parsed::<u64>("seed").unwrap(), Some(7));
        let cfg = KinematicsConfig::from_key_values(&mut kv).unwrap();
        assert_eq!(cfg.geometry.lengths()[0], 42.0);
        assert_eq!(cfg.branch.a, Elbow::Minus);
        kv.finish().unwrap();
    }

    #[test]
    fn errors_name_lines() {
        let e = KeyValues::parse("a = 1\nnonsense\n").unwrap_err();
        assert!(matches!(e, Error::ParseLine { line: 2, .. }));
        assert!(matches!(KeyValues::parse("a=1\na=2").unwrap_err(), Error::ParseLine { line: 2, .. }));
        let mut kv = KeyValues::parse("\nl2 = abc").unwrap();
        assert!(matches!(kv.take_f64("l2").unwrap_err(), Error::ParseLine { line: 2, .. }));
        let kv = KeyValues::parse("zzz = 1").unwrap();
        assert!(kv.finish().unwrap_err().to_string().contains("zzz"));
    }
}
