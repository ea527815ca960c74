//! Flat `key=value` configuration: defaults, then the config file, then flags.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::fs;
use std::io::{self, Write};
use std::path::Path;
use std::str::FromStr;

use input_consensus::Error as CoreError;

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Internal(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Internal(_) => 3,
        }
    }
}

impl Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "error: {m}"),
            CliError::Internal(m) => write!(f, "internal error: {m}"),
        }
    }
}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        match e {
            CoreError::NonDifferentiable(_) => CliError::Internal(e.to_string()),
            _ => CliError::Usage(e.to_string()),
        }
    }
}

impl From<io::Error> for CliError {
    fn from(e: io::Error) -> Self {
        CliError::Usage(format!("i/o: {e}"))
    }
}

pub type CliResult<T> = Result<T, CliError>;

pub fn usage<T>(msg: impl Into<String>) -> CliResult<T> {
    Err(CliError::Usage(msg.into()))
}

/// A recognised key and its default; `None` marks a required key.
pub struct Key {
    pub name: &'static str,
    pub default: Option<&'static str>,
}

pub const fn key(name: &'static str, default: &'static str) -> Key {
    Key {
        name,
        default: Some(default),
    }
}

pub const fn required(name: &'static str) -> Key {
    Key { name, default: None }
}

pub const MODEL_KEYS: [Key; 4] = [
    key("theta_star", "0"),
    key("alpha", "0.3"),
    key("beta", "10"),
    key("p", "0.25"),
];

/// Parses `key = value` lines; blank lines and `#` comments are skipped.
pub fn read_config_file(path: &Path) -> CliResult<Vec<(String, String)>> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))?;
    let mut pairs = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return usage(format!("{}:{}: expected key=value", path.display(), lineno + 1));
        };
        pairs.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(pairs)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Resolved {
    pub command: &'static str,
    values: BTreeMap<String, String>,
}

impl Resolved {
    pub fn resolve(
        command: &'static str,
        keys: &[&[Key]],
        file: &[(String, String)],
        flags: &[(&'static str, Option<String>)],
    ) -> CliResult<Self> {
        let known = |name: &str| keys.iter().flat_map(|k| k.iter()).any(|k| k.name == name);
        let mut values = BTreeMap::new();
        for k in keys.iter().flat_map(|k| k.iter()) {
            if let Some(d) = k.default {
                values.insert(k.name.to_string(), d.to_string());
            }
        }
        for (k, v) in file {
            if !known(k) {
                return usage(format!("unknown config key '{k}' for {command}"));
            }
            values.insert(k.clone(), v.clone());
        }
        for (k, v) in flags {
            debug_assert!(known(k), "flag {k} missing from key table");
            if let Some(v) = v {
                values.insert(k.to_string(), v.clone());
            }
        }
        for k in keys.iter().flat_map(|k| k.iter()) {
            if !values.contains_key(k.name) {
                return usage(format!("missing required key '{}' (pass --{})", k.name, k.name.replace('_', "-")));
            }
        }
        Ok(Resolved { command, values })
    }

    pub fn raw(&self, key: &str) -> &str {
        self.values
            .get(key)
            .map(String::as_str)
            .unwrap_or_else(|| panic!("key {key} not declared"))
    }

    pub fn get<T: FromStr>(&self, key: &str) -> CliResult<T> {
        let raw = self.raw(key);
        raw.parse()
            .map_err(|_| CliError::Usage(format!("cannot parse {key}={raw}")))
    }

    /// `none` (any case) or an empty value means unset.
    pub fn get_opt<T: FromStr>(&self, key: &str) -> CliResult<Option<T>> {
        let raw = self.raw(key);
        if raw.is_empty() || raw.eq_ignore_ascii_case("none") {
            return Ok(None);
        }
        self.get(key).map(Some)
    }

    pub fn list<T: FromStr>(&self, key: &str) -> CliResult<Vec<T>> {
        let raw = self.raw(key);
        let items: CliResult<Vec<T>> = raw
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| {
                s.parse()
                    .map_err(|_| CliError::Usage(format!("cannot parse '{s}' in {key}={raw}")))
            })
            .collect();
        let items = items?;
        if items.is_empty() {
            return usage(format!("{key} must list at least one value"));
        }
        Ok(items)
    }

    pub fn entries(&self) -> impl Iterator<Item = (&str, &str)> {
        self.values.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }

    /// FNV-1a over the command and sorted `key=value` lines.
    pub fn hash(&self) -> u64 {
        let mut text = format!("{}\n", self.command);
        for (k, v) in self.entries() {
            text.push_str(&format!("{k}={v}\n"));
        }
        text.bytes().fold(0xCBF2_9CE4_8422_2325u64, |h, b| {
            (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01B3)
        })
    }

    pub fn hash_hex(&self) -> String {
        format!("{:016x}", self.hash())
    }

    pub fn write_header<W: Write>(&self, out: &mut W) -> io::Result<()> {
        writeln!(out, "# icsim {} {}", self.command, env!("CARGO_PKG_VERSION"))?;
        for (k, v) in self.entries() {
            writeln!(out, "# {k}={v}")?;
        }
        writeln!(out, "# config_hash={}", self.hash_hex())
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::Value::Object(
            self.entries()
                .map(|(k, v)| (k.to_string(), serde_json::Value::String(v.to_string())))
                .collect(),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const KEYS: [Key; 3] = [required("n"), key("seed", "0"), key("tau", "none")];

    fn pairs(list: &[(&str, &str)]) -> Vec<(String, String)> {
        list.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()
    }

    #[test]
    fn flags_override_file_and_defaults() {
        let file = pairs(&[("n", "10"), ("seed", "4")]);
        let r = Resolved::resolve("t", &[&KEYS], &file, &[("seed", Some("9".into())), ("n", None)]).unwrap();
        assert_eq!(r.get::<usize>("n").unwrap(), 10);
        assert_eq!(r.get::<u64>("seed").unwrap(), 9);
        assert_eq!(r.get_opt::<f64>("tau").unwrap(), None);
    }

    #[test]
    fn unknown_and_missing_keys_are_usage_errors() {
        let err = Resolved::resolve("t", &[&KEYS], &pairs(&[("bogus", "1")]), &[]).unwrap_err();
        assert_eq!(err.exit_code(), 2);
        let err = Resolved::resolve("t", &[&KEYS], &[], &[]).unwrap_err();
        assert!(err.to_string().contains("--n"));
    }

    #[test]
    fn hash_tracks_resolved_values_only() {
        let a = Resolved::resolve("t", &[&KEYS], &pairs(&[("n", "5")]), &[]).unwrap();
        let b = Resolved::resolve("t", &[&KEYS], &[], &[("n", Some("5".into()))]).unwrap();
        let c = Resolved::resolve("t", &[&KEYS], &[], &[("n", Some("6".into()))]).unwrap();
        assert_eq!(a.hash(), b.hash());
        assert_ne!(a.hash(), c.hash());
    }

    #[test]
    fn lists_parse() {
        let keys = [key("ns", "1, 2,3")];
        let r = Resolved::resolve("t", &[&keys], &[], &[]).unwrap();
        assert_eq!(r.list::<usize>("ns").unwrap(), vec![1, 2, 3]);
    }
}
