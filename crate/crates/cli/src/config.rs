//! Key=value config files layered under command-line flags.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use serde_json::{Map, Value};

use crate::CliError;

/// Parses `key = value` lines; blank lines and `#` comments are skipped.
/// Keys may be written with `-` or `_`.
pub fn parse_config_text(text: &str) -> Result<BTreeMap<String, String>, CliError> {
    let mut out = BTreeMap::new();
    for (ln, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| CliError::Config(format!("config line {}: expected key=value", ln + 1)))?;
        let key = k.trim().replace('-', "_");
        if out.insert(key.clone(), v.trim().to_string()).is_some() {
            return Err(CliError::Config(format!("config line {}: duplicate key `{key}`", ln + 1)));
        }
    }
    Ok(out)
}

pub fn read_config_file(path: &Path) -> Result<BTreeMap<String, String>, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
    parse_config_text(&text)
}

/// Resolves each setting from its flag, then the config file, then a
/// default, recording the result.
pub struct Resolver {
    file: BTreeMap<String, String>,
    used: BTreeSet<String>,
    resolved: Map<String, Value>,
}

impl Resolver {
    pub fn new(file: BTreeMap<String, String>) -> Self {
        Self {
            file,
            used: BTreeSet::new(),
            resolved: Map::new(),
        }
    }

    fn file_value<T: FromStr>(&mut self, key: &str) -> Result<Option<T>, CliError>
    where
        T::Err: Display,
    {
        self.used.insert(key.to_string());
        match self.file.get(key) {
            None => Ok(None),
            Some(raw) => raw
                .parse()
                .map(Some)
                .map_err(|e| CliError::Config(format!("config key `{key}`: invalid value `{raw}`: {e}"))),
        }
    }

    pub fn get<T>(&mut self, key: &str, flag: Option<T>, default: T) -> Result<T, CliError>
    where
        T: FromStr + Into<Value> + Clone,
        T::Err: Display,
    {
        let v = match flag {
            Some(v) => {
                self.used.insert(key.to_string());
                v
            }
            None => self.file_value(key)?.unwrap_or(default),
        };
        self.resolved.insert(key.to_string(), v.clone().into());
        Ok(v)
    }

    pub fn get_opt<T>(&mut self, key: &str, flag: Option<T>) -> Result<Option<T>, CliError>
    where
        T: FromStr + Into<Value> + Clone,
        T::Err: Display,
    {
        let v = match flag {
            Some(v) => {
                self.used.insert(key.to_string());
                Some(v)
            }
            None => self.file_value(key)?,
        };
        self.resolved
            .insert(key.to_string(), v.clone().map_or(Value::Null, Into::into));
        Ok(v)
    }

    /// Records a derived value that has no flag of its own.
    pub fn record(&mut self, key: &str, value: Value) {
        self.resolved.insert(key.to_string(), value);
    }

    /// Fails on config-file keys no setting consumed.
    pub fn finish(self) -> Result<Value, CliError> {
        let unknown: Vec<&String> = self.file.keys().filter(|k| !self.used.contains(*k)).collect();
        if !unknown.is_empty() {
            let list: Vec<&str> = unknown.iter().map(|s| s.as_str()).collect();
            return Err(CliError::Config(format!("unknown config keys: {}", list.join(", "))));
        }
        Ok(Value::Object(self.resolved))
    }
}

/// Parses `0.025,0.0375,0.1`; values must be strictly increasing in (0, 1).
pub fn parse_thresholds(text: &str) -> Result<Vec<f64>, CliError> {
    let values = text
        .split(',')
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .map_err(|_| CliError::Config(format!("invalid threshold `{}`", s.trim())))
        })
        .collect::<Result<Vec<f64>, _>>()?;
    if values.is_empty() || values.iter().any(|&p| !(p > 0.0 && p < 1.0)) {
        return Err(CliError::Config("thresholds must lie in (0, 1)".into()));
    }
    if values.windows(2).any(|w| w[0] >= w[1]) {
        return Err(CliError::Config("thresholds must be strictly increasing".into()));
    }
    Ok(values)
}

pub fn parse_list<T: FromStr>(key: &str, text: &str) -> Result<Vec<T>, CliError> {
    text.split(',')
        .map(|s| {
            s.trim()
                .parse()
                .map_err(|_| CliError::Config(format!("`{key}`: invalid entry `{}`", s.trim())))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flag_beats_file_beats_default() {
        let file = parse_config_text("seed = 7\nbootstrap=50 # replicates\n").unwrap();
        let mut r = Resolver::new(file);
        assert_eq!(r.get("seed", Some(9u64), 0).unwrap(), 9);
        assert_eq!(r.get::<u64>("bootstrap", None, 200).unwrap(), 50);
        assert_eq!(r.get::<u64>("folds", None, 5).unwrap(), 5);
        let v = r.finish().unwrap();
        assert_eq!(v["seed"], 9);
        assert_eq!(v["bootstrap"], 50);
    }

    #[test]
    fn unknown_and_malformed_keys() {
        let r = Resolver::new(parse_config_text("colour = red").unwrap());
        assert!(matches!(r.finish(), Err(CliError::Config(_))));
        let mut r = Resolver::new(parse_config_text("seed = x").unwrap());
        assert!(r.get::<u64>("seed", None, 0).is_err());
        assert!(parse_config_text("no equals sign").is_err());
        assert!(parse_config_text("a=1\na=2").is_err());
    }

    #[test]
    fn thresholds() {
        assert_eq!(parse_thresholds("0.025,0.0375,0.1").unwrap(), vec![0.025, 0.0375, 0.1]);
        assert!(parse_thresholds("0.1,0.05").is_err());
        assert!(parse_thresholds("0,0.5").is_err());
        assert!(parse_thresholds("a").is_err());
    }
}
