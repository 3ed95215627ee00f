use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use super::CliError;
use crate::data::parse_key_values;

/// Key prefixes a manifest carries besides configuration; ignored on input so a
/// manifest can be passed straight back as `--config`.
const PASSIVE_PREFIXES: [&str; 3] = ["run.", "input.", "artifact."];

/// Resolves each setting as flag > config file > default and remembers the
/// outcome for the run manifest.
pub struct Resolver {
    file: BTreeMap<String, String>,
    used: BTreeSet<String>,
    resolved: Vec<(String, String)>,
}

fn parse<T: FromStr>(key: &str, raw: &str) -> Result<T, CliError> {
    raw.parse()
        .map_err(|_| CliError::Usage(format!("config value for {key} is invalid: {raw:?}")))
}

impl Resolver {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let file = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| {
                    CliError::Usage(format!("cannot read config {}: {e}", p.display()))
                })?;
                parse_key_values(&text).map_err(|e| CliError::Usage(e.to_string()))?
            }
            None => BTreeMap::new(),
        };
        Ok(Self {
            file,
            used: BTreeSet::new(),
            resolved: Vec::new(),
        })
    }

    fn file_value(&mut self, key: &str) -> Option<String> {
        self.used.insert(key.to_string());
        self.file.get(key).cloned()
    }

    pub fn record(&mut self, key: &str, value: impl Display) {
        self.resolved.push((key.to_string(), value.to_string()));
    }

    /// Flag or config value, without a default and without recording it.
    pub fn optional<T: FromStr>(
        &mut self,
        key: &str,
        flag: Option<T>,
    ) -> Result<Option<T>, CliError> {
        let file = self.file_value(key);
        match flag {
            Some(v) => Ok(Some(v)),
            None => file.map(|raw| parse(key, &raw)).transpose(),
        }
    }

    pub fn value<T: FromStr + Display>(
        &mut self,
        key: &str,
        flag: Option<T>,
        default: T,
    ) -> Result<T, CliError> {
        let v = self.optional(key, flag)?.unwrap_or(default);
        self.record(key, &v);
        Ok(v)
    }

    pub fn required<T: FromStr + Display>(
        &mut self,
        key: &str,
        flag: Option<T>,
    ) -> Result<T, CliError> {
        let v = self
            .optional(key, flag)?
            .ok_or_else(|| CliError::Usage(format!("missing required setting --{key}")))?;
        self.record(key, &v);
        Ok(v)
    }

    /// Comma-separated list setting.
    pub fn list<T: FromStr + Display>(
        &mut self,
        key: &str,
        flag: Option<Vec<T>>,
        default: Vec<T>,
    ) -> Result<Vec<T>, CliError> {
        let file = self.file_value(key);
        let v = match (flag, file) {
            (Some(v), _) => v,
            (None, Some(raw)) => raw
                .split(',')
                .map(|s| parse(key, s.trim()))
                .collect::<Result<_, _>>()?,
            (None, None) => default,
        };
        let joined: Vec<String> = v.iter().map(ToString::to_string).collect();
        self.record(key, joined.join(","));
        Ok(v)
    }

    /// Resolved `(key, value)` pairs; fails on config keys no setting consumed.
    pub fn finish(self) -> Result<Vec<(String, String)>, CliError> {
        let unknown: Vec<&String> = self
            .file
            .keys()
            .filter(|k| !self.used.contains(*k))
            .filter(|k| !PASSIVE_PREFIXES.iter().any(|p| k.starts_with(p)))
            .collect();
        if !unknown.is_empty() {
            return Err(CliError::Usage(format!("unknown config keys: {unknown:?}")));
        }
        Ok(self.resolved)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn with_file(text: &str) -> Resolver {
        Resolver {
            file: parse_key_values(text).unwrap(),
            used: BTreeSet::new(),
            resolved: Vec::new(),
        }
    }

    #[test]
    fn precedence_flag_then_file_then_default() {
        let mut r = with_file("lr=0.01\nd=16\n");
        assert_eq!(r.value("lr", Some(0.5), 1e-3).unwrap(), 0.5);
        assert_eq!(r.value("d", None, 64usize).unwrap(), 16);
        assert_eq!(r.value("blocks", None, 2usize).unwrap(), 2);
        let resolved = r.finish().unwrap();
        assert_eq!(
            resolved,
            vec![
                ("lr".to_string(), "0.5".to_string()),
                ("d".to_string(), "16".to_string()),
                ("blocks".to_string(), "2".to_string())
            ]
        );
    }

    #[test]
    fn unknown_and_malformed_keys() {
        let mut r = with_file("d=abc\n");
        assert!(matches!(
            r.value("d", None, 1usize),
            Err(CliError::Usage(_))
        ));
        let r = with_file("typo=1\nrun.command=train\n");
        assert!(r.finish().is_err());
        let r = with_file("run.command=train\ninput.x.sha256=ab\n");
        assert!(r.finish().is_ok());
    }

    #[test]
    fn lists_and_required() {
        let mut r = with_file("k=5, 10\n");
        assert_eq!(r.list("k", None, vec![10usize]).unwrap(), vec![5, 10]);
        assert!(r.required::<String>("input", None).is_err());
    }
}
