//! Flat key=value settings file plus the flag/file/default precedence
//! logic. Every resolved value and where it came from ends up in the run
//! manifest, so a rerun never has to guess which defaults applied.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use crate::error::{CliError, CliResult};

/// Union of keys any subcommand understands. One shared file can drive
/// several commands; a key outside this list is a typo, not a setting.
const KNOWN_KEYS: &[&str] = &[
    "kind",
    "classes",
    "per-class",
    "channels",
    "height",
    "width",
    "margin",
    "seed",
    "epochs",
    "batch",
    "lr",
    "momentum",
    "embed-dim",
    "max-len",
    "filters",
    "filter-widths",
    "epsilon",
    "lambda",
    "eta",
    "iters",
    "target-mode",
    "trigger-size",
    "trigger-fill",
    "trigger-token",
    "target-label",
    "epsilons",
    "lambdas",
];

pub fn load(path: &Path) -> CliResult<BTreeMap<String, String>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Usage(format!("{}: {}", path.display(), e)))?;
    let mut map = BTreeMap::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            CliError::Usage(format!(
                "{}:{}: expected key=value, got {:?}",
                path.display(),
                lineno + 1,
                raw
            ))
        })?;
        let key = key.trim();
        if !KNOWN_KEYS.contains(&key) {
            return Err(CliError::Usage(format!(
                "{}:{}: unknown setting {:?}",
                path.display(),
                lineno + 1,
                key
            )));
        }
        map.insert(key.to_string(), value.trim().to_string());
    }
    Ok(map)
}

/// Merges one setting at a time and remembers the outcome. `record` holds
/// the final values, `sources` whether each came from a flag, the file, or
/// a default.
pub struct Resolver {
    file: BTreeMap<String, String>,
    pub record: BTreeMap<String, String>,
    pub sources: BTreeMap<String, String>,
}

impl Resolver {
    pub fn new(config_path: Option<&Path>) -> CliResult<Self> {
        let file = match config_path {
            Some(p) => load(p)?,
            None => BTreeMap::new(),
        };
        Ok(Resolver {
            file,
            record: BTreeMap::new(),
            sources: BTreeMap::new(),
        })
    }

    fn note(&mut self, key: &str, value: String, source: &str) {
        self.record.insert(key.to_string(), value);
        self.sources.insert(key.to_string(), source.to_string());
    }

    fn parse_file<T: FromStr>(&self, key: &str, raw: &str) -> CliResult<T> {
        raw.parse().map_err(|_| {
            CliError::Usage(format!("config {key}={raw:?} is not a valid {key}"))
        })
    }

    /// flag > file > default.
    pub fn get<T: FromStr + Display + Clone>(
        &mut self,
        flag: Option<T>,
        key: &str,
        default: T,
    ) -> CliResult<T> {
        if let Some(v) = flag {
            self.note(key, v.to_string(), "flag");
            return Ok(v);
        }
        if let Some(raw) = self.file.get(key).cloned() {
            let v: T = self.parse_file(key, &raw)?;
            self.note(key, v.to_string(), "file");
            return Ok(v);
        }
        self.note(key, default.to_string(), "default");
        Ok(default)
    }

    /// flag > file, no default: absence is a usage error.
    pub fn get_required<T: FromStr + Display + Clone>(
        &mut self,
        flag: Option<T>,
        key: &str,
    ) -> CliResult<T> {
        if let Some(v) = flag {
            self.note(key, v.to_string(), "flag");
            return Ok(v);
        }
        if let Some(raw) = self.file.get(key).cloned() {
            let v: T = self.parse_file(key, &raw)?;
            self.note(key, v.to_string(), "file");
            return Ok(v);
        }
        Err(CliError::Usage(format!(
            "missing required setting --{key} (flag or config file)"
        )))
    }

    /// Like get, but the value stays a string and is parsed by the caller
    /// (epsilon with its "inf" spelling, target-mode, list-valued keys).
    pub fn get_str(&mut self, flag: Option<String>, key: &str, default: &str) -> String {
        if let Some(v) = flag {
            self.note(key, v.clone(), "flag");
            return v;
        }
        if let Some(raw) = self.file.get(key).cloned() {
            self.note(key, raw.clone(), "file");
            return raw;
        }
        self.note(key, default.to_string(), "default");
        default.to_string()
    }

    pub fn get_str_opt(&mut self, flag: Option<String>, key: &str) -> Option<String> {
        if let Some(v) = flag {
            self.note(key, v.clone(), "flag");
            return Some(v);
        }
        if let Some(raw) = self.file.get(key).cloned() {
            self.note(key, raw.clone(), "file");
            return Some(raw);
        }
        None
    }
}
