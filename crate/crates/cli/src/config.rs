//! Flat `key = value` config files. Flags win over file values, file values
//! win over built-in defaults, and every resolved value is echoed in the report.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use crate::CliError;

/// Every key a config file may set. Keys are the long flag names with `_` for `-`.
pub const KNOWN_KEYS: &[&str] = &[
    "seed",
    "format",
    "out",
    "sizes",
    "len",
    "chunk",
    "heads",
    "groups",
    "head_dim",
    "reps",
    "shape",
    "candidates",
    "l1_bytes",
    "l2_bytes",
    "top",
    "chunks",
    "lanes",
    "bw",
    "required_bw",
    "clock_hz",
    "ct_count",
    "workers",
    "timeline",
];

#[derive(Clone, Debug, Default)]
pub struct Params {
    file: BTreeMap<String, String>,
    resolved: BTreeMap<String, String>,
}

impl Params {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let mut file = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap().trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                CliError::Usage(format!("config line {}: expected `key = value`", i + 1))
            })?;
            let k = k.trim().replace('-', "_");
            if !KNOWN_KEYS.contains(&k.as_str()) {
                return Err(CliError::Usage(format!(
                    "config line {}: unknown key `{k}`",
                    i + 1
                )));
            }
            file.insert(k, v.trim().to_string());
        }
        Ok(Self {
            file,
            resolved: BTreeMap::new(),
        })
    }

    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        match path {
            None => Ok(Self::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| {
                    CliError::Usage(format!("cannot read config {}: {e}", p.display()))
                })?;
                Self::parse(&text)
            }
        }
    }

    /// Raw file value, without recording it.
    pub fn file_value(&self, key: &str) -> Option<&str> {
        self.file.get(key).map(String::as_str)
    }

    /// Resolves `key` from the flag, then the file, then `default`.
    pub fn get<T>(&mut self, key: &str, flag: Option<T>, default: T) -> Result<T, CliError>
    where
        T: FromStr + ToString,
    {
        let v = self.get_opt(key, flag)?.unwrap_or(default);
        self.resolved.insert(key.to_string(), v.to_string());
        Ok(v)
    }

    pub fn get_opt<T>(&mut self, key: &str, flag: Option<T>) -> Result<Option<T>, CliError>
    where
        T: FromStr + ToString,
    {
        let v = match flag {
            Some(v) => Some(v),
            None => match self.file.get(key) {
                Some(s) => Some(s.parse::<T>().map_err(|_| {
                    CliError::Usage(format!("config key `{key}`: cannot parse `{s}`"))
                })?),
                None => None,
            },
        };
        if let Some(v) = &v {
            self.resolved.insert(key.to_string(), v.to_string());
        }
        Ok(v)
    }

    /// Resolves a comma-separated shape that must have as many positive
    /// dimensions as `default`.
    pub fn dims(
        &mut self,
        key: &str,
        flag: Option<Dims>,
        default: &[usize],
    ) -> Result<Vec<usize>, CliError> {
        let dims = self.get(key, flag, Dims(default.to_vec()))?.0;
        if dims.len() != default.len() || dims.contains(&0) {
            return Err(CliError::Usage(format!(
                "{key} needs {} positive dimensions",
                default.len()
            )));
        }
        Ok(dims)
    }

    /// Records a value that was not looked up through `get`.
    pub fn echo(&mut self, key: &str, value: impl ToString) {
        self.resolved.insert(key.to_string(), value.to_string());
    }

    pub fn into_echo(self) -> BTreeMap<String, String> {
        self.resolved
    }
}

/// Comma-separated dimensions such as `256,256,256`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Dims(pub Vec<usize>);

impl FromStr for Dims {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        s.split(',')
            .map(|p| {
                p.trim()
                    .parse::<usize>()
                    .map_err(|_| format!("bad dimension `{p}`"))
            })
            .collect::<Result<Vec<_>, _>>()
            .map(Dims)
    }
}

impl std::fmt::Display for Dims {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let parts: Vec<String> = self.0.iter().map(usize::to_string).collect();
        f.write_str(&parts.join(","))
    }
}
