//! Key-value configuration files. Every subcommand accepts `--config FILE`
//! whose keys mirror its long flag names; a value from the file is used only
//! when the flag is absent on the command line, so flags always win.
//!
//! Syntax: one `key = value` pair per line; blank lines and lines starting
//! with `#` are ignored; whitespace around keys and values is trimmed. Keys
//! the subcommand does not define are rejected.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use crate::errors::CliError;

/// Splits key-value text into ordered `(line, key, value)` triples without
/// interpreting the keys. Duplicate keys are preserved so grammars that
/// allow repetition can consume them in file order.
pub fn parse_kv_lines(text: &str) -> Result<Vec<(usize, String, String)>, String> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(format!("line {}: expected 'key = value'", i + 1));
        };
        let key = key.trim();
        if key.is_empty() {
            return Err(format!("line {}: empty key", i + 1));
        }
        out.push((i + 1, key.to_string(), value.trim().to_string()));
    }
    Ok(out)
}

/// A loaded `--config` file. Commands take the keys they understand and then
/// call [`ConfigFile::finish`], which rejects whatever is left.
pub struct ConfigFile {
    origin: String,
    entries: BTreeMap<String, (usize, String)>,
}

impl ConfigFile {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(Self {
                origin: String::new(),
                entries: BTreeMap::new(),
            });
        };
        let origin = path.display().to_string();
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::io(format!("{origin}: {e}")))?;
        let mut entries = BTreeMap::new();
        for (line, key, value) in
            parse_kv_lines(&text).map_err(|e| CliError::usage(format!("{origin}: {e}")))?
        {
            if entries.insert(key.clone(), (line, value)).is_some() {
                return Err(CliError::usage(format!(
                    "{origin}: line {line}: duplicate key {key:?}"
                )));
            }
        }
        Ok(Self { origin, entries })
    }

    fn take_raw(&mut self, key: &str) -> Option<(usize, String)> {
        self.entries.remove(key)
    }

    /// Consumes `key` and returns `flag` when set, the parsed file value
    /// otherwise. The key is consumed even when the flag wins, so a config
    /// value shadowed by a flag is not reported as unknown.
    pub fn merge<T: FromStr>(
        &mut self,
        flag: Option<T>,
        key: &str,
    ) -> Result<Option<T>, CliError> {
        let file_value = match self.take_raw(key) {
            Some((line, raw)) => Some(T::from_str(&raw).map_err(|_| {
                CliError::usage(format!(
                    "{}: line {line}: cannot parse {raw:?} as a value for {key:?}",
                    self.origin
                ))
            })?),
            None => None,
        };
        Ok(flag.or(file_value))
    }

    /// Rejects keys no merge call consumed, naming them.
    pub fn finish(self) -> Result<(), CliError> {
        if self.entries.is_empty() {
            return Ok(());
        }
        let keys: Vec<String> = self.entries.keys().map(|k| format!("{k:?}")).collect();
        Err(CliError::usage(format!(
            "{}: unknown keys: {}",
            self.origin,
            keys.join(", ")
        )))
    }
}

/// Fails with a usage error when a value is missing after flag and config
/// merging.
pub fn require<T>(value: Option<T>, name: &str) -> Result<T, CliError> {
    value.ok_or_else(|| {
        CliError::usage(format!(
            "missing required --{name} (flag or config key {name:?})"
        ))
    })
}

/// Comma-separated list of values, e.g. `--alphas 0,1,2` or a config line
/// `alphas = 0,1,2`.
pub fn parse_list<T: FromStr>(raw: &str, what: &str) -> Result<Vec<T>, CliError> {
    raw.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            T::from_str(s).map_err(|_| CliError::usage(format!("cannot parse {s:?} as {what}")))
        })
        .collect()
}
