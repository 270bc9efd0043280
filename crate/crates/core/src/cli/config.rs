//! Flat `key = value` configuration files. `#` starts a comment; blank lines
//! are ignored; a repeated key keeps its last value.

use std::collections::BTreeMap;
use std::path::Path;

use super::CliError;

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ConfigFile {
    name: String,
    /// Value and 1-based line number.
    values: BTreeMap<String, (String, usize)>,
}

impl ConfigFile {
    pub fn read(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Input(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn parse(text: &str, name: &str) -> Result<Self, CliError> {
        let mut values = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                CliError::Input(format!("{name}:{}: expected key = value", i + 1))
            })?;
            let key = key.trim().replace('-', "_");
            if key.is_empty() {
                return Err(CliError::Input(format!("{name}:{}: empty key", i + 1)));
            }
            values.insert(key, (value.trim().to_owned(), i + 1));
        }
        Ok(ConfigFile {
            name: name.to_owned(),
            values,
        })
    }

    /// Removes and parses the first present key among `aliases`.
    pub fn take<T, F>(&mut self, aliases: &[&str], parse: F) -> Result<Option<T>, CliError>
    where
        F: Fn(&str) -> Result<T, String>,
    {
        let mut found = None;
        for key in aliases {
            if let Some(v) = self.values.remove(*key) {
                found.get_or_insert(v);
            }
        }
        match found {
            None => Ok(None),
            Some((value, line)) => parse(&value)
                .map(Some)
                .map_err(|e| CliError::Input(format!("{}:{line}: {}: {e}", self.name, aliases[0]))),
        }
    }

    /// Errors on the first key no `take` consumed.
    pub fn finish(self) -> Result<(), CliError> {
        match self.values.into_iter().min_by_key(|(_, (_, line))| *line) {
            Some((key, (_, line))) => Err(CliError::Input(format!("{}:{line}: unknown key {key:?}", self.name))),
            None => Ok(()),
        }
    }
}

pub fn parse_num<T: std::str::FromStr>(s: &str) -> Result<T, String>
where
    T::Err: std::fmt::Display,
{
    s.parse::<T>().map_err(|e| format!("{s:?}: {e}"))
}
