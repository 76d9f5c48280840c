//! Flat `key = value` config files. Keys not known to the command are rejected.

use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{config_err, CliResult};

pub const DEFAULT_SEED: u64 = 1;
pub const DEFAULT_CACHE_DIR: &str = "fri-cache";

/// Keys shared by every command.
#[derive(Clone, Debug, PartialEq)]
pub struct Common {
    pub seed: u64,
    pub cache_dir: PathBuf,
}

pub fn read_table(path: Option<&Path>) -> CliResult<toml::Table> {
    let Some(path) = path else {
        return Ok(toml::Table::new());
    };
    let text = std::fs::read_to_string(path).map_err(|e| config_err(format!("cannot read {}: {e}", path.display())))?;
    let table: toml::Table = text.parse().map_err(|e| config_err(format!("{}: {e}", path.display())))?;
    if let Some((k, _)) = table.iter().find(|(_, v)| v.is_table()) {
        return Err(config_err(format!("sections are not supported (key `{k}`); use flat keys")));
    }
    Ok(table)
}

/// Removes the shared keys from `table`; `seed_flag` wins over the file.
pub fn split_common(table: &mut toml::Table, seed_flag: Option<u64>) -> CliResult<Common> {
    let seed = match table.remove("seed") {
        Some(toml::Value::Integer(s)) if s >= 0 => s as u64,
        Some(v) => return Err(config_err(format!("seed must be a nonnegative integer, got {v}"))),
        None => DEFAULT_SEED,
    };
    let cache_dir = match table.remove("cache_dir") {
        Some(toml::Value::String(s)) => PathBuf::from(s),
        Some(v) => return Err(config_err(format!("cache_dir must be a string, got {v}"))),
        None => PathBuf::from(DEFAULT_CACHE_DIR),
    };
    Ok(Common { seed: seed_flag.unwrap_or(seed), cache_dir })
}

pub fn parse<T: DeserializeOwned>(table: toml::Table) -> CliResult<T> {
    toml::Value::Table(table).try_into().map_err(|e: toml::de::Error| config_err(e.message().to_string()))
}

/// The full parameter record, defaults included, as a config file that reproduces the run.
pub fn resolved<T: Serialize>(params: &T, common: &Common) -> CliResult<toml::Table> {
    let mut t = match toml::Value::try_from(params).map_err(|e| config_err(e.to_string()))? {
        toml::Value::Table(t) => t,
        _ => return Err(config_err("parameters must serialize to a table")),
    };
    t.insert("seed".into(), toml::Value::Integer(common.seed as i64));
    t.insert("cache_dir".into(), toml::Value::String(common.cache_dir.display().to_string()));
    Ok(t)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flag_seed_overrides_file() {
        let mut t: toml::Table = "seed = 5\ncache_dir = \"c\"\nd = 3".parse().unwrap();
        let c = split_common(&mut t, Some(9)).unwrap();
        assert_eq!(c, Common { seed: 9, cache_dir: PathBuf::from("c") });
        assert_eq!(t.len(), 1);
        let mut t: toml::Table = "seed = -1".parse().unwrap();
        assert!(split_common(&mut t, None).is_err());
    }
}
