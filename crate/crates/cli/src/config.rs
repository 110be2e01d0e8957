//! Settings resolution: defaults, then the TOML file, then command-line flags.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};

use crate::error::CliError;

fn non_null(value: Value) -> Map<String, Value> {
    match value {
        Value::Object(map) => map.into_iter().filter(|(_, v)| !v.is_null()).collect(),
        _ => Map::new(),
    }
}

/// Reads a TOML settings file for a subcommand whose settings type is `T`.
/// Keys that `T` does not declare are rejected.
fn read_file<T: DeserializeOwned>(path: &Path) -> Result<Map<String, Value>, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    let table: toml::Table =
        toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    let value = serde_json::to_value(table).map_err(|e| CliError::Config(e.to_string()))?;
    serde_json::from_value::<T>(value.clone()).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    Ok(non_null(value))
}

/// Output locations; they do not change results, so they stay out of the
/// hashed config.
const OUTPUT_KEYS: [&str; 2] = ["out", "out-dir"];

/// Settings after merging, plus the JSON form that gets hashed into outputs.
pub struct Resolved<T> {
    pub settings: T,
    pub config: Value,
}

/// Layers `file` and then `flags` over the defaults returned by `defaults`,
/// which sees the merged user settings so it can depend on them.
pub fn resolve<T>(flags: &T, file: Option<&Path>, defaults: impl Fn(&Map<String, Value>) -> Value) -> Result<Resolved<T>, CliError>
where
    T: Serialize + DeserializeOwned,
{
    let mut user = match file {
        Some(path) => read_file::<T>(path)?,
        None => Map::new(),
    };
    let flag_values = non_null(serde_json::to_value(flags).map_err(|e| CliError::Config(e.to_string()))?);
    user.extend(flag_values);
    let mut merged = non_null(defaults(&user));
    merged.extend(user);
    let settings = serde_json::from_value(Value::Object(merged.clone())).map_err(|e| CliError::Config(e.to_string()))?;
    merged.retain(|k, _| !OUTPUT_KEYS.contains(&k.as_str()));
    Ok(Resolved { settings, config: Value::Object(merged) })
}

/// Every `*seed` entry of a resolved config.
pub fn seeds_of(config: &Value) -> BTreeMap<String, u64> {
    config
        .as_object()
        .into_iter()
        .flatten()
        .filter(|(k, _)| k.ends_with("seed"))
        .filter_map(|(k, v)| Some((k.clone(), v.as_u64()?)))
        .collect()
}

pub fn required<T: Clone>(value: &Option<T>, key: &str) -> Result<T, CliError> {
    value.clone().ok_or_else(|| CliError::Config(format!("missing required setting `{key}`")))
}
