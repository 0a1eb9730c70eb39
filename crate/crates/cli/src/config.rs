//! Configuration files (TOML or JSON) merged under command-line flags.

use std::path::Path;

use mfjm_core::{Error, Result};
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value;

/// Parses a TOML or JSON document, chosen by file extension.
pub fn read_document(path: &Path) -> Result<Value> {
    let text =
        std::fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    match path.extension().and_then(|e| e.to_str()) {
        Some("json") => Ok(serde_json::from_str(&text)?),
        Some("toml") => {
            let value: toml::Value = toml::from_str(&text)?;
            serde_json::to_value(value).map_err(Error::from)
        }
        _ => Err(Error::Config(format!("{}: expected a .toml or .json file", path.display()))),
    }
}

/// Reads a typed document (TOML or JSON).
pub fn read_typed<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let value = read_document(path)?;
    serde_json::from_value(value).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

/// Overlays the flags that were given on top of the file settings for
/// `command`. The file may be flat or hold one table per command.
pub fn merge<T: Serialize + DeserializeOwned>(flags: &T, file: Option<&Path>, command: &str) -> Result<T> {
    let Some(path) = file else {
        return Ok(serde_json::from_value(serde_json::to_value(flags)?)?);
    };
    let mut base = match read_document(path)? {
        Value::Object(mut map) => match map.remove(command) {
            Some(Value::Object(section)) => section,
            Some(_) => return Err(Error::Config(format!("{}: '{command}' must be a table", path.display()))),
            None => map,
        },
        _ => return Err(Error::Config(format!("{}: expected a table of settings", path.display()))),
    };
    if let Value::Object(given) = serde_json::to_value(flags)? {
        for (key, value) in given {
            if !value.is_null() {
                base.insert(key, value);
            }
        }
    }
    serde_json::from_value(Value::Object(base)).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}
