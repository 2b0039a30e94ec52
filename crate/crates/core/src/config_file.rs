//! Strict TOML loading for run configuration files.

use serde::de::DeserializeOwned;

use crate::error::{Error, Result};

/// Deserializes `table`, failing with every unrecognized key path listed.
pub fn from_table<T: DeserializeOwned>(table: toml::Table) -> Result<T> {
    let mut unknown = Vec::new();
    let parsed: std::result::Result<T, _> =
        serde_ignored::deserialize(toml::Value::Table(table), |path| {
            unknown.push(path.to_string())
        });
    if !unknown.is_empty() {
        return Err(Error::InvalidInput(format!(
            "unknown config keys: {}",
            unknown.join(", ")
        )));
    }
    parsed.map_err(|e| Error::InvalidInput(format!("config: {e}")))
}

pub fn parse_table(text: &str) -> Result<toml::Table> {
    text.parse()
        .map_err(|e: toml::de::Error| Error::InvalidInput(format!("config: {e}")))
}

/// Parses a TOML document into `T`, rejecting unknown keys.
pub fn from_toml_str<T: DeserializeOwned>(text: &str) -> Result<T> {
    from_table(parse_table(text)?)
}
