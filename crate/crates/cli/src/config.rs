//! Layered configuration: defaults, then a flat TOML file, then `SGG_<KEY>`
//! environment variables. Keys are the field names of the target struct.

use std::fs;
use std::path::Path;

use anyhow::{bail, Context as _, Result};
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};

pub const ENV_PREFIX: &str = "SGG_";

pub fn env_var_name(key: &str) -> String {
    format!("{ENV_PREFIX}{}", key.to_ascii_uppercase())
}

/// Parses an override as a TOML value, falling back to a bare string.
fn parse_override(raw: &str) -> Result<Value> {
    match toml::from_str::<toml::Table>(&format!("v = {raw}")) {
        Ok(mut t) => Ok(serde_json::to_value(t.remove("v").expect("key present"))?),
        Err(_) => Ok(Value::String(raw.to_string())),
    }
}

fn set_key(map: &mut Map<String, Value>, key: &str, value: Value, source: &str) -> Result<()> {
    if !map.contains_key(key) {
        let known: Vec<&str> = map.keys().map(String::as_str).collect();
        bail!(crate::Invalid(format!("{source}: unknown key `{key}` (known: {})", known.join(", "))));
    }
    map.insert(key.to_string(), value);
    Ok(())
}

/// Applies the file and environment layers on top of `defaults`.
/// `env` yields `(name, value)` pairs, normally `std::env::vars()`.
pub fn layered<T>(defaults: &T, file: Option<&Path>, env: impl IntoIterator<Item = (String, String)>) -> Result<T>
where
    T: Serialize + DeserializeOwned,
{
    let Value::Object(mut map) = serde_json::to_value(defaults)? else {
        bail!("configuration must serialize to a table");
    };
    if let Some(path) = file {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let table: toml::Table = toml::from_str(&text).map_err(|e| crate::Invalid(format!("{}: {e}", path.display())))?;
        for (k, v) in table {
            set_key(&mut map, &k, serde_json::to_value(v)?, &path.display().to_string())?;
        }
    }
    let keys: Vec<String> = map.keys().cloned().collect();
    let env: Vec<(String, String)> = env.into_iter().filter(|(k, _)| k.starts_with(ENV_PREFIX)).collect();
    for key in keys {
        let name = env_var_name(&key);
        if let Some((_, raw)) = env.iter().find(|(k, _)| *k == name) {
            let value = parse_override(raw)?;
            set_key(&mut map, &key, value, &name)?;
        }
    }
    serde_json::from_value(Value::Object(map)).map_err(|e| crate::Invalid(format!("configuration: {e}")).into())
}
