//! Experiment configuration files.
//!
//! One `key = value` pair per line; `#` starts a comment. Values are numbers,
//! `true`/`false`, `none`, bare words, or lists written `[a, b, c]`.

use serde::de::DeserializeOwned;
use serde_json::{Map, Value};

use crate::error::CliError;

fn scalar(tok: &str) -> Value {
    let t = tok.trim();
    match t {
        "true" => Value::Bool(true),
        "false" => Value::Bool(false),
        "none" | "null" => Value::Null,
        _ => {
            if let Ok(i) = t.parse::<u64>() {
                return Value::from(i);
            }
            match t.parse::<f64>() {
                Ok(v) if v.is_finite() => Value::from(v),
                _ => Value::String(t.trim_matches('"').to_string()),
            }
        }
    }
}

pub fn parse(text: &str) -> Result<Map<String, Value>, CliError> {
    let mut out = Map::new();
    for (ln, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("config line {}: expected key = value", ln + 1)))?;
        let key = key.trim();
        let value = value.trim();
        let v = if let Some(inner) = value.strip_prefix('[').and_then(|s| s.strip_suffix(']')) {
            Value::Array(inner.split(',').map(str::trim).filter(|s| !s.is_empty()).map(scalar).collect())
        } else {
            scalar(value)
        };
        if out.insert(key.to_string(), v).is_some() {
            return Err(CliError::Usage(format!("config line {}: duplicate key {key:?}", ln + 1)));
        }
    }
    Ok(out)
}

/// Deserialize a config, unknown keys rejected by the target type.
pub fn load<T: DeserializeOwned>(text: &str) -> Result<T, CliError> {
    let map = parse(text)?;
    serde_json::from_value(Value::Object(map)).map_err(|e| CliError::Usage(format!("config: {e}")))
}
