//! Versioned JSON envelopes for model checkpoints and reports.
//!
//! Floats are written in shortest round-trip form, so save/load is lossless.

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};

use crate::error::{Error, Result};

pub fn to_string<T: Serialize>(format: &str, version: u32, body: &T) -> Result<String> {
    let mut obj = Map::new();
    obj.insert("format".into(), Value::from(format));
    obj.insert("version".into(), Value::from(version));
    match serde_json::to_value(body).map_err(|e| Error::Checkpoint(e.to_string()))? {
        Value::Object(fields) => obj.extend(fields),
        other => {
            obj.insert("body".into(), other);
        }
    }
    let mut s = serde_json::to_string_pretty(&Value::Object(obj)).map_err(|e| Error::Checkpoint(e.to_string()))?;
    s.push('\n');
    Ok(s)
}

pub fn from_str<T: DeserializeOwned>(format: &str, version: u32, text: &str) -> Result<T> {
    let value: Value = serde_json::from_str(text).map_err(|e| Error::Parse {
        line: e.line(),
        msg: e.to_string(),
    })?;
    let Value::Object(mut obj) = value else {
        return Err(Error::Checkpoint("expected a JSON object".into()));
    };
    match obj.remove("format") {
        Some(Value::String(f)) if f == format => {}
        other => {
            return Err(Error::Checkpoint(format!(
                "expected format '{format}', found {}",
                other.map_or("none".to_string(), |v| v.to_string())
            )))
        }
    }
    match obj.remove("version").and_then(|v| v.as_u64()) {
        Some(v) if v == u64::from(version) => {}
        other => {
            return Err(Error::Checkpoint(format!(
                "unsupported {format} version {}; this build reads version {version}",
                other.map_or("none".to_string(), |v| v.to_string())
            )))
        }
    }
    let body = match obj.remove("body") {
        Some(b) if obj.is_empty() => b,
        Some(b) => {
            obj.insert("body".into(), b);
            Value::Object(obj)
        }
        None => Value::Object(obj),
    };
    serde_json::from_value(body).map_err(|e| Error::Checkpoint(e.to_string()))
}

pub fn save<T: Serialize>(path: &Path, format: &str, version: u32, body: &T) -> Result<()> {
    fs::write(path, to_string(format, version, body)?).map_err(|e| Error::io(path, e))
}

pub fn load<T: DeserializeOwned>(path: &Path, format: &str, version: u32) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    from_str(format, version, &text)
}
