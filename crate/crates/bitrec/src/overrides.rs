//! `key=value` overrides on serialisable configuration, with dotted keys for
//! nested fields.

use serde::de::DeserializeOwned;
use serde::Serialize;

/// Splits `key=value`.
pub fn parse_pair(s: &str) -> Result<(String, String), String> {
    match s.split_once('=') {
        Some((k, v)) if !k.trim().is_empty() => Ok((k.trim().to_owned(), v.trim().to_owned())),
        _ => Err(format!("expected key=value, got `{s}`")),
    }
}

/// Returns `base` with each override applied. Values are parsed as JSON and
/// taken as a bare string when that fails. Unknown keys are errors.
pub fn apply<T: Serialize + DeserializeOwned>(base: &T, pairs: &[(String, String)]) -> Result<T, String> {
    let mut v = serde_json::to_value(base).map_err(|e| e.to_string())?;
    for (key, raw) in pairs {
        let parsed = serde_json::from_str(raw).unwrap_or_else(|_| serde_json::Value::String(raw.clone()));
        let mut slot = &mut v;
        for part in key.split('.') {
            slot = match slot {
                serde_json::Value::Object(map) => {
                    map.get_mut(part).ok_or_else(|| format!("unknown configuration key `{key}`"))?
                }
                serde_json::Value::Array(items) => part
                    .parse::<usize>()
                    .ok()
                    .and_then(|i| items.get_mut(i))
                    .ok_or_else(|| format!("bad index in configuration key `{key}`"))?,
                _ => return Err(format!("configuration key `{key}` goes below a plain value")),
            };
        }
        *slot = parsed;
    }
    serde_json::from_value(v).map_err(|e| e.to_string())
}
