//! Loading TOML configs into typed sections with strict key checking.

use std::collections::BTreeSet;
use std::path::Path;

use coexist_core::error::{config as config_error, Error};
use serde::de::DeserializeOwned;
use serde::Serialize;
use toml::{Table, Value};

/// The file's text and its parsed table.
pub fn read_table(path: &Path) -> Result<(String, Table), Error> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| config_error(format!("cannot read {}: {e}", path.display())))?;
    let table = text
        .parse::<Table>()
        .map_err(|e| config_error(format!("{}: {e}", path.display())))?;
    Ok((text, table))
}

/// Deserialize `table` into `T`, failing with every key that `T` does not
/// use. A key counts as used when it survives a round trip through `T`.
pub fn typed<T: DeserializeOwned + Serialize>(table: &Table) -> Result<T, Error> {
    let value: T = Value::Table(table.clone())
        .try_into()
        .map_err(|e: toml::de::Error| config_error(e.message().to_string()))?;
    let echo = Value::try_from(&value).map_err(|e| config_error(e.to_string()))?;
    let mut unknown = BTreeSet::new();
    collect_unknown(&Value::Table(table.clone()), &echo, "", &mut unknown);
    if !unknown.is_empty() {
        let list: Vec<String> = unknown.into_iter().collect();
        return Err(config_error(format!("unknown keys: {}", list.join(", "))));
    }
    Ok(value)
}

fn collect_unknown(input: &Value, echo: &Value, prefix: &str, out: &mut BTreeSet<String>) {
    match (input, echo) {
        (Value::Table(a), Value::Table(b)) => {
            for (k, v) in a {
                let path = if prefix.is_empty() {
                    k.clone()
                } else {
                    format!("{prefix}.{k}")
                };
                match b.get(k) {
                    Some(w) => collect_unknown(v, w, &path, out),
                    None => {
                        out.insert(path);
                    }
                }
            }
        }
        (Value::Array(a), Value::Array(b)) => {
            for (i, (v, w)) in a.iter().zip(b).enumerate() {
                collect_unknown(v, w, &format!("{prefix}[{i}]"), out);
            }
        }
        _ => {}
    }
}

/// Replace the number at a dotted path. Integers stay integers when `x`
/// is integral.
pub fn set_number(table: &mut Table, path: &str, x: f64) -> Result<(), Error> {
    let mut parts: Vec<&str> = path.split('.').collect();
    let last = parts
        .pop()
        .filter(|s| !s.is_empty())
        .ok_or_else(|| config_error("empty sweep parameter path"))?;
    let mut cur = table;
    for p in parts {
        cur = cur
            .get_mut(p)
            .and_then(Value::as_table_mut)
            .ok_or_else(|| config_error(format!("sweep parameter {path}: no section {p}")))?;
    }
    let slot = cur.get_mut(last).ok_or_else(|| {
        config_error(format!(
            "sweep parameter {path} is not set in the base config"
        ))
    })?;
    *slot = match slot {
        Value::Integer(_) if x.fract() == 0.0 && x.abs() < i64::MAX as f64 => {
            Value::Integer(x as i64)
        }
        Value::Integer(_) | Value::Float(_) => Value::Float(x),
        _ => {
            return Err(config_error(format!(
                "sweep parameter {path} is not numeric"
            )))
        }
    };
    Ok(())
}
