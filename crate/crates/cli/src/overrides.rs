//! `--path.to-field value` overrides applied to a JSON config document.

use anyhow::{bail, Context, Result};
use serde_json::{Map, Value};

/// Parses `--a.b-c value` and `--a.b-c=value` pairs.
pub fn parse(args: &[String]) -> Result<Vec<(Vec<String>, Value)>> {
    let mut out = Vec::new();
    let mut it = args.iter();
    while let Some(arg) = it.next() {
        let Some(flag) = arg.strip_prefix("--") else {
            bail!("unexpected argument {arg:?}; overrides look like --field.path value");
        };
        let (key, raw) = match flag.split_once('=') {
            Some((k, v)) => (k.to_string(), v.to_string()),
            None => {
                let v = it.next().with_context(|| format!("--{flag} needs a value"))?;
                (flag.to_string(), v.clone())
            }
        };
        if key.is_empty() {
            bail!("empty override key in {arg:?}");
        }
        let path = key.split('.').map(|p| p.replace('-', "_")).collect();
        out.push((path, parse_value(&raw)));
    }
    Ok(out)
}

fn parse_value(raw: &str) -> Value {
    serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()))
}

pub fn apply(doc: &mut Value, overrides: &[(Vec<String>, Value)]) -> Result<()> {
    for (path, value) in overrides {
        let mut node = &mut *doc;
        for (i, key) in path.iter().enumerate() {
            if node.is_null() {
                *node = Value::Object(Map::new());
            }
            let Value::Object(map) = node else {
                bail!(
                    "cannot set {}: {} is not an object",
                    path.join("."),
                    path[..i].join(".")
                );
            };
            if i + 1 == path.len() {
                map.insert(key.clone(), value.clone());
                break;
            }
            node = map.entry(key.clone()).or_insert(Value::Null);
        }
    }
    Ok(())
}
