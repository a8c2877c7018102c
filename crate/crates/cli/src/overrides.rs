//! `--set key=value` overrides applied to a configuration before parsing.

use coalition_core::simulator::ScenarioConfig;
use toml::{Table, Value};

use crate::{exit, Failure};

/// Parse `value` as a TOML literal, falling back to a bare string.
fn literal(value: &str) -> Value {
    format!("v = {value}")
        .parse::<Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(value.to_string()))
}

/// Set `key` (dotted for nested tables) in `table`.
fn assign(table: &mut Table, key: &str, value: Value) -> Result<(), Failure> {
    let mut parts = key.split('.').peekable();
    let mut cur = table;
    while let Some(part) = parts.next() {
        if part.is_empty() {
            return Err(Failure::usage(format!("empty key segment in `{key}`")));
        }
        if parts.peek().is_none() {
            cur.insert(part.to_string(), value);
            return Ok(());
        }
        let next = cur
            .entry(part.to_string())
            .or_insert_with(|| Value::Table(Table::new()));
        cur = match next {
            Value::Table(t) => t,
            _ => return Err(Failure::usage(format!("`{part}` in `{key}` is not a table"))),
        };
    }
    Ok(())
}

/// Base table from `text` with every `key=value` in `sets` applied.
pub fn apply(text: &str, sets: &[String]) -> Result<ScenarioConfig, Failure> {
    let mut table: Table = text.parse().map_err(|e| Failure {
        code: exit::VALIDATION,
        message: format!("configuration: {e}"),
    })?;
    for s in sets {
        let (key, value) = s
            .split_once('=')
            .ok_or_else(|| Failure::usage(format!("override `{s}` is not key=value")))?;
        assign(&mut table, key.trim(), literal(value.trim()))?;
    }
    let config: ScenarioConfig = Value::Table(table).try_into().map_err(|e: toml::de::Error| Failure {
        code: exit::VALIDATION,
        message: format!("configuration: {}", e.message()),
    })?;
    config.validate()?;
    Ok(config)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn literals() {
        assert_eq!(literal("0.05"), Value::Float(0.05));
        assert_eq!(literal("true"), Value::Boolean(true));
        assert_eq!(literal("shapley"), Value::String("shapley".into()));
        assert_eq!(literal("\"x y\""), Value::String("x y".into()));
    }

    #[test]
    fn overrides_replace_and_nest() {
        let cfg = apply(
            "rate = 0.01\n",
            &["rate=0.05".into(), "mechanism=shapley".into(), "tipping=[{year=2050, loss_pct=0.04}]".into()],
        )
        .unwrap();
        assert_eq!(cfg.rate, 0.05);
        assert_eq!(cfg.tipping.len(), 1);
        assert_eq!(cfg.tipping[0].year, 2050);

        let mut t = Table::new();
        assign(&mut t, "a.b", Value::Integer(1)).unwrap();
        assert_eq!(t["a"]["b"], Value::Integer(1));
        assert!(assign(&mut t, "a.b.c", Value::Integer(1)).is_err());
    }

    #[test]
    fn bad_overrides() {
        assert_eq!(apply("", &["rate".into()]).unwrap_err().code, exit::USAGE);
        assert_eq!(apply("", &["no_such_key=1".into()]).unwrap_err().code, exit::VALIDATION);
        assert_eq!(apply("", &["rate=-1".into()]).unwrap_err().code, exit::VALIDATION);
    }
}
