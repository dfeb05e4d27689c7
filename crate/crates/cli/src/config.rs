//! Run configuration: a TOML plan file, with command-line overrides applied on top.

use std::path::Path;

use prefixlab::conditioning::AccuracyBand;
use prefixlab::experiment::ExperimentPlan;
use toml::{Table, Value};

use crate::CliError;

/// Loads `path` (or the built-in defaults) and applies `overrides` in order.
/// Each override is a dotted key and a TOML value, e.g. `grpo.learning_rate=30`.
pub fn resolve(path: Option<&Path>, overrides: &[(String, String)]) -> Result<ExperimentPlan, CliError> {
    let mut table = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| CliError::config(format!("cannot read config {}: {e}", p.display())))?;
            text.parse::<Table>().map_err(|e| CliError::config(format!("config {}: {}", p.display(), e.message())))?
        }
        None => Table::new(),
    };
    for (key, value) in overrides {
        set_path(&mut table, key, parse_value(value))?;
    }
    let text = toml::to_string(&table).map_err(|e| CliError::config(e.to_string()))?;
    ExperimentPlan::from_toml(&text).map_err(|e| CliError::config(e.to_string()))
}

fn parse_value(raw: &str) -> Value {
    match format!("v = {raw}").parse::<Table>() {
        Ok(mut t) => t.remove("v").expect("key present"),
        Err(_) => Value::String(raw.to_string()),
    }
}

fn set_path(table: &mut Table, key: &str, value: Value) -> Result<(), CliError> {
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(CliError::config(format!("illegal override key {key:?}")));
    }
    let mut cur = table;
    for part in &parts[..parts.len() - 1] {
        let entry = cur.entry(part.to_string()).or_insert_with(|| Value::Table(Table::new()));
        cur = match entry {
            Value::Table(t) => t,
            _ => return Err(CliError::config(format!("override {key:?}: {part:?} is not a section"))),
        };
    }
    cur.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

/// Parses `--key value` style `key=value` strings.
pub fn split_assignment(s: &str) -> Result<(String, String), String> {
    s.split_once('=')
        .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
        .ok_or_else(|| format!("expected key=value, got {s:?}"))
}

/// `c/n` for an exact count, or `low..high` with each end a decimal or `c/n`.
pub fn parse_band(s: &str) -> Result<AccuracyBand, CliError> {
    let bad = || CliError::config(format!("cannot parse band {s:?}; expected c/n or low..high"));
    let value = |t: &str| -> Result<f64, CliError> {
        match t.split_once('/') {
            Some((c, n)) => {
                let c: f64 = c.trim().parse().map_err(|_| bad())?;
                let n: f64 = n.trim().parse().map_err(|_| bad())?;
                if n <= 0.0 {
                    return Err(bad());
                }
                Ok(c / n)
            }
            None => t.trim().parse().map_err(|_| bad()),
        }
    };
    let (low, high) = match s.split_once("..") {
        Some((a, b)) => (value(a)?, value(b)?),
        None => {
            let v = value(s)?;
            (v, v)
        }
    };
    if !(0.0..=1.0).contains(&low) || !(0.0..=1.0).contains(&high) || low > high {
        return Err(bad());
    }
    Ok(AccuracyBand::new(low, high))
}

pub fn band_overrides(prefix: &str, band: AccuracyBand) -> [(String, String); 2] {
    [(format!("{prefix}.low"), format!("{:?}", band.low)), (format!("{prefix}.high"), format!("{:?}", band.high))]
}
