//! Effective configuration: defaults, then `RUBIKPP_SEED`, then the config
//! file, then `--set key=value` overrides, then `--seed`.

use std::fs;
use std::path::Path;

use anyhow::{anyhow, Context, Result};
use rubikpp::pipeline::ExperimentConfig;
use toml::{Table, Value};

use crate::UsageError;

pub const SEED_ENV: &str = "RUBIKPP_SEED";

fn merge(base: &mut Table, top: Table) {
    for (k, v) in top {
        match (base.get_mut(&k), v) {
            (Some(Value::Table(b)), Value::Table(t)) => merge(b, t),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

/// Parse an override value as a TOML literal, falling back to a bare string.
fn parse_value(raw: &str) -> Value {
    match toml::from_str::<Table>(&format!("v = {raw}")) {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| Value::String(raw.to_string())),
        Err(_) => Value::String(raw.to_string()),
    }
}

/// Set `dotted.key` in `table`. Intermediate tables must already exist so
/// that typos are reported instead of silently creating sections.
pub fn apply_override(table: &mut Table, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| UsageError(format!("override {assignment:?} is not key=value")))?;
    let parts: Vec<&str> = key.trim().split('.').collect();
    let (last, path) = parts.split_last().expect("split yields one part");
    let mut cur = table;
    for p in path {
        cur = match cur.get_mut(*p) {
            Some(Value::Table(t)) => t,
            _ => return Err(UsageError(format!("unknown config section {p:?} in {key:?}")).into()),
        };
    }
    cur.insert(last.to_string(), parse_value(raw.trim()));
    Ok(())
}

fn defaults() -> Table {
    let text = toml::to_string(&ExperimentConfig::default()).expect("defaults serialize");
    toml::from_str(&text).expect("defaults parse")
}

/// Build the effective config.
pub fn load(path: Option<&Path>, overrides: &[String], seed: Option<u64>) -> Result<ExperimentConfig> {
    let mut table = defaults();
    if let Ok(s) = std::env::var(SEED_ENV) {
        let v: u64 = s
            .parse()
            .map_err(|_| UsageError(format!("{SEED_ENV}={s:?} is not an unsigned integer")))?;
        table.insert("seed".into(), Value::Integer(v as i64));
    }
    if let Some(p) = path {
        let text = fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
        let file: Table = toml::from_str(&text).map_err(|e| UsageError(format!("{}: {e}", p.display())))?;
        merge(&mut table, file);
    }
    for o in overrides {
        apply_override(&mut table, o)?;
    }
    if let Some(s) = seed {
        table.insert("seed".into(), Value::Integer(s as i64));
    }
    let cfg: ExperimentConfig = Value::Table(table)
        .try_into()
        .map_err(|e: toml::de::Error| UsageError(format!("config: {}", e.message())))?;
    cfg.validate().map_err(|e| anyhow!(e))?;
    Ok(cfg)
}

/// The effective config as TOML text.
pub fn render(cfg: &ExperimentConfig) -> String {
    toml::to_string_pretty(cfg).expect("config serializes")
}
