//! `[codec]` + `[train]` TOML file, `--set section.key=value` overrides and `CBANET_SEED`.

use std::path::Path;

use cbanet::codec::CodecConfig;
use cbanet::train::TrainConfig;
use cbanet::{Error, Result};
use serde::{Deserialize, Serialize};
use toml::{Table, Value};

pub const SEED_ENV: &str = "CBANET_SEED";

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CliConfig {
    pub codec: CodecConfig,
    pub train: TrainConfig,
}

fn cfg_err(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

/// Recursively overlay `top` onto `base`; tables merge, everything else replaces.
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

fn parse_override(spec: &str) -> Result<(Vec<String>, Value)> {
    let (path, raw) = spec
        .split_once('=')
        .ok_or_else(|| cfg_err(format!("override `{spec}` is not key=value")))?;
    let keys: Vec<String> = path.trim().split('.').map(str::to_string).collect();
    if keys.iter().any(String::is_empty) {
        return Err(cfg_err(format!("bad key path in `{spec}`")));
    }
    // parse the value as TOML; fall back to a bare string
    let value = toml::from_str::<Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.trim().to_string()));
    Ok((keys, value))
}

fn apply_override(root: &mut Table, keys: &[String], value: Value) -> Result<()> {
    let (last, parents) = keys.split_last().expect("non-empty key path");
    let mut t = root;
    for k in parents {
        t = match t.entry(k.clone()).or_insert_with(|| Value::Table(Table::new())) {
            Value::Table(inner) => inner,
            _ => return Err(cfg_err(format!("`{k}` is not a section"))),
        };
    }
    t.insert(last.clone(), value);
    Ok(())
}

impl CliConfig {
    /// Defaults, then the file (if any), then `overrides`, then the seed variable.
    pub fn load(path: Option<&Path>, overrides: &[String], seed_env: Option<&str>) -> Result<Self> {
        let mut root = Table::try_from(CliConfig::default())
            .map_err(|e| cfg_err(format!("serializing defaults: {e}")))?;
        if let Some(p) = path {
            let text = std::fs::read_to_string(p)
                .map_err(|e| cfg_err(format!("cannot read {}: {e}", p.display())))?;
            let file: Table = toml::from_str(&text)
                .map_err(|e| cfg_err(format!("{}: {e}", p.display())))?;
            merge(&mut root, file);
        }
        for o in overrides {
            let (keys, v) = parse_override(o)?;
            apply_override(&mut root, &keys, v)?;
        }
        let mut cfg: CliConfig = Value::Table(root)
            .try_into()
            .map_err(|e: toml::de::Error| cfg_err(e.message().to_string()))?;
        if let Some(s) = seed_env {
            cfg.train.seed = s
                .trim()
                .parse()
                .map_err(|_| cfg_err(format!("{SEED_ENV}={s} is not an unsigned integer")))?;
        }
        cfg.codec.validate()?;
        cfg.train.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}
