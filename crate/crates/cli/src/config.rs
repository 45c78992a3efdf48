//! Pipeline configuration: TOML file, then `SRRDOC_*` environment
//! variables, then command-line flags.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::de::DeserializeOwned;
use srrdoc::pipeline::PipelineConfig;

pub const ENV_PREFIX: &str = "SRRDOC_";

/// A problem with configuration or arguments, reported with exit code 2.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

pub fn config_error(e: impl std::fmt::Display) -> anyhow::Error {
    ConfigError(e.to_string()).into()
}

/// Parse a lowercase enum name the way the TOML file spells it.
pub fn parse_name<T: DeserializeOwned>(value: &str) -> Result<T> {
    serde_json::from_value(serde_json::Value::String(value.to_ascii_lowercase()))
        .map_err(|_| config_error(format!("unrecognized value `{value}`")))
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| config_error(format!("{ENV_PREFIX}{key}: cannot parse `{value}`")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.trim().to_ascii_lowercase().as_str() {
        "1" | "true" | "yes" | "on" => Ok(true),
        "0" | "false" | "no" | "off" | "" => Ok(false),
        _ => Err(config_error(format!("{ENV_PREFIX}{key}: expected a boolean, got `{value}`"))),
    }
}

pub fn load_file(path: &Path) -> Result<PipelineConfig> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display())).map_err(config_error)?;
    toml::from_str(&text).map_err(|e| config_error(format!("{}: {e}", path.display())))
}

/// Apply overrides from `lookup`, which maps a key without the prefix to
/// its value.
pub fn apply_env(cfg: &mut PipelineConfig, lookup: impl Fn(&str) -> Option<String>) -> Result<()> {
    let get = |k: &str| lookup(&format!("{ENV_PREFIX}{k}"));
    if let Some(v) = get("SEED") {
        cfg.seed = parse_num("SEED", &v)?;
    }
    if let Some(v) = get("PARALLELISM") {
        cfg.parallelism = parse_num("PARALLELISM", &v)?;
    }
    if let Some(v) = get("OUT") {
        cfg.out = PathBuf::from(v);
    }
    if let Some(v) = get("DETECTOR") {
        cfg.detector.kind = parse_name(&v)?;
    }
    if let Some(v) = get("DETECTIONS") {
        cfg.detector.path = Some(PathBuf::from(v));
    }
    if let Some(v) = get("PERTURB") {
        cfg.perturb.enabled = parse_bool("PERTURB", &v)?;
    }
    if let Some(v) = get("RECOGNIZER") {
        cfg.recognizer.kind = parse_name(&v)?;
    }
    if let Some(v) = get("CHAR_ERROR_RATE") {
        cfg.recognizer.char_error_rate = parse_num("CHAR_ERROR_RATE", &v)?;
    }
    if let Some(v) = get("REMOTE_MODEL") {
        cfg.recognizer.model = v;
    }
    if let Some(v) = get("ORDER") {
        cfg.order.kind = parse_name(&v)?;
    }
    if let Some(v) = get("MODEL") {
        cfg.order.model = Some(PathBuf::from(v));
    }
    Ok(())
}
