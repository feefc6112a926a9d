//! Run configuration: one TOML file drives every command.
//!
//! ```toml
//! [paths]            # relative paths resolve against the config file's directory
//! manifest = "manifest.json"
//! media_root = "."
//! scores = "scores.csv"
//! hm_root = "hm"
//! output_dir = "out"
//!
//! [split]
//! seed = 0
//! ratio = 0.8        # train share
//!
//! [model]            # every ModelConfig field, all optional
//! d_model = 64
//! ```

use std::fmt;
use std::path::{Path, PathBuf};

use avqa_core::model::ModelConfig;
use serde::{Deserialize, Serialize};

/// Invalid configuration or command-line input.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

fn invalid(msg: impl Into<String>) -> anyhow::Error {
    ConfigError(msg.into()).into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Paths {
    pub manifest: PathBuf,
    pub media_root: PathBuf,
    pub scores: PathBuf,
    pub hm_root: PathBuf,
    pub output_dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitConfig {
    pub seed: u64,
    pub ratio: f64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig { seed: 0, ratio: 0.8 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub paths: Paths,
    #[serde(default)]
    pub split: SplitConfig,
    #[serde(default)]
    pub model: ModelConfig,
}

/// Parse `value` as a TOML value, falling back to a bare string.
fn parse_value(value: &str) -> toml::Value {
    match toml::from_str::<toml::Table>(&format!("v = {value}")) {
        Ok(mut t) => t.remove("v").expect("key present"),
        Err(_) => toml::Value::String(value.to_string()),
    }
}

/// Apply `section.key=value` to a parsed table.
fn apply_override(table: &mut toml::Table, spec: &str) -> anyhow::Result<()> {
    let (key, value) = spec
        .split_once('=')
        .ok_or_else(|| invalid(format!("override {spec:?} is not key=value")))?;
    let parts: Vec<&str> = key.trim().split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(invalid(format!("bad override key {key:?}")));
    }
    let mut cur = table;
    for p in &parts[..parts.len() - 1] {
        let entry = cur
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| invalid(format!("override {key:?}: {p} is not a table")))?;
    }
    cur.insert(parts[parts.len() - 1].to_string(), parse_value(value.trim()));
    Ok(())
}

impl RunConfig {
    /// Parse config text, apply overrides, resolve paths against `base`.
    pub fn from_str_with(text: &str, overrides: &[String], base: &Path) -> anyhow::Result<Self> {
        let mut table: toml::Table = toml::from_str(text).map_err(|e| invalid(format!("config: {e}")))?;
        for o in overrides {
            apply_override(&mut table, o)?;
            log::info!("override {o}");
        }
        let mut cfg: RunConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| invalid(format!("config: {e}")))?;
        for p in [
            &mut cfg.paths.manifest,
            &mut cfg.paths.media_root,
            &mut cfg.paths.scores,
            &mut cfg.paths.hm_root,
            &mut cfg.paths.output_dir,
        ] {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, overrides: &[String]) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| invalid(format!("cannot read config {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_str_with(&text, overrides, base)
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        if !(self.split.ratio > 0.0 && self.split.ratio < 1.0) {
            return Err(invalid(format!(
                "split.ratio must be in (0, 1), got {}",
                self.split.ratio
            )));
        }
        self.model.validate().map_err(|e| invalid(format!("model: {e}")))?;
        for (name, p) in [
            ("manifest", &self.paths.manifest),
            ("media_root", &self.paths.media_root),
            ("scores", &self.paths.scores),
            ("hm_root", &self.paths.hm_root),
        ] {
            if !p.exists() {
                return Err(invalid(format!("paths.{name}: {} does not exist", p.display())));
            }
        }
        Ok(())
    }
}
