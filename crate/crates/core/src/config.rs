//! Job configuration file.
//!
//! A TOML document with one table per concern:
//!
//! ```toml
//! [train]
//! epochs = 30
//! channel = "Y"
//!
//! [generator]
//! k = 20
//!
//! [critic]
//! widths = [64, 128]
//!
//! [loss]
//! omega = 60.0
//!
//! [data]
//! originals = ["a.ply", "b.ply"]
//! qps = [40]
//! ```
//!
//! Every key is optional and falls back to its default. Single keys can be
//! overridden with `section.key=value` strings, where `value` is a TOML literal
//! (bare words are taken as strings).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::critic::CriticConfig;
use crate::distortion::DEFAULT_STEP_SCALE;
use crate::error::{Error, Result};
use crate::generator::GeneratorConfig;
use crate::objectives::LossConfig;
use crate::trainer::TrainConfig;

/// Where training pairs come from.
///
/// With `distorted` empty, every original is run through the distortion
/// simulator once per entry of `qps`. Several QPs give one model across
/// bitrates; a single QP gives a per-bitrate model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub originals: Vec<PathBuf>,
    /// Decoded counterparts of `originals`, same order and geometry.
    pub distorted: Vec<PathBuf>,
    pub qps: Vec<i32>,
    pub smoothing_k: usize,
    pub step_scale: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self { originals: Vec::new(), distorted: Vec::new(), qps: vec![40], smoothing_k: 8, step_scale: DEFAULT_STEP_SCALE }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub train: TrainConfig,
    pub generator: GeneratorConfig,
    pub critic: CriticConfig,
    pub loss: LossConfig,
    pub data: DataConfig,
}

impl Config {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Config = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        // Data paths are relative to the config file.
        if let Some(base) = path.parent() {
            for p in cfg.data.originals.iter_mut().chain(cfg.data.distorted.iter_mut()) {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            }
        }
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.generator.validate()?;
        self.critic.validate()?;
        self.loss.validate()?;
        if !self.data.distorted.is_empty() && self.data.distorted.len() != self.data.originals.len() {
            return Err(Error::Config("data.distorted must be empty or match data.originals".into()));
        }
        if self.data.qps.iter().any(|&q| q < 1) || !(self.data.step_scale > 0.0) {
            return Err(Error::Config("data.qps must be >= 1 and data.step_scale positive".into()));
        }
        Ok(())
    }

    /// Apply one `section.key=value` override.
    pub fn set(&mut self, assignment: &str) -> Result<()> {
        let (key, raw) = assignment
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override '{assignment}' is not of the form section.key=value")))?;
        let (section, field) = key
            .trim()
            .split_once('.')
            .ok_or_else(|| Error::Config(format!("override key '{key}' must be section.key")))?;
        let value = parse_literal(raw.trim());
        let mut doc = toml::Value::try_from(&*self).map_err(|e| Error::Config(e.to_string()))?;
        let table = doc
            .get_mut(section)
            .and_then(toml::Value::as_table_mut)
            .ok_or_else(|| Error::Config(format!("unknown config section '{section}'")))?;
        table.insert(field.to_string(), value);
        let updated: Config = doc.try_into().map_err(|e: toml::de::Error| Error::Config(format!("{key}: {e}")))?;
        updated.validate()?;
        *self = updated;
        Ok(())
    }
}

fn parse_literal(raw: &str) -> toml::Value {
    let wrapped = format!("v = {raw}");
    match toml::from_str::<toml::Table>(&wrapped) {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| toml::Value::String(raw.to_string())),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}
