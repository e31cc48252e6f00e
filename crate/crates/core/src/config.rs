//! JSON run configuration shared by the command-line tools.
//!
//! ```json
//! {
//!   "train": { "epochs": 50, "lambda": 0.1 },
//!   "baseline": { "ig_steps": 50 },
//!   "methods": ["vg", "ig", "sg"],
//!   "grid": 28,
//!   "palette": "gray"
//! }
//! ```
//!
//! Unknown keys are rejected at every level. Missing keys take their
//! defaults and are reported through `log::info!`.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::attribution::{PipelineConfig, DEFAULT_GRID};
use crate::baselines::{BaselineMethod, BaselineOptions};
use crate::error::{Error, Result};
use crate::trainer::TrainConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Palette {
    /// Greyscale PGM.
    #[default]
    Gray,
    /// Red heat layer in a PPM, over a base image when one is given.
    Red,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub baseline: BaselineOptions,
    pub methods: Vec<BaselineMethod>,
    pub grid: usize,
    pub palette: Palette,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            train: TrainConfig::default(),
            baseline: BaselineOptions::default(),
            methods: vec![BaselineMethod::Vg, BaselineMethod::Ig, BaselineMethod::Sg],
            grid: DEFAULT_GRID,
            palette: Palette::Gray,
        }
    }
}

/// Keys of `defaults` (recursively, for objects) missing from `given`.
fn missing_keys(given: &Value, defaults: &Value, prefix: &str, out: &mut Vec<String>) {
    let (Value::Object(given), Value::Object(defaults)) = (given, defaults) else {
        return;
    };
    for (key, default) in defaults {
        let path = if prefix.is_empty() {
            key.clone()
        } else {
            format!("{prefix}.{key}")
        };
        match given.get(key) {
            None => out.push(path),
            Some(v) => missing_keys(v, default, &path, out),
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let value: Value =
            serde_json::from_str(text).map_err(|e| Error::format(format!("config: {e}")))?;
        if !value.is_object() {
            return Err(Error::invalid("config must be a JSON object"));
        }
        let cfg: RunConfig = serde_json::from_value(value.clone())
            .map_err(|e| Error::invalid(format!("config: {e}")))?;
        let defaults = serde_json::to_value(RunConfig::default()).expect("config serializes");
        let mut missing = Vec::new();
        missing_keys(&value, &defaults, "", &mut missing);
        for key in missing {
            log::info!("config: `{key}` not set, using default");
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        if self.grid == 0 {
            return Err(Error::invalid("grid must be positive"));
        }
        Ok(())
    }

    pub fn pipeline_config(&self) -> PipelineConfig {
        PipelineConfig {
            train: self.train.clone(),
            baseline: self.baseline.clone(),
            grid: self.grid,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_config_uses_defaults() {
        let cfg = RunConfig::from_json(r#"{"train": {"epochs": 3}, "methods": ["ig"]}"#).unwrap();
        assert_eq!(cfg.train.epochs, 3);
        assert_eq!(cfg.train.lambda1, TrainConfig::default().lambda1);
        assert_eq!(cfg.methods, vec![BaselineMethod::Ig]);
        assert_eq!(cfg.grid, 28);
        assert_eq!(RunConfig::from_json("{}").unwrap(), RunConfig::default());
    }

    #[test]
    fn rejects_unknown_and_invalid() {
        assert!(matches!(RunConfig::from_json(r#"{"bogus": 1}"#), Err(Error::InvalidArgument(_))));
        assert!(RunConfig::from_json(r#"{"train": {"bogus": 1}}"#).is_err());
        assert!(RunConfig::from_json(r#"{"methods": ["lime"]}"#).is_err());
        assert!(RunConfig::from_json(r#"{"grid": 0}"#).is_err());
        assert!(matches!(RunConfig::from_json("{"), Err(Error::Format(_))));
    }

    #[test]
    fn missing_key_listing() {
        let given = serde_json::json!({"a": 1, "b": {"c": 2}});
        let defaults = serde_json::json!({"a": 0, "b": {"c": 0, "d": 0}, "e": 0});
        let mut out = Vec::new();
        missing_keys(&given, &defaults, "", &mut out);
        assert_eq!(out, vec!["b.d", "e"]);
    }
}
