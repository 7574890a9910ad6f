//! Stage configuration, loaded from TOML and validated up front.

use std::path::Path;

use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("config parse error: {0}")]
    Parse(String),
    #[error("invalid config: {field} {reason}")]
    Invalid { field: &'static str, reason: String },
}

fn invalid(field: &'static str, reason: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        field,
        reason: reason.into(),
    }
}

/// Semantic threshold: a fixed margin, or the literal string `"calibrate"`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TauSem {
    Value(f64),
    Calibrate(CalibrateMarker),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CalibrateMarker {
    Calibrate,
}

impl TauSem {
    pub const CALIBRATE: TauSem = TauSem::Calibrate(CalibrateMarker::Calibrate);

    pub fn value(&self) -> Option<f64> {
        match self {
            TauSem::Value(v) => Some(*v),
            TauSem::Calibrate(_) => None,
        }
    }
}

/// Generation grid section (`[control]`), consumed by `gen-plan`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControlSection {
    pub prompts: Vec<String>,
    #[serde(default)]
    pub pose_refs: Vec<String>,
    #[serde(default)]
    pub edge_refs: Vec<String>,
    pub n_scenes: u32,
    pub k_variations: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    #[serde(default = "default_task")]
    pub task: String,
    #[serde(default = "default_k_top")]
    pub k_top: usize,
    #[serde(default = "default_scale")]
    pub similarity_scale: f64,
    pub tau_sem: TauSem,
    #[serde(default = "default_tau_area")]
    pub tau_area: f64,
    #[serde(default = "default_kpt_conf")]
    pub tau_kpt_conf: f64,
    #[serde(default = "default_kpt_count")]
    pub tau_kpt_count: u32,
    #[serde(default = "default_recall")]
    pub recall_target: f64,
    #[serde(default)]
    pub borderline_delta: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub control: Option<ControlSection>,
}

// Engine defaults.
fn default_task() -> String {
    "pose".into()
}
fn default_k_top() -> usize {
    3
}
fn default_scale() -> f64 {
    100.0
}
fn default_tau_area() -> f64 {
    0.05
}
fn default_kpt_conf() -> f64 {
    0.5
}
fn default_kpt_count() -> u32 {
    8
}
fn default_recall() -> f64 {
    0.95
}

impl PipelineConfig {
    /// Config with engine defaults and the given semantic threshold.
    pub fn with_tau_sem(tau_sem: f64) -> Self {
        PipelineConfig {
            task: default_task(),
            k_top: default_k_top(),
            similarity_scale: default_scale(),
            tau_sem: TauSem::Value(tau_sem),
            tau_area: default_tau_area(),
            tau_kpt_conf: default_kpt_conf(),
            tau_kpt_count: default_kpt_count(),
            recall_target: default_recall(),
            borderline_delta: 0.0,
            seed: 0,
            control: None,
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let cfg: PipelineConfig =
            toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml_str(&text)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.task.is_empty() {
            return Err(invalid("task", "must be non-empty"));
        }
        if self.k_top < 1 {
            return Err(invalid("k_top", "must be >= 1"));
        }
        if !(self.similarity_scale.is_finite() && self.similarity_scale > 0.0) {
            return Err(invalid("similarity_scale", "must be a positive finite number"));
        }
        if let TauSem::Value(v) = self.tau_sem {
            if !v.is_finite() {
                return Err(invalid("tau_sem", "must be finite or \"calibrate\""));
            }
        }
        if !(0.0..=1.0).contains(&self.tau_area) {
            return Err(invalid("tau_area", "must lie in [0, 1]"));
        }
        if !(0.0..=1.0).contains(&self.tau_kpt_conf) {
            return Err(invalid("tau_kpt_conf", "must lie in [0, 1]"));
        }
        if !(self.recall_target > 0.0 && self.recall_target <= 1.0) {
            return Err(invalid("recall_target", "must lie in (0, 1]"));
        }
        if !(self.borderline_delta.is_finite() && self.borderline_delta >= 0.0) {
            return Err(invalid("borderline_delta", "must be >= 0"));
        }
        if let Some(c) = &self.control {
            if c.prompts.is_empty() || c.prompts.iter().any(|p| p.is_empty()) {
                return Err(invalid("control.prompts", "must be a non-empty list of non-empty strings"));
            }
            if c.n_scenes < 1 {
                return Err(invalid("control.n_scenes", "must be >= 1"));
            }
            if c.k_variations < 1 {
                return Err(invalid("control.k_variations", "must be >= 1"));
            }
            for (field, list) in [
                ("control.prompts", &c.prompts),
                ("control.pose_refs", &c.pose_refs),
                ("control.edge_refs", &c.edge_refs),
            ] {
                let mut sorted = list.clone();
                sorted.sort();
                if sorted.windows(2).any(|w| w[0] == w[1]) {
                    return Err(invalid(field, "contains duplicates"));
                }
            }
        }
        Ok(())
    }
}
