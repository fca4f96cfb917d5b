//! The experiment configuration document: one JSON file drives every
//! pipeline stage. Schema violations are reported with JSON-pointer-style
//! paths; relative input paths resolve against the config file's directory.

use crate::agent::SessionLimits;
use crate::allocation::Arm;
use crate::mockshop::VariantConfig;
use crate::model::{ModelConfig, ScriptedPolicy};
use crate::persona::AgentSpec;
use crate::webdriver::WebDriverConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {message}")]
    Io { path: String, message: String },
    #[error("config parse error at {pointer}: {message}")]
    Parse { pointer: String, message: String },
    #[error("config invalid at {pointer}: {message}")]
    Invalid { pointer: String, message: String },
}

fn invalid(pointer: &str, message: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        pointer: pointer.to_string(),
        message: message.into(),
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvBackendConfig {
    Mockshop {
        catalog_path: PathBuf,
        /// variant id → filter-panel configuration.
        variants: BTreeMap<String, VariantConfig>,
    },
    Webdriver(WebDriverConfig),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelBlock {
    Http(ModelConfig),
    Scripted(ScriptedPolicy),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AllocationConfig {
    #[serde(default = "default_threshold")]
    pub threshold: f64,
    #[serde(default = "default_max_attempts")]
    pub max_attempts: u32,
}

fn default_threshold() -> f64 {
    0.1
}
fn default_max_attempts() -> u32 {
    100
}

impl Default for AllocationConfig {
    fn default() -> Self {
        AllocationConfig {
            threshold: default_threshold(),
            max_attempts: default_max_attempts(),
        }
    }
}

/// All stage seeds are explicit; there are no wall-clock defaults.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Seeds {
    pub personas: u64,
    pub sample: u64,
    pub allocation: u64,
    pub run: u64,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct AnalysisConfig {
    #[serde(default)]
    pub baseline_path: Option<PathBuf>,
    #[serde(default)]
    pub stratify_by: Vec<String>,
    /// Cut points for bucketing numeric demographics in strata.
    #[serde(default)]
    pub numeric_cuts: BTreeMap<String, Vec<f64>>,
    /// Abandoned-session rate above which analyze exits with code 3.
    #[serde(default)]
    pub abandoned_warning_rate: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub agent_spec: AgentSpec,
    pub sample_n: usize,
    pub arms: Vec<Arm>,
    pub env_backend: EnvBackendConfig,
    pub model: ModelBlock,
    #[serde(default)]
    pub limits: SessionLimits,
    #[serde(default)]
    pub allocation: AllocationConfig,
    #[serde(default = "default_parallelism")]
    pub parallelism: usize,
    pub seeds: Seeds,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub analysis: AnalysisConfig,
    #[serde(default)]
    pub prompt_template_path: Option<PathBuf>,
}

fn default_parallelism() -> usize {
    1
}

fn resolve(base: &Path, path: &mut PathBuf) {
    if path.is_relative() {
        *path = base.join(&*path);
    }
}

impl ExperimentConfig {
    /// Loads, resolves relative input paths against the config directory,
    /// and validates. `output_dir` stays as written (resolved against the
    /// working directory by the caller).
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        let mut deserializer = serde_json::Deserializer::from_str(&text);
        let mut config: ExperimentConfig = serde_path_to_error::deserialize(&mut deserializer)
            .map_err(|e| ConfigError::Parse {
                pointer: format!("/{}", e.path().to_string().replace('.', "/")),
                message: e.inner().to_string(),
            })?;

        let base = path
            .parent()
            .unwrap_or_else(|| Path::new("."))
            .to_path_buf();
        match &mut config.env_backend {
            EnvBackendConfig::Mockshop { catalog_path, .. } => resolve(&base, catalog_path),
            EnvBackendConfig::Webdriver(wd) => resolve(&base, &mut wd.ruleset_path),
        }
        if let Some(baseline) = &mut config.analysis.baseline_path {
            resolve(&base, baseline);
        }
        if let Some(template) = &mut config.prompt_template_path {
            resolve(&base, template);
        }
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.agent_spec
            .validate()
            .map_err(|e| invalid("/agent_spec", e.to_string()))?;

        if self.sample_n < 1 || self.sample_n > self.agent_spec.count as usize {
            return Err(invalid(
                "/sample_n",
                format!(
                    "must be in 1..={} (agent_spec.count)",
                    self.agent_spec.count
                ),
            ));
        }
        if self.arms.len() < 2 {
            return Err(invalid("/arms", "need at least 2 arms"));
        }
        let mut names = std::collections::BTreeSet::new();
        for (i, arm) in self.arms.iter().enumerate() {
            if !names.insert(arm.name.as_str()) {
                return Err(invalid(
                    &format!("/arms/{}/name", i),
                    format!("duplicate arm name {:?}", arm.name),
                ));
            }
        }
        if self.sample_n < self.arms.len() {
            return Err(invalid("/sample_n", "fewer sampled personas than arms"));
        }

        match &self.env_backend {
            EnvBackendConfig::Mockshop { variants, .. } => {
                for (id, variant) in variants {
                    variant.validate().map_err(|e| {
                        invalid(
                            &format!("/env_backend/mockshop/variants/{}", id),
                            e.to_string(),
                        )
                    })?;
                }
                for (i, arm) in self.arms.iter().enumerate() {
                    if !variants.contains_key(&arm.variant_id) {
                        return Err(invalid(
                            &format!("/arms/{}/variant_id", i),
                            format!("no mockshop variant named {:?}", arm.variant_id),
                        ));
                    }
                }
            }
            EnvBackendConfig::Webdriver(wd) => {
                for (i, arm) in self.arms.iter().enumerate() {
                    if !wd.start_urls.contains_key(&arm.variant_id) {
                        return Err(invalid(
                            &format!("/arms/{}/variant_id", i),
                            format!("no webdriver start URL for variant {:?}", arm.variant_id),
                        ));
                    }
                }
            }
        }

        match &self.model {
            ModelBlock::Http(config) => config
                .validate()
                .map_err(|e| invalid("/model/http", e.to_string()))?,
            ModelBlock::Scripted(policy) => policy
                .validate()
                .map_err(|e| invalid("/model/scripted", e.to_string()))?,
        }

        if self.limits.max_actions < 1 {
            return Err(invalid("/limits/max_actions", "must be ≥ 1"));
        }
        if self.limits.max_wall_time_s <= 0.0 {
            return Err(invalid("/limits/max_wall_time_s", "must be > 0"));
        }
        if self.limits.loop_window < 1 {
            return Err(invalid("/limits/loop_window", "must be ≥ 1"));
        }
        if self.allocation.threshold < 0.0 {
            return Err(invalid("/allocation/threshold", "must be nonnegative"));
        }
        if self.allocation.max_attempts < 1 {
            return Err(invalid("/allocation/max_attempts", "must be ≥ 1"));
        }
        if self.parallelism < 1 {
            return Err(invalid("/parallelism", "must be ≥ 1"));
        }
        for (i, attribute) in self.analysis.stratify_by.iter().enumerate() {
            if !crate::persona::DEMOGRAPHIC_KEYS.contains(&attribute.as_str()) {
                return Err(invalid(
                    &format!("/analysis/stratify_by/{}", i),
                    format!("unknown demographic {:?}", attribute),
                ));
            }
        }
        Ok(())
    }

    /// Stable hash of the canonical config JSON; stamped into run manifests.
    pub fn fingerprint(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }
}
