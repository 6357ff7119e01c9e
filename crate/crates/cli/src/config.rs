use std::path::Path;

use anyhow::Context;
use serde::{Deserialize, Serialize};

use crate::UsageError;

/// Settings shared by all subcommands. Loaded from a TOML file; command
/// line flags override individual values.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub pipeline: Pipeline,
    pub harvest: Harvest,
    pub challenge: Challenge,
    pub synth: Synth,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Pipeline {
    pub seed: u64,
    pub min_paragraph_chars: usize,
    pub alignment_similarity_threshold: f64,
}

impl Default for Pipeline {
    fn default() -> Self {
        let d = natpert::diff::PipelineConfig::default();
        Self {
            seed: d.rng_seed,
            min_paragraph_chars: d.min_paragraph_chars,
            alignment_similarity_threshold: d.alignment_similarity_threshold,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Harvest {
    pub endpoint: String,
    pub user_agent: String,
    pub max_retries: u32,
    pub backoff_ms: u64,
    pub max_concurrent: usize,
    pub timeout_secs: u64,
    /// RFC 3339; revisions after it are ignored.
    pub max_timestamp: Option<String>,
}

impl Default for Harvest {
    fn default() -> Self {
        let d = natpert::harvest::ApiConfig::default();
        Self {
            endpoint: d.endpoint,
            user_agent: format!(
                "natpert/{} (revision-history research tool)",
                env!("CARGO_PKG_VERSION")
            ),
            max_retries: d.max_retries,
            backoff_ms: d.base_backoff.as_millis() as u64,
            max_concurrent: d.max_concurrent,
            timeout_secs: 60,
            max_timestamp: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Challenge {
    pub f1_threshold: f64,
}

impl Default for Challenge {
    fn default() -> Self {
        Self {
            f1_threshold: natpert::challenge::RobustnessRule::default().f1_on_perturbed_below,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Synth {
    pub rate: f64,
}

impl Default for Synth {
    fn default() -> Self {
        Self { rate: 0.3 }
    }
}

impl Config {
    pub fn load(path: Option<&Path>) -> anyhow::Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        toml::from_str(&text)
            .map_err(|e| UsageError(format!("config {}: {e}", path.display())).into())
    }

    pub fn pipeline_config(&self) -> anyhow::Result<natpert::diff::PipelineConfig> {
        let cfg = natpert::diff::PipelineConfig {
            min_paragraph_chars: self.pipeline.min_paragraph_chars,
            alignment_similarity_threshold: self.pipeline.alignment_similarity_threshold,
            rng_seed: self.pipeline.seed,
        };
        cfg.validate().map_err(UsageError)?;
        Ok(cfg)
    }
}
