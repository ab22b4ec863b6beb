//! Run configuration: one JSON document describing data locations,
//! providers, and per-stage settings. Relative paths are resolved against
//! the directory containing the config file, so a checked-in fixture tree
//! works from any working directory. Secrets never appear here — providers
//! reference environment variable *names* only.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analytics::MarginMethod;
use crate::collect::{validate_systems, SystemProfile};
use crate::gate::GateConfig;
use crate::judge::{JudgeConfig, Metric, SAFETY_METRIC};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("config is not valid JSON: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathsConfig {
    pub personas: PathBuf,
    pub golden_questions: PathBuf,
    pub difficulties: PathBuf,
    pub stopwords: PathBuf,
    pub token_pairs: PathBuf,
    pub rubrics_dir: PathBuf,
    pub cassette_dir: PathBuf,
    pub runs_dir: PathBuf,
}

impl PathsConfig {
    fn resolve(&mut self, base: &Path) {
        for path in [
            &mut self.personas,
            &mut self.golden_questions,
            &mut self.difficulties,
            &mut self.stopwords,
            &mut self.token_pairs,
            &mut self.rubrics_dir,
            &mut self.cassette_dir,
            &mut self.runs_dir,
        ] {
            if path.is_relative() {
                *path = base.join(&path);
            }
        }
    }
}

fn default_few_shot_k() -> usize {
    3
}

fn default_generation_temperature() -> f64 {
    1.0
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerationConfig {
    pub provider: String,
    pub n_per_context: u32,
    #[serde(default = "default_few_shot_k")]
    pub few_shot_k: usize,
    #[serde(default = "default_generation_temperature")]
    pub temperature: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MapperConfig {
    pub provider: String,
}

fn default_batch_size() -> usize {
    10
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CollectConfig {
    pub systems: Vec<SystemProfile>,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
}

fn default_alpha() -> f64 {
    0.05
}

fn default_primary_metric() -> String {
    Metric::AnswerRelevancy.name().to_string()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StatsConfig {
    /// Significance level for the pairwise chi-square tests.
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default)]
    pub margin_method: MarginMethod,
    /// System compared against every other system in the chi-square report.
    pub subject_system: String,
    /// Metric the chi-square comparisons are run on.
    #[serde(default = "default_primary_metric")]
    pub primary_metric: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Every stage seed is derived from this one value.
    pub master_seed: u64,
    /// Domain phrase substituted into generation, mapping, and response
    /// prompts (e.g. "credit union banking").
    pub domain: String,
    /// Plain-text description of the schema join topology, shown to the
    /// question writer.
    pub table_joins_text: String,
    pub paths: PathsConfig,
    pub providers: BTreeMap<String, crate::gateway::ProviderConfig>,
    pub generation: GenerationConfig,
    #[serde(default)]
    pub gate: GateConfig,
    pub mapper: MapperConfig,
    pub collect: CollectConfig,
    pub judge: JudgeConfig,
    pub stats: StatsConfig,
}

impl RunConfig {
    /// Reads, resolves, and validates a config file in one step.
    pub fn load(path: &Path) -> Result<RunConfig, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| ConfigError::Io { path: path.to_path_buf(), source })?;
        let mut config: RunConfig = serde_json::from_str(&text)?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        config.paths.resolve(base);
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.domain.trim().is_empty() {
            return Err(ConfigError::Invalid("domain must be non-empty".into()));
        }
        if self.providers.is_empty() {
            return Err(ConfigError::Invalid("at least one provider is required".into()));
        }
        if self.generation.n_per_context == 0 {
            return Err(ConfigError::Invalid("generation.n_per_context must be positive".into()));
        }

        self.require_provider("generation.provider", &self.generation.provider)?;
        self.require_provider("mapper.provider", &self.mapper.provider)?;
        self.require_provider("judge.provider", &self.judge.provider)?;
        if let Some(review) = &self.gate.review_provider {
            self.require_provider("gate.review_provider", review)?;
        }
        if self.gate.llm_review_enabled && self.gate.review_provider.is_none() {
            return Err(ConfigError::Invalid(
                "gate.llm_review_enabled requires gate.review_provider".into(),
            ));
        }
        for system in &self.collect.systems {
            self.require_provider(
                &format!("collect.systems[{}].provider", system.system_id),
                &system.provider,
            )?;
        }
        validate_systems(&self.collect.systems)
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if self.collect.batch_size == 0 {
            return Err(ConfigError::Invalid("collect.batch_size must be at least 1".into()));
        }

        self.judge.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;

        if !(0.0 < self.stats.alpha && self.stats.alpha < 1.0) {
            return Err(ConfigError::Invalid(format!(
                "stats.alpha must be in (0, 1), got {}",
                self.stats.alpha
            )));
        }
        if !self
            .collect
            .systems
            .iter()
            .any(|s| s.system_id == self.stats.subject_system)
        {
            return Err(ConfigError::Invalid(format!(
                "stats.subject_system {:?} is not a configured system",
                self.stats.subject_system
            )));
        }
        if !self.reported_metrics().iter().any(|m| m == &self.stats.primary_metric) {
            return Err(ConfigError::Invalid(format!(
                "stats.primary_metric {:?} is not produced by the judge configuration",
                self.stats.primary_metric
            )));
        }
        Ok(())
    }

    /// Metric names that appear in evaluation records as reportable scores:
    /// each enabled judged metric, with bias replaced by its derived safety
    /// complement.
    pub fn reported_metrics(&self) -> Vec<String> {
        self.judge
            .metrics
            .iter()
            .map(|m| {
                if *m == Metric::Bias {
                    SAFETY_METRIC.to_string()
                } else {
                    m.name().to_string()
                }
            })
            .collect()
    }

    fn require_provider(&self, field: &str, name: &str) -> Result<(), ConfigError> {
        if self.providers.contains_key(name) {
            Ok(())
        } else {
            Err(ConfigError::Invalid(format!("{field} references unknown provider {name:?}")))
        }
    }
}
