//! Declarative experiment description, loaded from TOML.
//!
//! One file pins everything a run needs: data paths, embedding backend,
//! chat backend, generation method, and the mapping stage. Secrets are
//! deliberately absent; the API key and an endpoint override come from
//! `SUBJKIT_API_KEY` and `SUBJKIT_ENDPOINT` at run time and are never
//! written back out.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::count::{DEFAULT_COUNT_CAP, DEFAULT_LAMBDA};
use crate::embed::{EmbedBackendKind, EmbedderConfig};
use crate::llm::{ChatClientConfig, ChatClientKind, GenerationParams, RoundPlan, TemplateVariant};

use super::PipelineError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MethodKind {
    Zero,
    Few,
    Limit,
    Cot,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MethodConfig {
    pub kind: MethodKind,
    /// Round schedule, `cot` only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub plan: Option<RoundPlan>,
    /// Prompt wording variant: "v1", "v2", or "v3".
    #[serde(default = "default_variant")]
    pub variant: String,
    /// Custom prompt file overriding the built-in variant.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub template_file: Option<PathBuf>,
    /// Scales the predicted count for `limit` when no fixed quota is set.
    #[serde(default = "default_multiplier")]
    pub multiplier: u32,
    /// Worked examples prepended for `few`.
    #[serde(default = "default_exemplars")]
    pub exemplars: usize,
    /// Fixed quota for `limit`; absent means use the predicted count.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub limit: Option<u32>,
}

fn default_variant() -> String {
    "v2".to_owned()
}

fn default_multiplier() -> u32 {
    1
}

fn default_exemplars() -> usize {
    4
}

impl MethodConfig {
    pub fn template_variant(&self) -> Result<TemplateVariant, PipelineError> {
        self.variant
            .parse()
            .map_err(|e| PipelineError::Config(format!("method.variant: {e}")))
    }

    /// True when running this method requires a count model.
    pub fn needs_count_model(&self) -> bool {
        match self.kind {
            MethodKind::Zero | MethodKind::Few => false,
            MethodKind::Limit => self.limit.is_none(),
            MethodKind::Cot => self.plan.as_ref().is_some_and(RoundPlan::needs_n),
        }
    }

    /// Human-readable label for reports before the concrete quota is known.
    pub fn describe(&self) -> String {
        match self.kind {
            MethodKind::Zero => "zero-shot".to_owned(),
            MethodKind::Few => format!("few-shot({})", self.exemplars),
            MethodKind::Limit => match self.limit {
                Some(k) => format!("limit-{k}"),
                None if self.multiplier == 1 => "limit-n".to_owned(),
                None => format!("limit-{}n", self.multiplier),
            },
            MethodKind::Cot => match &self.plan {
                Some(plan) => format!("cot({plan})"),
                None => "cot".to_owned(),
            },
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathsConfig {
    /// Training records, JSON lines.
    pub train: PathBuf,
    /// Records to predict and score, JSON lines.
    pub test: PathBuf,
    /// Controlled vocabulary, one term per line or binary records.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vocabulary: Option<PathBuf>,
    /// Pre-trained count model; absent means fit one from `train`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub count_model: Option<PathBuf>,
    /// Prebuilt vocabulary index; absent means build from `vocabulary`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub index: Option<PathBuf>,
    /// Parent directory that receives one subdirectory per run.
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("runs")
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MappingConfig {
    #[serde(default = "default_true")]
    pub enabled: bool,
    /// Substitutions farther than this pass through unchanged.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_distance: Option<f64>,
}

fn default_true() -> bool {
    true
}

impl Default for MappingConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            max_distance: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CountConfig {
    /// Predicted counts are clamped to `1..=cap`.
    #[serde(default = "default_cap")]
    pub cap: u32,
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    /// Pick lambda by cross-validation instead of using `lambda`.
    #[serde(default)]
    pub tune: bool,
}

fn default_cap() -> u32 {
    DEFAULT_COUNT_CAP
}

fn default_lambda() -> f64 {
    DEFAULT_LAMBDA
}

impl Default for CountConfig {
    fn default() -> Self {
        Self {
            cap: DEFAULT_COUNT_CAP,
            lambda: DEFAULT_LAMBDA,
            tune: false,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IndexConfig {
    /// Reduced dimensionality of the vocabulary index.
    #[serde(default = "default_k")]
    pub k: usize,
}

fn default_k() -> usize {
    64
}

impl Default for IndexConfig {
    fn default() -> Self {
        Self { k: default_k() }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Master seed for anything stochastic in the run.
    #[serde(default)]
    pub seed: u64,
    pub paths: PathsConfig,
    pub embedder: EmbedderConfig,
    pub client: ChatClientConfig,
    pub method: MethodConfig,
    #[serde(default)]
    pub params: GenerationParams,
    #[serde(default)]
    pub mapping: MappingConfig,
    #[serde(default)]
    pub count: CountConfig,
    #[serde(default)]
    pub index: IndexConfig,
}

impl ExperimentConfig {
    pub fn from_toml_str(s: &str) -> Result<Self, PipelineError> {
        toml::from_str(s).map_err(|e| PipelineError::Config(e.to_string()))
    }

    pub fn from_toml_path(path: &Path) -> Result<Self, PipelineError> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }
}

/// Checks the internal consistency of a config and the presence of its
/// input files. Catches problems before any work starts.
pub fn validate_config(cfg: &ExperimentConfig) -> Result<(), PipelineError> {
    let fail = |msg: String| Err(PipelineError::Config(msg));

    match cfg.method.kind {
        MethodKind::Cot => {
            if cfg.method.plan.is_none() {
                return fail("method.kind = \"cot\" requires method.plan".to_owned());
            }
        }
        _ => {
            if cfg.method.plan.is_some() {
                return fail(format!(
                    "method.plan only applies to kind \"cot\", not {:?}",
                    cfg.method.kind
                ));
            }
        }
    }
    if cfg.method.kind == MethodKind::Few && cfg.method.exemplars == 0 {
        return fail("method.exemplars must be at least 1 for kind \"few\"".to_owned());
    }
    if cfg.method.multiplier == 0 {
        return fail("method.multiplier must be at least 1".to_owned());
    }
    if cfg.method.limit == Some(0) {
        return fail("method.limit must be at least 1".to_owned());
    }
    if let Some(path) = &cfg.method.template_file {
        if !path.is_file() {
            return fail(format!("method.template_file not found: {}", path.display()));
        }
    } else {
        cfg.method.template_variant()?;
    }

    cfg.params
        .validate()
        .map_err(|e| PipelineError::Config(e.to_string()))?;

    if cfg.count.cap == 0 {
        return fail("count.cap must be at least 1".to_owned());
    }
    if !cfg.count.lambda.is_finite() || cfg.count.lambda < 0.0 {
        return fail("count.lambda must be finite and non-negative".to_owned());
    }
    if cfg.index.k == 0 {
        return fail("index.k must be at least 1".to_owned());
    }
    if let Some(d) = cfg.mapping.max_distance {
        if !d.is_finite() {
            return fail("mapping.max_distance must be finite".to_owned());
        }
    }

    if cfg.embedder.backend == EmbedBackendKind::Remote && cfg.embedder.endpoint.is_none() {
        return fail("embedder.backend = \"remote\" requires embedder.endpoint".to_owned());
    }
    if cfg.embedder.backend == EmbedBackendKind::Cache && cfg.embedder.cache_path.is_none() {
        return fail("embedder.backend = \"cache\" requires embedder.cache_path".to_owned());
    }
    // SUBJKIT_ENDPOINT can stand in for a missing chat endpoint; checking
    // here keeps a bad config from failing mid-run instead.
    if cfg.client.backend == ChatClientKind::Remote
        && cfg.client.endpoint.is_none()
        && std::env::var("SUBJKIT_ENDPOINT").is_err()
    {
        return fail(
            "client.backend = \"remote\" requires client.endpoint or SUBJKIT_ENDPOINT".to_owned(),
        );
    }

    if cfg.mapping.enabled && cfg.paths.index.is_none() && cfg.paths.vocabulary.is_none() {
        return fail(
            "mapping.enabled requires paths.index or paths.vocabulary".to_owned(),
        );
    }

    for (label, path) in [
        ("paths.train", Some(&cfg.paths.train)),
        ("paths.test", Some(&cfg.paths.test)),
        ("paths.vocabulary", cfg.paths.vocabulary.as_ref()),
        ("paths.count_model", cfg.paths.count_model.as_ref()),
        ("paths.index", cfg.paths.index.as_ref()),
    ] {
        if let Some(path) = path {
            if !path.is_file() {
                return fail(format!("{label} not found: {}", path.display()));
            }
        }
    }

    // Dimension agreement with prebuilt artifacts, caught before any work.
    if let Some(path) = &cfg.paths.count_model {
        let model = crate::count::load_count_model(path)
            .map_err(|e| PipelineError::Config(format!("paths.count_model: {e}")))?;
        if model.dim() != cfg.embedder.dim {
            return fail(format!(
                "count model expects dim {}, embedder produces {}",
                model.dim(),
                cfg.embedder.dim
            ));
        }
    }
    if let Some(path) = &cfg.paths.index {
        let (_, _, dim_in) = crate::vocab::VocabIndex::peek_dims(path)
            .map_err(|e| PipelineError::Config(format!("paths.index: {e}")))?;
        if dim_in != cfg.embedder.dim {
            return fail(format!(
                "index expects dim {dim_in}, embedder produces {}",
                cfg.embedder.dim
            ));
        }
    }
    Ok(())
}
