//! End-to-end experiment orchestration.

mod config;
mod manifest;
mod run;

pub use config::{
    validate_config, ExperimentConfig, MappingConfig, MethodConfig, MethodKind, PathsConfig,
};
pub use manifest::{input_digest, RunManifest, RunStatus};
pub use run::{run_experiment, RunArtifacts};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("config: {0}")]
    Config(String),
    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<dyn std::error::Error + Send + Sync>,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl PipelineError {
    pub(crate) fn stage<E>(stage: &'static str) -> impl FnOnce(E) -> Self
    where
        E: std::error::Error + Send + Sync + 'static,
    {
        move |source| Self::Stage {
            stage,
            source: Box::new(source),
        }
    }

    /// True when the failure is in inputs or configuration rather than a
    /// backend or environment fault.
    pub fn is_config(&self) -> bool {
        matches!(self, Self::Config(_))
    }
}
