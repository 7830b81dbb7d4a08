//! Chat-model orchestration: prompt rendering, multi-round generation,
//! response parsing, clients (remote and mock), and fine-tune export.

mod client;
mod finetune;
mod generate;
mod parse;
mod template;

pub use client::{ChatClient, ChatClientConfig, ChatClientKind, MockChatClient, RemoteChatClient};
pub use finetune::export_finetune_dataset;
pub use generate::{
    run_constrained, run_cot, run_few_shot, run_zero_shot, CountExpr, GenerationTrace, RoundPlan,
    RoundTrace,
};
pub use parse::parse_label_response;
pub use template::{
    render_constrained, render_few_shot, render_zero_shot, PromptTemplates, TemplateVariant,
};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        Self {
            role: Role::System,
            content: content.into(),
        }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self {
            role: Role::User,
            content: content.into(),
        }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Self {
            role: Role::Assistant,
            content: content.into(),
        }
    }
}

fn default_temperature() -> f64 {
    0.7
}

fn default_max_new_tokens() -> u32 {
    150
}

/// Sampling controls forwarded to the chat backend.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationParams {
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    #[serde(default = "default_max_new_tokens")]
    pub max_new_tokens: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl Default for GenerationParams {
    fn default() -> Self {
        Self {
            temperature: default_temperature(),
            max_new_tokens: default_max_new_tokens(),
            seed: None,
        }
    }
}

impl GenerationParams {
    pub fn validate(&self) -> Result<(), LlmError> {
        if !(0.0..=2.0).contains(&self.temperature) {
            return Err(LlmError::InvalidParams(format!(
                "temperature must be in [0, 2], got {}",
                self.temperature
            )));
        }
        if !(1..=4096).contains(&self.max_new_tokens) {
            return Err(LlmError::InvalidParams(format!(
                "max_new_tokens must be in [1, 4096], got {}",
                self.max_new_tokens
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum LlmError {
    #[error("invalid chat request: {0}")]
    InvalidRequest(String),
    #[error("invalid generation params: {0}")]
    InvalidParams(String),
    #[error("invalid round plan: {0}")]
    InvalidPlan(String),
    #[error("rate limited after {attempts} attempts")]
    RateLimited { attempts: u32 },
    #[error("chat backend: {0}")]
    Backend(String),
    #[error("mock script exhausted after {0} responses")]
    ScriptExhausted(usize),
    #[error("round {round} failed: {source}")]
    RoundFailed {
        round: usize,
        source: Box<LlmError>,
        /// What completed before the failure, for inspection and resume.
        partial: Box<GenerationTrace>,
    },
    #[error("template: {0}")]
    Template(String),
    #[error("{0}")]
    Io(#[from] std::io::Error),
}
