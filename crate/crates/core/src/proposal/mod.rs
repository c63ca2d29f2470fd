//! The proposal-generator boundary: prompt assembly, response parsing and
//! the interchangeable backends (remote chat endpoint, noisy oracle,
//! trace replay).

mod oracle;
mod parse;
mod prompt;
mod remote;
mod replay;

pub use oracle::{OracleBackend, OracleConfig};
pub use parse::{extract_json, format_answer, parse_response, ParseError, ParseErrorKind, ProposalResponse};
pub use prompt::{
    build_prompt, feedback_hint, system_text, task_text, Exemplar, ExemplarPool, ExemplarRef, PromptBundle,
    PromptOptions, SceneImage, PROMPT_VERSION,
};
pub use remote::{RateLimiter, RemoteBackend, RemoteConfig, DEFAULT_API_KEY_ENV};
pub use replay::{ReplayBackend, TraceRecord};

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::dataset::{DatasetError, SceneAnnotation};

#[derive(Debug, thiserror::Error)]
pub enum ProposalError {
    #[error("k={k} exemplars requested but only {available} eligible")]
    TooFewExemplars { k: usize, available: usize },
    #[error("oracle has no ground truth for scene `{0}`")]
    UnknownScene(String),
    #[error("replay trace has no response for scene `{scene_id}` iteration {iteration}")]
    ReplayMissing { scene_id: String, iteration: u32 },
    #[error("transport failure after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("HTTP {status}: {body}")]
    Http { status: u16, body: String },
    #[error("unexpected response body: {0}")]
    BadResponse(String),
    #[error("invalid backend configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// A source of raw model answers.
pub trait Backend: Send + Sync {
    /// Short description recorded in run manifests.
    fn identity(&self) -> String;

    /// Raw answer text for one prompt.
    fn complete(&self, bundle: &PromptBundle<'_>) -> Result<String, ProposalError>;
}

/// Queries the backend once and parses the answer against the bundle's mode.
pub fn propose(backend: &dyn Backend, bundle: &PromptBundle<'_>) -> Result<ProposalResponse, ProposalError> {
    let raw = backend.complete(bundle)?;
    Ok(parse_response(&raw, bundle.mode, bundle.piece_count))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum BackendConfig {
    Remote(RemoteConfig),
    NoisyOracle(OracleConfig),
    Replay { trace_path: PathBuf },
}

impl BackendConfig {
    pub fn kind(&self) -> &'static str {
        match self {
            BackendConfig::Remote(_) => "remote",
            BackendConfig::NoisyOracle(_) => "oracle",
            BackendConfig::Replay { .. } => "replay",
        }
    }

    pub fn validate(&self) -> Result<(), ProposalError> {
        match self {
            BackendConfig::Remote(c) => c.validate(),
            BackendConfig::NoisyOracle(c) => c.validate(),
            BackendConfig::Replay { .. } => Ok(()),
        }
    }

    /// Instantiates the backend. The oracle reads answers from `scenes`.
    pub fn build(&self, scenes: &[SceneAnnotation]) -> Result<Box<dyn Backend>, ProposalError> {
        self.validate()?;
        Ok(match self {
            BackendConfig::Remote(c) => Box::new(RemoteBackend::new(c.clone())?),
            BackendConfig::NoisyOracle(c) => Box::new(OracleBackend::new(c.clone(), scenes)?),
            BackendConfig::Replay { trace_path } => Box::new(ReplayBackend::load(trace_path)?),
        })
    }
}
