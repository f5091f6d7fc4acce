//! Model backends for the two roles in the pipeline: visual-context
//! extraction and text completion. Both generation stages share the
//! completion role.
//!
//! [`HttpBackend`] speaks a minimal JSON-over-HTTP protocol; [`MockBackend`]
//! answers from a script and never touches the network.

mod http;
mod mock;

use std::fmt;
use std::time::Duration;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{ImageRef, VisualContext};

pub use http::{Backoff, HttpBackend};
pub use mock::{
    make_hallucination_fixture, make_mock_backend, MockBackend, MockResponse, MockRule, MockScript,
};

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("invalid backend configuration: {0}")]
    Config(String),
    #[error("backend {backend:?}: transport error after {attempts} attempt(s): {message}")]
    Transport {
        backend: String,
        attempts: u32,
        message: String,
    },
    #[error("backend {backend:?}: protocol error: {message}")]
    Protocol { backend: String, message: String },
    #[error("backend {backend:?} returned a blank completion")]
    EmptyCompletion { backend: String },
    #[error("backend {backend:?} returned a blank visual context")]
    EmptyContext { backend: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodingParams {
    pub temperature: f64,
    pub max_new_tokens: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl Default for DecodingParams {
    fn default() -> Self {
        Self {
            temperature: 0.0,
            max_new_tokens: 256,
            seed: None,
        }
    }
}

impl DecodingParams {
    /// Greedy decoding or a fixed seed is expected to give repeatable output.
    pub fn is_deterministic(&self) -> bool {
        self.temperature == 0.0 || self.seed.is_some()
    }

    pub fn validate(&self) -> Result<(), BackendError> {
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return Err(BackendError::Config(format!(
                "temperature must be a finite value >= 0, got {}",
                self.temperature
            )));
        }
        if self.max_new_tokens == 0 {
            return Err(BackendError::Config(
                "max_new_tokens must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BackendEndpoint {
    pub name: String,
    pub base_url: String,
    pub timeout: Duration,
    pub max_retries: u32,
    pub decoding: DecodingParams,
    /// Passed through as `Authorization: Bearer <token>`.
    pub bearer_token: Option<String>,
}

impl BackendEndpoint {
    pub fn new(name: impl Into<String>, base_url: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            base_url: base_url.into(),
            timeout: Duration::from_secs(60),
            max_retries: 3,
            decoding: DecodingParams::default(),
            bearer_token: None,
        }
    }

    pub fn validate(&self) -> Result<(), BackendError> {
        if self.name.trim().is_empty() {
            return Err(BackendError::Config(
                "endpoint name must be non-empty".into(),
            ));
        }
        if self.timeout.is_zero() {
            return Err(BackendError::Config(format!(
                "endpoint {:?}: timeout must be positive",
                self.name
            )));
        }
        if self.base_url.trim().is_empty() {
            return Err(BackendError::Config(format!(
                "endpoint {:?}: base_url must be non-empty",
                self.name
            )));
        }
        self.decoding.validate()
    }
}

/// One generation request. Context requests carry the image and question
/// alongside the prompt.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BackendRequest {
    Completion {
        prompt: String,
    },
    VisualContext {
        prompt: String,
        image_uri: String,
        question: String,
    },
}

impl BackendRequest {
    pub fn prompt(&self) -> &str {
        match self {
            BackendRequest::Completion { prompt }
            | BackendRequest::VisualContext { prompt, .. } => prompt,
        }
    }
}

#[async_trait]
pub trait Backend: Send + Sync + fmt::Debug {
    fn name(&self) -> &str;

    /// Whether identical requests are expected to produce identical text.
    fn is_deterministic(&self) -> bool;

    /// Returns the raw generated text.
    async fn generate(&self, request: &BackendRequest) -> Result<String, BackendError>;
}

/// Runs a completion and returns the trimmed text. Blank output is an error.
pub async fn complete_text(backend: &dyn Backend, prompt: &str) -> Result<String, BackendError> {
    if prompt.trim().is_empty() {
        return Err(BackendError::InvalidInput(
            "prompt must be non-empty".into(),
        ));
    }
    let raw = backend
        .generate(&BackendRequest::Completion {
            prompt: prompt.to_string(),
        })
        .await?;
    let text = raw.trim();
    if text.is_empty() {
        return Err(BackendError::EmptyCompletion {
            backend: backend.name().to_string(),
        });
    }
    Ok(text.to_string())
}

/// Asks the context backend for a question-relevant description of `image`.
/// The question doubles as the request prompt.
pub async fn extract_visual_context(
    backend: &dyn Backend,
    image: &ImageRef,
    question: &str,
) -> Result<VisualContext, BackendError> {
    if question.trim().is_empty() {
        return Err(BackendError::InvalidInput(
            "question must be non-empty".into(),
        ));
    }
    if image.uri.trim().is_empty() {
        return Err(BackendError::InvalidInput(format!(
            "image {:?} has no uri",
            image.id
        )));
    }
    let raw = backend
        .generate(&BackendRequest::VisualContext {
            prompt: question.to_string(),
            image_uri: image.uri.clone(),
            question: question.to_string(),
        })
        .await?;
    let text = raw.trim();
    if text.is_empty() {
        return Err(BackendError::EmptyContext {
            backend: backend.name().to_string(),
        });
    }
    Ok(VisualContext {
        text: text.to_string(),
        source_backend: backend.name().to_string(),
    })
}
