use std::sync::atomic::{AtomicUsize, Ordering};

use async_trait::async_trait;
use serde::{Deserialize, Serialize};

use super::{Backend, BackendError, BackendRequest};

/// What a mock says when a rule fires.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MockResponse {
    Text(String),
    /// `correct` iff the prompt contains `marker` verbatim, else `hallucinated`.
    Gated {
        marker: String,
        correct: String,
        hallucinated: String,
    },
}

impl MockResponse {
    fn resolve(&self, prompt: &str) -> &str {
        match self {
            MockResponse::Text(t) => t,
            MockResponse::Gated {
                marker,
                correct,
                hallucinated,
            } => {
                if prompt.contains(marker.as_str()) {
                    correct
                } else {
                    hallucinated
                }
            }
        }
    }

    fn validate(&self) -> Result<(), BackendError> {
        match self {
            MockResponse::Gated { marker, .. } if marker.is_empty() => Err(
                BackendError::InvalidInput("hallucination fixture marker must be non-empty".into()),
            ),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MockRule {
    #[serde(rename = "match")]
    pub matcher: String,
    pub response: MockResponse,
}

impl MockRule {
    pub fn text(matcher: impl Into<String>, response: impl Into<String>) -> Self {
        Self {
            matcher: matcher.into(),
            response: MockResponse::Text(response.into()),
        }
    }
}

/// Ordered substring rules; the first rule whose matcher occurs in the
/// prompt wins. Context requests also match against the image uri.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MockScript {
    #[serde(default)]
    pub rules: Vec<MockRule>,
    pub default: MockResponse,
}

impl MockScript {
    pub fn respond(&self, request: &BackendRequest) -> &str {
        let prompt = request.prompt();
        let image_uri = match request {
            BackendRequest::VisualContext { image_uri, .. } => Some(image_uri.as_str()),
            BackendRequest::Completion { .. } => None,
        };
        self.rules
            .iter()
            .find(|r| {
                prompt.contains(&r.matcher) || image_uri.is_some_and(|u| u.contains(&r.matcher))
            })
            .map_or(&self.default, |r| &r.response)
            .resolve(prompt)
    }
}

#[derive(Debug)]
pub struct MockBackend {
    name: String,
    script: MockScript,
    calls: AtomicUsize,
}

impl MockBackend {
    pub fn new(name: impl Into<String>, script: MockScript) -> Result<Self, BackendError> {
        if let MockResponse::Text(t) = &script.default {
            if t.is_empty() {
                return Err(BackendError::InvalidInput(
                    "mock default response must be non-empty".into(),
                ));
            }
        }
        script.default.validate()?;
        for rule in &script.rules {
            rule.response.validate()?;
        }
        Ok(Self {
            name: name.into(),
            script,
            calls: AtomicUsize::new(0),
        })
    }

    pub fn script(&self) -> &MockScript {
        &self.script
    }

    /// Number of requests served so far.
    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::Relaxed)
    }
}

#[async_trait]
impl Backend for MockBackend {
    fn name(&self) -> &str {
        &self.name
    }

    fn is_deterministic(&self) -> bool {
        true
    }

    async fn generate(&self, request: &BackendRequest) -> Result<String, BackendError> {
        self.calls.fetch_add(1, Ordering::Relaxed);
        Ok(self.script.respond(request).to_string())
    }
}

pub fn make_mock_backend(script: MockScript) -> Result<MockBackend, BackendError> {
    MockBackend::new("mock", script)
}

/// A completion mock that answers correctly only when `marker` (normally the
/// visual context) made it into the prompt.
pub fn make_hallucination_fixture(
    marker: &str,
    correct: &str,
    hallucinated: &str,
) -> Result<MockBackend, BackendError> {
    MockBackend::new(
        "hallucination-fixture",
        MockScript {
            rules: vec![],
            default: MockResponse::Gated {
                marker: marker.to_string(),
                correct: correct.to_string(),
                hallucinated: hallucinated.to_string(),
            },
        },
    )
}
