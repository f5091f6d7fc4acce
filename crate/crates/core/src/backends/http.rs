use std::time::Duration;

use async_trait::async_trait;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Backend, BackendEndpoint, BackendError, BackendRequest};

/// Exponential backoff with multiplicative jitter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Backoff {
    pub initial: Duration,
    pub factor: f64,
    /// Each delay is scaled by a uniform draw from `1 ± jitter`.
    pub jitter: f64,
}

impl Default for Backoff {
    fn default() -> Self {
        Self {
            initial: Duration::from_millis(500),
            factor: 2.0,
            jitter: 0.2,
        }
    }
}

impl Backoff {
    /// Delay before retry number `retry` (0-based).
    pub fn delay(&self, retry: u32) -> Duration {
        let base = self.initial.as_secs_f64() * self.factor.powi(retry as i32);
        let scale = if self.jitter > 0.0 {
            rand::rng().random_range(1.0 - self.jitter..=1.0 + self.jitter)
        } else {
            1.0
        };
        Duration::from_secs_f64(base * scale)
    }
}

#[derive(Serialize)]
struct WireRequest<'a> {
    prompt: &'a str,
    temperature: f64,
    max_new_tokens: u32,
    #[serde(skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    image_uri: Option<&'a str>,
    #[serde(skip_serializing_if = "Option::is_none")]
    question: Option<&'a str>,
}

#[derive(Deserialize)]
struct WireResponse {
    text: String,
}

enum Attempt {
    Retryable(String),
    Fatal(BackendError),
}

/// JSON-over-HTTP client. Each request is a POST to `base_url`.
#[derive(Debug, Clone)]
pub struct HttpBackend {
    endpoint: BackendEndpoint,
    client: reqwest::Client,
    backoff: Backoff,
}

impl HttpBackend {
    pub fn new(endpoint: BackendEndpoint) -> Result<Self, BackendError> {
        endpoint.validate()?;
        let client = reqwest::Client::builder()
            .timeout(endpoint.timeout)
            .build()
            .map_err(|e| BackendError::Config(format!("failed to build HTTP client: {e}")))?;
        Ok(Self {
            endpoint,
            client,
            backoff: Backoff::default(),
        })
    }

    pub fn with_backoff(mut self, backoff: Backoff) -> Self {
        self.backoff = backoff;
        self
    }

    pub fn endpoint(&self) -> &BackendEndpoint {
        &self.endpoint
    }

    fn wire_request<'a>(&self, request: &'a BackendRequest) -> WireRequest<'a> {
        let decoding = &self.endpoint.decoding;
        let (image_uri, question) = match request {
            BackendRequest::Completion { .. } => (None, None),
            BackendRequest::VisualContext {
                image_uri,
                question,
                ..
            } => (Some(image_uri.as_str()), Some(question.as_str())),
        };
        WireRequest {
            prompt: request.prompt(),
            temperature: decoding.temperature,
            max_new_tokens: decoding.max_new_tokens,
            seed: decoding.seed,
            image_uri,
            question,
        }
    }

    async fn attempt(&self, body: &WireRequest<'_>) -> Result<String, Attempt> {
        let mut req = self.client.post(&self.endpoint.base_url).json(body);
        if let Some(token) = &self.endpoint.bearer_token {
            req = req.bearer_auth(token);
        }
        let response = req
            .send()
            .await
            .map_err(|e| Attempt::Retryable(e.to_string()))?;
        let status = response.status();
        if status.is_server_error() || status == reqwest::StatusCode::TOO_MANY_REQUESTS {
            return Err(Attempt::Retryable(format!("HTTP {status}")));
        }
        let bytes = response
            .bytes()
            .await
            .map_err(|e| Attempt::Retryable(e.to_string()))?;
        if !status.is_success() {
            return Err(Attempt::Fatal(self.protocol(format!(
                "HTTP {status}: {}",
                String::from_utf8_lossy(&bytes)
            ))));
        }
        let parsed: WireResponse = serde_json::from_slice(&bytes)
            .map_err(|e| Attempt::Fatal(self.protocol(format!("malformed response body: {e}"))))?;
        Ok(parsed.text)
    }

    fn protocol(&self, message: String) -> BackendError {
        BackendError::Protocol {
            backend: self.endpoint.name.clone(),
            message,
        }
    }
}

#[async_trait]
impl Backend for HttpBackend {
    fn name(&self) -> &str {
        &self.endpoint.name
    }

    fn is_deterministic(&self) -> bool {
        self.endpoint.decoding.is_deterministic()
    }

    async fn generate(&self, request: &BackendRequest) -> Result<String, BackendError> {
        let body = self.wire_request(request);
        let attempts = self.endpoint.max_retries + 1;
        let mut last = String::new();
        for attempt in 0..attempts {
            if attempt > 0 {
                tokio::time::sleep(self.backoff.delay(attempt - 1)).await;
            }
            match self.attempt(&body).await {
                Ok(text) => return Ok(text),
                Err(Attempt::Fatal(e)) => return Err(e),
                Err(Attempt::Retryable(message)) => {
                    tracing::debug!(backend = %self.endpoint.name, attempt, %message, "transient backend failure");
                    last = message;
                }
            }
        }
        Err(BackendError::Transport {
            backend: self.endpoint.name.clone(),
            attempts,
            message: last,
        })
    }
}

#[cfg(test)]
mod tests {
    use std::sync::atomic::{AtomicU32, Ordering};
    use std::sync::Arc;

    use axum::extract::State;
    use axum::http::{HeaderMap, StatusCode};
    use axum::routing::post;
    use axum::{Json, Router};
    use parking_lot::Mutex;
    use serde_json::{json, Value};

    use super::*;
    use crate::backends::{complete_text, extract_visual_context, DecodingParams};
    use crate::model::ImageRef;

    const FAST: Backoff = Backoff {
        initial: Duration::from_millis(5),
        factor: 2.0,
        jitter: 0.2,
    };

    async fn serve(router: Router) -> String {
        let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
        let addr = listener.local_addr().unwrap();
        tokio::spawn(async move { axum::serve(listener, router).await.unwrap() });
        format!("http://{addr}/generate")
    }

    /// Request body and authorization header.
    type Captured = (String, Option<String>);

    #[derive(Clone, Default)]
    struct Seen {
        bodies: Arc<Mutex<Vec<Captured>>>,
    }

    async fn echo(State(seen): State<Seen>, headers: HeaderMap, body: String) -> Json<Value> {
        let auth = headers
            .get("authorization")
            .map(|v| v.to_str().unwrap().to_string());
        seen.bodies.lock().push((body, auth));
        Json(json!({ "text": "  There was flood damage \n" }))
    }

    #[tokio::test]
    async fn wire_format_and_trimming() {
        let seen = Seen::default();
        let url = serve(
            Router::new()
                .route("/generate", post(echo))
                .with_state(seen.clone()),
        )
        .await;
        let mut endpoint = BackendEndpoint::new("flan", url);
        endpoint.decoding = DecodingParams {
            temperature: 0.0,
            max_new_tokens: 64,
            seed: Some(7),
        };
        endpoint.bearer_token = Some("secret".into());
        let backend = HttpBackend::new(endpoint).unwrap();
        assert!(backend.is_deterministic());

        let text = complete_text(&backend, "Question: q\nAnswer:")
            .await
            .unwrap();
        assert_eq!(text, "There was flood damage");
        let image = ImageRef {
            id: "i".into(),
            uri: "images/1.jpg".into(),
        };
        extract_visual_context(&backend, &image, "Is it flooded?")
            .await
            .unwrap();

        let bodies = seen.bodies.lock().clone();
        assert_eq!(
            bodies[0].0,
            r#"{"prompt":"Question: q\nAnswer:","temperature":0.0,"max_new_tokens":64,"seed":7}"#
        );
        assert_eq!(
            bodies[1].0,
            r#"{"prompt":"Is it flooded?","temperature":0.0,"max_new_tokens":64,"seed":7,"image_uri":"images/1.jpg","question":"Is it flooded?"}"#
        );
        assert_eq!(bodies[0].1.as_deref(), Some("Bearer secret"));
    }

    #[tokio::test]
    async fn retries_then_gives_up() {
        let hits = Arc::new(AtomicU32::new(0));
        let counter = hits.clone();
        let router = Router::new().route(
            "/generate",
            post(move || {
                let counter = counter.clone();
                async move {
                    counter.fetch_add(1, Ordering::SeqCst);
                    StatusCode::SERVICE_UNAVAILABLE
                }
            }),
        );
        let mut endpoint = BackendEndpoint::new("flaky", serve(router).await);
        endpoint.max_retries = 3;
        let backend = HttpBackend::new(endpoint).unwrap().with_backoff(FAST);
        match complete_text(&backend, "p").await {
            Err(BackendError::Transport { attempts, .. }) => assert_eq!(attempts, 4),
            other => panic!("unexpected {other:?}"),
        }
        assert_eq!(hits.load(Ordering::SeqCst), 4);
    }

    #[tokio::test]
    async fn recovers_after_transient_failure() {
        let hits = Arc::new(AtomicU32::new(0));
        let counter = hits.clone();
        let router = Router::new().route(
            "/generate",
            post(move || {
                let counter = counter.clone();
                async move {
                    if counter.fetch_add(1, Ordering::SeqCst) == 0 {
                        Err(StatusCode::BAD_GATEWAY)
                    } else {
                        Ok(Json(json!({ "text": "ok" })))
                    }
                }
            }),
        );
        let backend = HttpBackend::new(BackendEndpoint::new("b", serve(router).await))
            .unwrap()
            .with_backoff(FAST);
        assert_eq!(complete_text(&backend, "p").await.unwrap(), "ok");
        assert_eq!(hits.load(Ordering::SeqCst), 2);
    }

    #[tokio::test]
    async fn unreachable_endpoint() {
        let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        drop(listener);
        let mut endpoint = BackendEndpoint::new("gone", format!("http://{addr}/generate"));
        endpoint.max_retries = 2;
        let backend = HttpBackend::new(endpoint).unwrap().with_backoff(FAST);
        match complete_text(&backend, "p").await {
            Err(BackendError::Transport { attempts, .. }) => assert_eq!(attempts, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[tokio::test]
    async fn malformed_body_is_protocol_error() {
        let router = Router::new().route("/generate", post(|| async { "not json" }));
        let backend = HttpBackend::new(BackendEndpoint::new("b", serve(router).await)).unwrap();
        assert!(matches!(
            complete_text(&backend, "p").await,
            Err(BackendError::Protocol { .. })
        ));
        let router =
            Router::new().route("/generate", post(|| async { Json(json!({ "text": " " })) }));
        let backend = HttpBackend::new(BackendEndpoint::new("b", serve(router).await)).unwrap();
        assert!(matches!(
            complete_text(&backend, "p").await,
            Err(BackendError::EmptyCompletion { .. })
        ));
    }

    #[test]
    fn backoff_schedule() {
        let b = Backoff::default();
        for retry in 0..4 {
            let nominal = 0.5 * 2f64.powi(retry as i32);
            let d = b.delay(retry).as_secs_f64();
            assert!(
                d >= nominal * 0.8 - 1e-9 && d <= nominal * 1.2 + 1e-9,
                "{d} vs {nominal}"
            );
        }
    }
}
