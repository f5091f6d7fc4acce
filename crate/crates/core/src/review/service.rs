use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use axum::body::Body;
use axum::extract::{Path as UrlPath, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{Html, IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Deserialize;
use serde_json::json;
use tower_http::services::ServeDir;

use super::{ReviewError, ReviewRun};
use crate::evaluation::{ResultRef, Verdict};

#[derive(Debug, Clone)]
pub struct ServiceState {
    runs: Arc<BTreeMap<String, Arc<ReviewRun>>>,
    http: reqwest::Client,
}

impl ServiceState {
    pub fn new(runs: impl IntoIterator<Item = Arc<ReviewRun>>) -> Self {
        Self {
            runs: Arc::new(
                runs.into_iter()
                    .map(|r| (r.name().to_string(), r))
                    .collect(),
            ),
            http: reqwest::Client::new(),
        }
    }

    fn run(&self, name: &str) -> Result<&Arc<ReviewRun>, ApiError> {
        self.runs
            .get(name)
            .ok_or_else(|| ApiError(StatusCode::NOT_FOUND, format!("unknown run {name:?}")))
    }
}

struct ApiError(StatusCode, String);

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(json!({ "error": self.1 }))).into_response()
    }
}

impl From<ReviewError> for ApiError {
    fn from(e: ReviewError) -> Self {
        let status = match e {
            ReviewError::Duplicate { .. } => StatusCode::CONFLICT,
            ReviewError::UnknownResult(_) => StatusCode::NOT_FOUND,
            ReviewError::EmptyEvaluator => StatusCode::BAD_REQUEST,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        ApiError(status, e.to_string())
    }
}

#[derive(Deserialize)]
struct NextQuery {
    #[serde(default)]
    evaluator: String,
}

#[derive(Deserialize)]
struct RatingBody {
    result_ref: ResultRef,
    evaluator_id: String,
    verdict: Verdict,
}

async fn next_task(
    State(state): State<ServiceState>,
    UrlPath(run): UrlPath<String>,
    Query(q): Query<NextQuery>,
) -> Result<Response, ApiError> {
    match state.run(&run)?.next_task(&q.evaluator)? {
        Some(task) => Ok(Json(task).into_response()),
        None => Ok(StatusCode::NO_CONTENT.into_response()),
    }
}

async fn submit_rating(
    State(state): State<ServiceState>,
    UrlPath(run): UrlPath<String>,
    Json(body): Json<RatingBody>,
) -> Result<Response, ApiError> {
    let record =
        state
            .run(&run)?
            .submit_rating(body.result_ref, &body.evaluator_id, body.verdict)?;
    Ok((StatusCode::CREATED, Json(record)).into_response())
}

async fn summary(
    State(state): State<ServiceState>,
    UrlPath(run): UrlPath<String>,
) -> Result<Response, ApiError> {
    Ok(Json(state.run(&run)?.live_summary()).into_response())
}

fn content_type(uri: &str) -> &'static str {
    let ext = uri
        .rsplit('.')
        .next()
        .unwrap_or_default()
        .to_ascii_lowercase();
    match ext.as_str() {
        "jpg" | "jpeg" => "image/jpeg",
        "png" => "image/png",
        "gif" => "image/gif",
        "webp" => "image/webp",
        "bmp" => "image/bmp",
        "tif" | "tiff" => "image/tiff",
        _ => "application/octet-stream",
    }
}

async fn image(
    State(state): State<ServiceState>,
    UrlPath(image_id): UrlPath<String>,
) -> Result<Response, ApiError> {
    let (run, image) = state
        .runs
        .values()
        .find_map(|r| r.find_image(&image_id).map(|i| (r, i)))
        .ok_or_else(|| ApiError(StatusCode::NOT_FOUND, format!("unknown image {image_id:?}")))?;
    let uri = image.uri.as_str();
    if uri.starts_with("http://") || uri.starts_with("https://") {
        let upstream = state
            .http
            .get(uri)
            .send()
            .await
            .map_err(|e| ApiError(StatusCode::BAD_GATEWAY, e.to_string()))?;
        if !upstream.status().is_success() {
            return Err(ApiError(
                StatusCode::BAD_GATEWAY,
                format!("upstream HTTP {}", upstream.status()),
            ));
        }
        let ctype = upstream
            .headers()
            .get(header::CONTENT_TYPE)
            .and_then(|v| v.to_str().ok())
            .unwrap_or(content_type(uri))
            .to_string();
        let bytes = upstream
            .bytes()
            .await
            .map_err(|e| ApiError(StatusCode::BAD_GATEWAY, e.to_string()))?;
        return Ok(([(header::CONTENT_TYPE, ctype)], bytes).into_response());
    }
    let local = uri.strip_prefix("file://").unwrap_or(uri);
    let path: PathBuf = match run.image_root() {
        Some(root) if Path::new(local).is_relative() => root.join(local),
        _ => PathBuf::from(local),
    };
    let bytes = tokio::fs::read(&path)
        .await
        .map_err(|e| ApiError(StatusCode::NOT_FOUND, format!("{}: {e}", path.display())))?;
    Ok((
        [(header::CONTENT_TYPE, content_type(uri))],
        Body::from(bytes),
    )
        .into_response())
}

const FALLBACK_INDEX: &str = "<!doctype html>\n<title>Review</title>\n<p>The review UI assets are not installed. \
The JSON API is available under <code>/api/runs/{run}/next</code>, <code>/api/runs/{run}/ratings</code> \
and <code>/api/runs/{run}/summary</code>.</p>\n";

/// Review API plus static UI assets from `ui_dir` (a placeholder page when
/// none is configured).
pub fn router(state: ServiceState, ui_dir: Option<&Path>) -> Router {
    let api = Router::new()
        .route("/api/runs/{run}/next", get(next_task))
        .route("/api/runs/{run}/ratings", post(submit_rating))
        .route("/api/runs/{run}/summary", get(summary))
        .route("/api/images/{image_id}", get(image))
        .with_state(state);
    match ui_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api.route("/", get(|| async { Html(FALLBACK_INDEX) })),
    }
}

#[cfg(test)]
mod tests {
    use axum::http::Request;
    use http_body_util::BodyExt;
    use tower::ServiceExt;

    use super::*;
    use crate::model::{ImageRef, QuestionType};
    use crate::pipeline::PipelineMode;
    use crate::review::ReviewItem;

    fn setup(dir: &Path) -> Router {
        std::fs::create_dir_all(dir.join("images")).unwrap();
        std::fs::write(dir.join("images/s1.png"), b"\x89PNG fake").unwrap();
        let items = ["s1", "s2"]
            .iter()
            .map(|id| ReviewItem {
                result_ref: ResultRef {
                    sample_id: id.to_string(),
                    mode: PipelineMode::TwoStage,
                },
                image: ImageRef {
                    id: format!("img-{id}"),
                    uri: format!("images/{id}.png"),
                },
                qtype: QuestionType::YesNo,
                question: "Is there any damage to roads or bridges in the area?".into(),
                options: vec![],
                answer: "There was flood damage".into(),
                thought: None,
            })
            .collect();
        let run = ReviewRun::open("r1", items, 2, dir.join("ratings.jsonl"))
            .unwrap()
            .with_image_root(dir);
        router(ServiceState::new([Arc::new(run)]), None)
    }

    async fn call(app: &Router, req: Request<Body>) -> (StatusCode, Vec<u8>) {
        let resp = app.clone().oneshot(req).await.unwrap();
        let status = resp.status();
        (
            status,
            resp.into_body()
                .collect()
                .await
                .unwrap()
                .to_bytes()
                .to_vec(),
        )
    }

    fn rating(evaluator: &str, sample: &str) -> Request<Body> {
        let body = json!({
            "result_ref": { "sample_id": sample, "mode": "vqa-tsp" },
            "evaluator_id": evaluator,
            "verdict": "plausible"
        });
        Request::post("/api/runs/r1/ratings")
            .header("content-type", "application/json")
            .body(Body::from(body.to_string()))
            .unwrap()
    }

    #[tokio::test]
    async fn api_flow() {
        let dir = tempfile::tempdir().unwrap();
        let app = setup(dir.path());

        let (status, body) = call(
            &app,
            Request::get("/api/runs/r1/next?evaluator=a")
                .body(Body::empty())
                .unwrap(),
        )
        .await;
        assert_eq!(status, StatusCode::OK);
        let task: serde_json::Value = serde_json::from_slice(&body).unwrap();
        assert_eq!(task["result_ref"]["sample_id"], "s1");
        assert_eq!(task["image_id"], "img-s1");

        assert_eq!(call(&app, rating("a", "s1")).await.0, StatusCode::CREATED);
        assert_eq!(call(&app, rating("a", "s1")).await.0, StatusCode::CONFLICT);
        assert_eq!(call(&app, rating("a", "zz")).await.0, StatusCode::NOT_FOUND);
        assert_eq!(call(&app, rating("a", "s2")).await.0, StatusCode::CREATED);

        let (status, _) = call(
            &app,
            Request::get("/api/runs/r1/next?evaluator=a")
                .body(Body::empty())
                .unwrap(),
        )
        .await;
        assert_eq!(status, StatusCode::NO_CONTENT);
        let (status, _) = call(
            &app,
            Request::get("/api/runs/nope/next?evaluator=a")
                .body(Body::empty())
                .unwrap(),
        )
        .await;
        assert_eq!(status, StatusCode::NOT_FOUND);
        let (status, _) = call(
            &app,
            Request::get("/api/runs/r1/next")
                .body(Body::empty())
                .unwrap(),
        )
        .await;
        assert_eq!(status, StatusCode::BAD_REQUEST);

        let (status, body) = call(
            &app,
            Request::get("/api/runs/r1/summary")
                .body(Body::empty())
                .unwrap(),
        )
        .await;
        assert_eq!(status, StatusCode::OK);
        let summary: serde_json::Value = serde_json::from_slice(&body).unwrap();
        assert_eq!(summary["summary"]["n_q"], 2);
        assert_eq!(summary["summary"]["kappa"], serde_json::Value::Null);
        assert_eq!(summary["evaluators"]["a"], 2);
    }

    #[tokio::test]
    async fn images_and_index() {
        let dir = tempfile::tempdir().unwrap();
        let app = setup(dir.path());
        let resp = app
            .clone()
            .oneshot(
                Request::get("/api/images/img-s1")
                    .body(Body::empty())
                    .unwrap(),
            )
            .await
            .unwrap();
        assert_eq!(resp.status(), StatusCode::OK);
        assert_eq!(resp.headers()[header::CONTENT_TYPE], "image/png");
        let (status, _) = call(
            &app,
            Request::get("/api/images/img-s2")
                .body(Body::empty())
                .unwrap(),
        )
        .await;
        assert_eq!(status, StatusCode::NOT_FOUND);
        let (status, _) = call(
            &app,
            Request::get("/api/images/unknown")
                .body(Body::empty())
                .unwrap(),
        )
        .await;
        assert_eq!(status, StatusCode::NOT_FOUND);
        let (status, body) = call(&app, Request::get("/").body(Body::empty()).unwrap()).await;
        assert_eq!(status, StatusCode::OK);
        assert!(String::from_utf8(body).unwrap().contains("/api/runs/"));
    }

    #[tokio::test]
    async fn serves_ui_dir() {
        let dir = tempfile::tempdir().unwrap();
        let ui = dir.path().join("ui");
        std::fs::create_dir_all(&ui).unwrap();
        std::fs::write(ui.join("index.html"), "<h1>review</h1>").unwrap();
        let run = ReviewRun::open(
            "r1",
            vec![ReviewItem {
                result_ref: ResultRef {
                    sample_id: "s".into(),
                    mode: PipelineMode::NoCoT,
                },
                image: ImageRef {
                    id: "i".into(),
                    uri: "i.jpg".into(),
                },
                qtype: QuestionType::FreeForm,
                question: "q".into(),
                options: vec![],
                answer: "a".into(),
                thought: None,
            }],
            1,
            dir.path().join("r.jsonl"),
        )
        .unwrap();
        let app = router(ServiceState::new([Arc::new(run)]), Some(&ui));
        let (status, body) = call(&app, Request::get("/").body(Body::empty()).unwrap()).await;
        assert_eq!(status, StatusCode::OK);
        assert_eq!(body, b"<h1>review</h1>");
    }
}
