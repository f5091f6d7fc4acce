//! Talks to model servers over the JSON completion protocol. A toy server
//! is started in-process; point `base_url` at a real one instead.
//!
//! ```bash
//! cargo run --example http_backend
//! ```

use axum::routing::post;
use axum::{Json, Router};
use serde_json::{json, Value};
use vqa_tsp::backends::{BackendEndpoint, DecodingParams, HttpBackend};
use vqa_tsp::fixtures::flood_roads_sample;
use vqa_tsp::pipeline::{Backends, Pipeline, PipelineMode};

async fn toy_model(Json(body): Json<Value>) -> Json<Value> {
    let prompt = body["prompt"].as_str().unwrap_or_default();
    let text = if body.get("image_uri").is_some() {
        "a flooded street; water covers the road surface".to_string()
    } else if prompt.contains("step by step") {
        "The road surface is under water, so the road is damaged.".to_string()
    } else {
        format!("Yes. (answered from a {}-character prompt)", prompt.len())
    };
    Json(json!({ "text": text }))
}

#[tokio::main]
async fn main() -> Result<(), Box<dyn std::error::Error>> {
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await?;
    let url = format!("http://{}/generate", listener.local_addr()?);
    tokio::spawn(async move {
        axum::serve(listener, Router::new().route("/generate", post(toy_model))).await
    });

    let mut completion = BackendEndpoint::new("toy-lm", &url);
    completion.decoding = DecodingParams {
        temperature: 0.0,
        max_new_tokens: 64,
        seed: Some(7),
    };
    let backends = Backends::new(
        HttpBackend::new(BackendEndpoint::new("toy-captioner", &url))?,
        HttpBackend::new(completion)?,
    );
    let pipeline = Pipeline::new(backends).with_timings(true);
    let result = pipeline
        .run_sample(&flood_roads_sample(), PipelineMode::TwoStage)
        .await
        .map_err(|f| f.error.to_string())?;
    println!("context: {}", result.visual_context.text);
    println!(
        "thought: {}",
        result.thought.map(|t| t.text).unwrap_or_default()
    );
    println!("answer:  {}", result.answer.text);
    println!("timings: {:?}", result.timings_ms);
    Ok(())
}
