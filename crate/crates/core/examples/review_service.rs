//! Starts the review service on a free port and lets three simulated
//! evaluators work through a run over HTTP, then prints the live summary.
//!
//! ```bash
//! cargo run --example review_service
//! ```

use std::num::NonZeroUsize;
use std::sync::Arc;

use serde_json::{json, Value};
use vqa_tsp::fixtures::hallucination_suite;
use vqa_tsp::pipeline::{Pipeline, PipelineMode, ResultLine};
use vqa_tsp::review::{review_items, router, ReviewRun, ServiceState};

#[tokio::main]
async fn main() -> Result<(), Box<dyn std::error::Error>> {
    let (samples, backends) = hallucination_suite(12, 0.4);
    let outcomes = Pipeline::new(backends)
        .run_batch(
            &samples,
            PipelineMode::TwoStage,
            NonZeroUsize::new(4).unwrap(),
        )
        .await;
    let lines: Vec<ResultLine> = outcomes.iter().map(ResultLine::from).collect();

    let dir = tempfile::tempdir()?;
    let items = review_items(&lines, &samples)?;
    let run = ReviewRun::open("demo", items, 3, dir.path().join("ratings.jsonl"))?;
    let app = router(ServiceState::new([Arc::new(run)]), None);
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await?;
    let base = format!("http://{}", listener.local_addr()?);
    tokio::spawn(async move { axum::serve(listener, app).await });
    println!("serving on {base}");

    let evaluators = ["ana", "bo", "cy"].map(|name| {
        let base = base.clone();
        tokio::spawn(async move {
            let http = reqwest::Client::new();
            let mut rated = 0;
            loop {
                let resp = http
                    .get(format!("{base}/api/runs/demo/next?evaluator={name}"))
                    .send()
                    .await?;
                if resp.status() == reqwest::StatusCode::NO_CONTENT {
                    return Ok::<_, reqwest::Error>(rated);
                }
                let task: Value = resp.json().await?;
                // cy disagrees with the others on multiple-choice answers
                let multiple_choice = task["options"].as_array().is_some_and(|o| !o.is_empty());
                let plausible = !(name == "cy" && multiple_choice);
                let body = json!({
                    "result_ref": task["result_ref"],
                    "evaluator_id": name,
                    "verdict": if plausible { "plausible" } else { "implausible" },
                });
                http.post(format!("{base}/api/runs/demo/ratings"))
                    .json(&body)
                    .send()
                    .await?;
                rated += 1;
            }
        })
    });
    for (name, handle) in ["ana", "bo", "cy"].iter().zip(evaluators) {
        println!("{name} rated {} items", handle.await??);
    }

    let summary: Value = reqwest::get(format!("{base}/api/runs/demo/summary"))
        .await?
        .json()
        .await?;
    println!("{}", serde_json::to_string_pretty(&summary)?);
    Ok(())
}
