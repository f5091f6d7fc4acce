//! Scores all three modes on a synthetic dataset in which 40% of the
//! questions are answered correctly only when the answer prompt sees the
//! visual context.
//!
//! ```bash
//! cargo run --example baseline_comparison -- 500 0.4
//! ```

use std::collections::BTreeMap;
use std::num::NonZeroUsize;

use vqa_tsp::evaluation::{auto_score_closed, render_report, EvaluationSummary};
use vqa_tsp::fixtures::hallucination_suite;
use vqa_tsp::pipeline::{Pipeline, PipelineMode};

#[tokio::main]
async fn main() {
    let mut args = std::env::args().skip(1);
    let len: usize = args.next().and_then(|a| a.parse().ok()).unwrap_or(200);
    let gated: f64 = args.next().and_then(|a| a.parse().ok()).unwrap_or(0.4);

    let (samples, backends) = hallucination_suite(len, gated);
    let pipeline = Pipeline::new(backends);
    let mut summaries = BTreeMap::new();
    for mode in PipelineMode::ALL {
        let outcomes = pipeline
            .run_batch(&samples, mode, NonZeroUsize::new(16).unwrap())
            .await;
        let records: Vec<_> = outcomes
            .iter()
            .zip(&samples)
            .filter_map(|(o, s)| {
                let result = o.as_ref().ok()?;
                Some((s.qtype, auto_score_closed(result, s)?))
            })
            .collect();
        summaries.insert(mode, EvaluationSummary::from_records(&records));
    }
    println!(
        "{len} samples, {:.0}% gated on the visual context\n",
        gated * 100.0
    );
    print!("{}", render_report(&summaries));
}
