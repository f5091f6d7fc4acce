//! Replays the flooded-roads question with scripted backends. The
//! chain-of-thought answer is biased by its own thought; re-injecting the
//! visual context in the answer prompt corrects it.
//!
//! ```bash
//! cargo run --example flood_roads_replay
//! ```

use vqa_tsp::fixtures;
use vqa_tsp::pipeline::{Pipeline, PipelineMode};

#[tokio::main]
async fn main() {
    let (sample, backends) = fixtures::flood_roads();
    let pipeline = Pipeline::new(backends);

    for mode in [PipelineMode::ZeroShotCoT, PipelineMode::TwoStage] {
        let result = match pipeline.run_sample(&sample, mode).await {
            Ok(r) => r,
            Err(f) => {
                eprintln!("{}: {}", f.sample_id, f.error);
                std::process::exit(1);
            }
        };
        println!("== {}", mode.label());
        if let Some(p1) = &result.stage1_prompt {
            println!("-- stage 1 prompt\n{}", p1.text);
        }
        if let Some(thought) = &result.thought {
            println!("-- thought\n{}", thought.text);
        }
        println!("-- stage 2 prompt\n{}", result.stage2_prompt.text);
        println!("-- answer\n{}\n", result.answer.text);
    }
    // == ZFDDA zero-shot CoT
    // ...
    // -- answer
    // No, there is no damage to roads or bridges in the area.
    //
    // == VQA-TSP
    // ...
    // -- answer
    // There was flood damage
}
