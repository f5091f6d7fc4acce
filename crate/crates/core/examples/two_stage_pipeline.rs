//! Runs the two stages by hand with custom templates, showing what passes
//! from stage one into stage two.
//!
//! ```bash
//! cargo run --example two_stage_pipeline
//! ```

use vqa_tsp::backends::{MockBackend, MockResponse, MockRule, MockScript};
use vqa_tsp::model::{ImageRef, QuestionType, VqaSample};
use vqa_tsp::pipeline::{Backends, Pipeline};
use vqa_tsp::prompting::{
    PromptSet, DEFAULT_GENERAL_WITHOUT_CONTEXT_TEMPLATE, DEFAULT_NO_COT_TEMPLATE,
};

#[tokio::main]
async fn main() -> Result<(), Box<dyn std::error::Error>> {
    let sample = VqaSample {
        sample_id: "river-01".into(),
        image: ImageRef {
            id: "river-01".into(),
            uri: "images/river-01.jpg".into(),
        },
        question: "Where is a safe place for the residents?".into(),
        qtype: QuestionType::MultipleChoice,
        options: vec![
            "house".into(),
            "plane".into(),
            "boat".into(),
            "no safe place".into(),
        ],
        ground_truth: Some("boat".into()),
    };

    let captioner = MockBackend::new(
        "captioner",
        MockScript {
            rules: vec![MockRule::text(
                "river-01",
                "houses submerged up to the roof; a rescue boat nearby",
            )],
            default: MockResponse::Text("a flooded area".into()),
        },
    )?;
    let lm = MockBackend::new(
        "lm",
        MockScript {
            rules: vec![
                MockRule::text(
                    "step by step",
                    "The houses are under water, so people need to leave them.",
                ),
                MockRule::text("rescue boat", "The boat."),
            ],
            default: MockResponse::Text("The house.".into()),
        },
    )?;

    let prompts = PromptSet::from_bodies(
        "Image description: {visual_context}\nQ: {question}\nA: Let's think step by step.",
        "Image description: {visual_context}\nThoughts: {thought_process}\nQ: {question}\nShort answer:",
        DEFAULT_GENERAL_WITHOUT_CONTEXT_TEMPLATE,
        DEFAULT_NO_COT_TEMPLATE,
    )?;
    let pipeline = Pipeline::new(Backends::new(captioner, lm)).with_prompts(prompts);

    let question = sample.prompt_question();
    let one = pipeline.run_stage_one(&sample.image, &question).await?;
    println!("visual context: {}", one.visual_context.text);
    println!("stage 1 prompt:\n{}\n", one.prompt.text);
    println!("thought: {}\n", one.thought.text);

    let two = pipeline
        .run_stage_two(&one.thought, &one.visual_context, &question)
        .await?;
    println!("stage 2 prompt:\n{}\n", two.prompt.text);
    println!(
        "answer: {} (normalized: {:?})",
        two.answer.text, two.answer.normalized
    );
    Ok(())
}
