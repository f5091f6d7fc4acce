//! Scripted datasets and mock backends for demos and tests.
//!
//! [`flood_roads`] replays the flood-damage example in which a chain-of-thought
//! answer goes wrong and re-injecting the visual context fixes it.
//! [`hallucination_suite`] scales that failure mode up to a dataset in which
//! a chosen fraction of samples only get the right answer when the visual
//! context reaches the answer prompt.

use crate::backends::{MockBackend, MockResponse, MockRule, MockScript};
use crate::model::{ImageRef, QuestionType, VqaSample};
use crate::pipeline::Backends;
use crate::prompting::STEP_BY_STEP;

pub const FLOOD_ROADS_QUESTION: &str = "Is there any damage to roads or bridges in the area?";
pub const FLOOD_ROADS_CONTEXT: &str = "a flooded street; water covers the road surface";
pub const FLOOD_ROADS_THOUGHT: &str = "There is no evidence to suggest that any damage occurred.";
pub const FLOOD_ROADS_CORRECTED_ANSWER: &str = "There was flood damage";
pub const FLOOD_ROADS_HALLUCINATED_ANSWER: &str =
    "No, there is no damage to roads or bridges in the area.";

pub fn flood_roads_sample() -> VqaSample {
    VqaSample {
        sample_id: "flood-roads".into(),
        image: ImageRef {
            id: "flood-roads".into(),
            uri: "images/flood-roads.jpg".into(),
        },
        question: FLOOD_ROADS_QUESTION.into(),
        qtype: QuestionType::YesNo,
        options: vec![],
        ground_truth: Some("yes".into()),
    }
}

pub fn flood_roads_context_script() -> MockScript {
    MockScript {
        rules: vec![MockRule::text("roads or bridges", FLOOD_ROADS_CONTEXT)],
        default: MockResponse::Text("a flooded area".into()),
    }
}

/// The step-by-step prompt yields the biased thought; the answer is correct
/// only when the answer prompt carries the visual context.
pub fn flood_roads_completion_script() -> MockScript {
    MockScript {
        rules: vec![MockRule::text(STEP_BY_STEP, FLOOD_ROADS_THOUGHT)],
        default: MockResponse::Gated {
            marker: FLOOD_ROADS_CONTEXT.into(),
            correct: FLOOD_ROADS_CORRECTED_ANSWER.into(),
            hallucinated: FLOOD_ROADS_HALLUCINATED_ANSWER.into(),
        },
    }
}

pub fn flood_roads() -> (VqaSample, Backends) {
    let backends = Backends::new(
        MockBackend::new("caption-mock", flood_roads_context_script()).expect("valid script"),
        MockBackend::new("completion-mock", flood_roads_completion_script()).expect("valid script"),
    );
    (flood_roads_sample(), backends)
}

const SAFE_PLACE_OPTIONS: [&str; 4] = ["house", "plane", "boat", "no safe place"];

/// Whether sample `index` is gated. The first `len` samples contain
/// `floor(len * gated_fraction)` gated ones, spread evenly.
pub fn is_gated(index: usize, gated_fraction: f64) -> bool {
    let before = (index as f64 * gated_fraction).floor();
    let after = ((index + 1) as f64 * gated_fraction).floor();
    after > before
}

/// `len` samples alternating yes-no and multiple-choice, all with ground
/// truth. Gated samples answer correctly only when the answer prompt contains
/// their visual context; the rest always answer correctly. Every chain of
/// thought is the same unhelpful "no evidence" thought.
pub fn hallucination_suite(len: usize, gated_fraction: f64) -> (Vec<VqaSample>, Backends) {
    let (samples, context, completion) = hallucination_suite_scripts(len, gated_fraction);
    let backends = Backends::new(
        MockBackend::new("caption-mock", context).expect("valid script"),
        MockBackend::new("completion-mock", completion).expect("valid script"),
    );
    (samples, backends)
}

/// The samples plus the context and completion scripts behind
/// [`hallucination_suite`].
pub fn hallucination_suite_scripts(
    len: usize,
    gated_fraction: f64,
) -> (Vec<VqaSample>, MockScript, MockScript) {
    let mut samples = Vec::with_capacity(len);
    let mut context_rules = Vec::with_capacity(len);
    let mut completion_rules = vec![MockRule::text(STEP_BY_STEP, FLOOD_ROADS_THOUGHT)];
    for i in 0..len {
        let site = format!("site {i:05}");
        let uri = format!("images/hf-{i:05}.jpg");
        let context = format!("CTX-{i:05}: floodwater covers the road at {site}");
        let (sample, correct, hallucinated) = if i % 2 == 0 {
            (
                VqaSample {
                    sample_id: format!("hf-{i:05}"),
                    image: ImageRef {
                        id: format!("hf-{i:05}"),
                        uri: uri.clone(),
                    },
                    question: format!("Is there any damage to the road at {site}?"),
                    qtype: QuestionType::YesNo,
                    options: vec![],
                    ground_truth: Some("yes".into()),
                },
                format!("Yes, the road at {site} is flooded."),
                format!("No, there is no damage at {site}."),
            )
        } else {
            (
                VqaSample {
                    sample_id: format!("hf-{i:05}"),
                    image: ImageRef {
                        id: format!("hf-{i:05}"),
                        uri: uri.clone(),
                    },
                    question: format!("Where is a safe place near {site}?"),
                    qtype: QuestionType::MultipleChoice,
                    options: SAFE_PLACE_OPTIONS.iter().map(|s| s.to_string()).collect(),
                    ground_truth: Some("no safe place".into()),
                },
                "No safe place is left above the water.".to_string(),
                "The house.".to_string(),
            )
        };
        let response = if is_gated(i, gated_fraction) {
            MockResponse::Gated {
                marker: context.clone(),
                correct,
                hallucinated,
            }
        } else {
            MockResponse::Text(correct)
        };
        context_rules.push(MockRule::text(uri, context));
        completion_rules.push(MockRule {
            matcher: format!("{site}?"),
            response,
        });
        samples.push(sample);
    }
    let context = MockScript {
        rules: context_rules,
        default: MockResponse::Text("a flooded area".into()),
    };
    let completion = MockScript {
        rules: completion_rules,
        default: MockResponse::Text("I am not sure.".into()),
    };
    (samples, context, completion)
}
