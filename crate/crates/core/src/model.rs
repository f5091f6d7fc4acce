//! Domain types shared across the harness, dataset ingestion, and answer
//! normalization.
//!
//! A dataset is a single JSON document:
//!
//! ```json
//! { "samples": [ { "sample_id": "s1",
//!                  "image": { "id": "img-1", "uri": "images/1.jpg" },
//!                  "question": "Is there any damage to roads or bridges in the area?",
//!                  "qtype": "yes-no",
//!                  "ground_truth": "yes" } ] }
//! ```
//!
//! `qtype`, `options` and `ground_truth` are optional. When `qtype` is
//! missing it is inferred with [`classify_question_type`]. Unknown fields are
//! ignored with a warning.

use std::collections::HashMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("failed to read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("sample #{index}: {message}")]
    Record { index: usize, message: String },
    #[error("sample {sample_id:?}, field `{field}`: {message}")]
    Invalid {
        sample_id: String,
        field: &'static str,
        message: String,
    },
}

/// Reference to the image a question is asked about. Bytes are never loaded
/// by the harness itself; backends resolve `uri`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ImageRef {
    pub id: String,
    pub uri: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum QuestionType {
    MultipleChoice,
    FreeForm,
    YesNo,
}

impl QuestionType {
    pub const ALL: [QuestionType; 3] = [
        QuestionType::MultipleChoice,
        QuestionType::FreeForm,
        QuestionType::YesNo,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            QuestionType::MultipleChoice => "multiple-choice",
            QuestionType::FreeForm => "free-form",
            QuestionType::YesNo => "yes-no",
        }
    }
}

impl fmt::Display for QuestionType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for QuestionType {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        QuestionType::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| format!("unknown question type {s:?}"))
    }
}

/// One question about one image, with optional closed-form ground truth.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VqaSample {
    pub sample_id: String,
    pub image: ImageRef,
    pub question: String,
    pub qtype: QuestionType,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub options: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ground_truth: Option<String>,
}

impl VqaSample {
    /// Checks the per-sample invariants. Dataset-level uniqueness is checked
    /// by the loader.
    pub fn validate(&self) -> Result<(), DatasetError> {
        let invalid = |field: &'static str, message: String| DatasetError::Invalid {
            sample_id: self.sample_id.clone(),
            field,
            message,
        };
        if self.sample_id.trim().is_empty() {
            return Err(invalid("sample_id", "must be non-empty".into()));
        }
        if self.image.id.trim().is_empty() {
            return Err(invalid("image.id", "must be non-empty".into()));
        }
        if self.image.uri.trim().is_empty() {
            return Err(invalid("image.uri", "must be non-empty".into()));
        }
        if self.question.trim().is_empty() {
            return Err(invalid("question", "must be non-empty".into()));
        }
        match (self.qtype, self.options.is_empty()) {
            (QuestionType::MultipleChoice, true) => {
                return Err(invalid(
                    "options",
                    "multiple-choice sample needs options".into(),
                ))
            }
            (QuestionType::FreeForm | QuestionType::YesNo, false) => {
                return Err(invalid(
                    "options",
                    format!(
                        "options are only allowed on multiple-choice samples, got {}",
                        self.qtype
                    ),
                ))
            }
            _ => {}
        }
        if self.options.iter().any(|o| normalize_answer(o).is_empty()) {
            return Err(invalid("options", "options must be non-empty".into()));
        }
        if let Some(gt) = &self.ground_truth {
            let gt = normalize_answer(gt);
            match self.qtype {
                QuestionType::YesNo if gt != "yes" && gt != "no" => {
                    return Err(invalid(
                        "ground_truth",
                        format!("yes-no ground truth must be \"yes\" or \"no\", got {gt:?}"),
                    ))
                }
                QuestionType::MultipleChoice => {
                    let matches = self
                        .options
                        .iter()
                        .filter(|o| normalize_answer(o) == gt)
                        .count();
                    if matches != 1 {
                        return Err(invalid(
                            "ground_truth",
                            format!("must match exactly one option, matched {matches}"),
                        ));
                    }
                }
                _ => {}
            }
        }
        Ok(())
    }

    /// Index of the option the ground truth refers to, for multiple-choice
    /// samples that carry one.
    pub fn ground_truth_option(&self) -> Option<usize> {
        let gt = normalize_answer(self.ground_truth.as_deref()?);
        self.options.iter().position(|o| normalize_answer(o) == gt)
    }

    /// The question as shown to the model: multiple-choice options are
    /// appended as ` -opt1 -opt2 ...`.
    pub fn prompt_question(&self) -> String {
        let mut q = self.question.clone();
        for option in &self.options {
            q.push_str(" -");
            q.push_str(option);
        }
        q
    }
}

/// Question-relevant textual description of an image.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VisualContext {
    pub text: String,
    pub source_backend: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ThoughtProcess {
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FinalAnswer {
    pub text: String,
    pub normalized: String,
}

impl FinalAnswer {
    pub fn new(text: impl Into<String>) -> Self {
        let text = text.into();
        let normalized = normalize_answer(&text);
        Self { text, normalized }
    }
}

/// Lowercases, trims, collapses internal whitespace, and strips terminal
/// sentence punctuation (`.`, `!`, `?`). Idempotent.
pub fn normalize_answer(text: &str) -> String {
    let collapsed = text
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .to_lowercase();
    collapsed
        .trim_end_matches(|c: char| matches!(c, '.' | '!' | '?') || c.is_whitespace())
        .to_string()
}

/// Fallback used when a record carries no type label.
pub fn classify_question_type(options: &[String], ground_truth: Option<&str>) -> QuestionType {
    if !options.is_empty() {
        return QuestionType::MultipleChoice;
    }
    match ground_truth.map(normalize_answer).as_deref() {
        Some("yes" | "no") => QuestionType::YesNo,
        _ => QuestionType::FreeForm,
    }
}

const KNOWN_SAMPLE_FIELDS: [&str; 6] = [
    "sample_id",
    "image",
    "question",
    "qtype",
    "options",
    "ground_truth",
];

#[derive(Deserialize)]
struct RawSample {
    sample_id: String,
    image: ImageRef,
    question: String,
    #[serde(default)]
    qtype: Option<QuestionType>,
    #[serde(default)]
    options: Vec<String>,
    #[serde(default)]
    ground_truth: Option<String>,
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Vec<VqaSample>, DatasetError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| DatasetError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_dataset(&text)
}

pub fn parse_dataset(text: &str) -> Result<Vec<VqaSample>, DatasetError> {
    let parse_err = |e: serde_json::Error| DatasetError::Parse {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    };
    let doc: Map<String, Value> = serde_json::from_str(text).map_err(parse_err)?;
    for key in doc.keys().filter(|k| *k != "samples") {
        tracing::warn!(field = %key, "ignoring unknown top-level dataset field");
    }
    let raw = match doc.get("samples") {
        Some(Value::Array(items)) => items,
        Some(_) => {
            return Err(DatasetError::Parse {
                line: 0,
                column: 0,
                message: "`samples` must be an array".into(),
            })
        }
        None => {
            return Err(DatasetError::Parse {
                line: 0,
                column: 0,
                message: "missing top-level `samples` array".into(),
            })
        }
    };

    let mut samples = Vec::with_capacity(raw.len());
    let mut seen_ids = HashMap::new();
    let mut image_uris: HashMap<String, String> = HashMap::new();
    for (index, value) in raw.iter().enumerate() {
        if let Value::Object(fields) = value {
            for key in fields
                .keys()
                .filter(|k| !KNOWN_SAMPLE_FIELDS.contains(&k.as_str()))
            {
                tracing::warn!(sample = index, field = %key, "ignoring unknown sample field");
            }
        }
        let raw: RawSample =
            serde_json::from_value(value.clone()).map_err(|e| DatasetError::Record {
                index,
                message: e.to_string(),
            })?;
        let qtype = raw
            .qtype
            .unwrap_or_else(|| classify_question_type(&raw.options, raw.ground_truth.as_deref()));
        let sample = VqaSample {
            sample_id: raw.sample_id,
            image: raw.image,
            question: raw.question,
            qtype,
            options: raw.options,
            ground_truth: raw.ground_truth,
        };
        sample.validate()?;
        if seen_ids.insert(sample.sample_id.clone(), index).is_some() {
            return Err(DatasetError::Invalid {
                sample_id: sample.sample_id,
                field: "sample_id",
                message: "duplicate sample_id".into(),
            });
        }
        // Many questions share one image; an image id must always name the same uri.
        match image_uris.get(&sample.image.id) {
            Some(uri) if *uri != sample.image.uri => {
                return Err(DatasetError::Invalid {
                    sample_id: sample.sample_id,
                    field: "image.id",
                    message: format!("image id {:?} already refers to {uri:?}", sample.image.id),
                })
            }
            Some(_) => {}
            None => {
                image_uris.insert(sample.image.id.clone(), sample.image.uri.clone());
            }
        }
        samples.push(sample);
    }
    Ok(samples)
}

#[derive(Serialize)]
struct DatasetDoc<'a> {
    samples: &'a [VqaSample],
}

/// Serializes samples in the dataset file format, with explicit type labels.
pub fn dataset_to_json(samples: &[VqaSample]) -> String {
    serde_json::to_string_pretty(&DatasetDoc { samples }).expect("dataset serializes")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn flood_roads_doc() -> &'static str {
        r#"{ "samples": [ {
            "sample_id": "flood-roads",
            "image": { "id": "flood-1", "uri": "images/flood-1.jpg" },
            "question": "Is there any damage to roads or bridges in the area?",
            "qtype": "yes-no",
            "ground_truth": "yes"
        } ] }"#
    }

    #[test]
    fn loads_single_yes_no_sample() {
        let samples = parse_dataset(flood_roads_doc()).unwrap();
        assert_eq!(samples.len(), 1);
        assert_eq!(samples[0].qtype, QuestionType::YesNo);
        assert_eq!(
            samples[0].question,
            "Is there any damage to roads or bridges in the area?"
        );
    }

    #[test]
    fn empty_samples_array() {
        assert!(parse_dataset(r#"{"samples": []}"#).unwrap().is_empty());
    }

    #[test]
    fn multiple_choice_ground_truth_matches_fourth_option() {
        let doc = r#"{ "samples": [ {
            "sample_id": "mc1",
            "image": { "id": "i", "uri": "u" },
            "question": "Where is a safe place?",
            "options": ["house", "plane", "boat", "no safe place"],
            "ground_truth": "No safe place."
        } ] }"#;
        let samples = parse_dataset(doc).unwrap();
        assert_eq!(samples[0].qtype, QuestionType::MultipleChoice);
        assert_eq!(samples[0].ground_truth_option(), Some(3));
        assert_eq!(
            samples[0].prompt_question(),
            "Where is a safe place? -house -plane -boat -no safe place"
        );
    }

    #[test]
    fn parse_error_carries_location() {
        let err = parse_dataset("{\n  \"samples\": [ {,\n] }").unwrap_err();
        match err {
            DatasetError::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn validation_errors_name_sample_and_field() {
        let doc = r#"{ "samples": [ {
            "sample_id": "bad",
            "image": { "id": "i", "uri": "u" },
            "question": "Is it flooded?",
            "qtype": "yes-no",
            "ground_truth": "maybe"
        } ] }"#;
        match parse_dataset(doc).unwrap_err() {
            DatasetError::Invalid {
                sample_id, field, ..
            } => {
                assert_eq!(sample_id, "bad");
                assert_eq!(field, "ground_truth");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn rejects_duplicate_ids_and_inconsistent_images() {
        let dup = r#"{ "samples": [
            { "sample_id": "a", "image": { "id": "i", "uri": "u" }, "question": "q" },
            { "sample_id": "a", "image": { "id": "i", "uri": "u" }, "question": "q2" } ] }"#;
        assert!(matches!(
            parse_dataset(dup),
            Err(DatasetError::Invalid {
                field: "sample_id",
                ..
            })
        ));
        let clash = r#"{ "samples": [
            { "sample_id": "a", "image": { "id": "i", "uri": "u1" }, "question": "q" },
            { "sample_id": "b", "image": { "id": "i", "uri": "u2" }, "question": "q2" } ] }"#;
        assert!(matches!(
            parse_dataset(clash),
            Err(DatasetError::Invalid {
                field: "image.id",
                ..
            })
        ));
    }

    #[test]
    fn label_wins_over_inference_but_must_be_consistent() {
        let doc = r#"{ "samples": [
            { "sample_id": "a", "image": { "id": "i", "uri": "u" }, "question": "q",
              "qtype": "free-form", "ground_truth": "yes", "extra": 1 } ] }"#;
        let samples = parse_dataset(doc).unwrap();
        assert_eq!(samples[0].qtype, QuestionType::FreeForm);

        let doc = r#"{ "samples": [
            { "sample_id": "a", "image": { "id": "i", "uri": "u" }, "question": "q",
              "qtype": "yes-no", "options": ["x"] } ] }"#;
        assert!(matches!(
            parse_dataset(doc),
            Err(DatasetError::Invalid {
                field: "options",
                ..
            })
        ));
    }

    #[test]
    fn normalize_examples() {
        assert_eq!(normalize_answer("  Yes. "), "yes");
        assert_eq!(normalize_answer("No Safe   Place!"), "no safe place");
        assert_eq!(normalize_answer("house"), "house");
        assert_eq!(normalize_answer("what ?!. "), "what");
        assert_eq!(normalize_answer(""), "");
    }

    #[test]
    fn classify_examples() {
        let opts: Vec<String> = ["house", "plane", "boat", "no safe place"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        assert_eq!(
            classify_question_type(&opts, None),
            QuestionType::MultipleChoice
        );
        assert_eq!(
            classify_question_type(&[], Some("Yes.")),
            QuestionType::YesNo
        );
        assert_eq!(classify_question_type(&[], None), QuestionType::FreeForm);
        assert_eq!(
            classify_question_type(&[], Some("a boat")),
            QuestionType::FreeForm
        );
    }

    #[test]
    fn question_type_names() {
        for t in QuestionType::ALL {
            let json = serde_json::to_string(&t).unwrap();
            assert_eq!(json, format!("\"{}\"", t.as_str()));
            assert_eq!(t.as_str().parse::<QuestionType>().unwrap(), t);
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn sample_strategy() -> impl Strategy<Value = VqaSample> {
            let text = "[a-zA-Z][a-zA-Z ,]{0,20}";
            (
                0u8..3,
                text,
                prop::collection::vec("[a-z]{1,6}", 1..5),
                any::<bool>(),
                any::<u8>(),
            )
                .prop_map(|(kind, question, mut options, with_gt, pick)| {
                    options.sort();
                    options.dedup();
                    let (qtype, options, ground_truth) = match kind {
                        0 => {
                            let gt =
                                with_gt.then(|| options[pick as usize % options.len()].clone());
                            (QuestionType::MultipleChoice, options, gt)
                        }
                        1 => (
                            QuestionType::YesNo,
                            vec![],
                            with_gt.then(|| {
                                if pick % 2 == 0 {
                                    "Yes".into()
                                } else {
                                    "no.".into()
                                }
                            }),
                        ),
                        _ => (
                            QuestionType::FreeForm,
                            vec![],
                            with_gt.then(|| "a boat".into()),
                        ),
                    };
                    VqaSample {
                        sample_id: String::new(),
                        image: ImageRef {
                            id: String::new(),
                            uri: "file.jpg".into(),
                        },
                        question,
                        qtype,
                        options,
                        ground_truth,
                    }
                })
        }

        proptest! {
            #[test]
            fn normalize_is_idempotent(s in "\\PC{0,40}") {
                let once = normalize_answer(&s);
                prop_assert_eq!(normalize_answer(&once), once);
            }

            #[test]
            fn dataset_round_trips(mut samples in prop::collection::vec(sample_strategy(), 0..8)) {
                for (i, s) in samples.iter_mut().enumerate() {
                    s.sample_id = format!("s{i}");
                    s.image.id = format!("img{i}");
                }
                let reloaded = parse_dataset(&dataset_to_json(&samples)).unwrap();
                prop_assert_eq!(&reloaded, &samples);
                // Inference agrees with explicit labels wherever options or
                // ground truth give it something to go on.
                for s in reloaded.iter().filter(|s| s.ground_truth.is_some() || !s.options.is_empty()) {
                    prop_assert_eq!(
                        classify_question_type(&s.options, s.ground_truth.as_deref()),
                        s.qtype
                    );
                }
            }
        }
    }
}
