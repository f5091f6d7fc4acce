//! Two-stage answer generation and the two baselines it is compared against.
//!
//! * `vqa-tsp`: extract the visual context, generate a thought process from a
//!   step-by-step prompt, then answer from a prompt that carries the thought
//!   process *and the same visual context* again.
//! * `zfdda-cot`: identical first stage; the answer prompt carries only the
//!   thought process and the question.
//! * `zfdda-no-cot`: one direct-answer call on the context and question.

use std::fmt;
use std::num::NonZeroUsize;
use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;
use std::time::Instant;

use futures::stream::{self, StreamExt};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backends::{complete_text, extract_visual_context, Backend, BackendError};
use crate::model::{FinalAnswer, ImageRef, ThoughtProcess, VisualContext, VqaSample};
use crate::prompting::{PromptError, PromptSet, PromptText};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PipelineMode {
    #[serde(rename = "zfdda-no-cot")]
    NoCoT,
    #[serde(rename = "zfdda-cot")]
    ZeroShotCoT,
    #[serde(rename = "vqa-tsp")]
    TwoStage,
}

impl PipelineMode {
    pub const ALL: [PipelineMode; 3] = [
        PipelineMode::NoCoT,
        PipelineMode::ZeroShotCoT,
        PipelineMode::TwoStage,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PipelineMode::NoCoT => "zfdda-no-cot",
            PipelineMode::ZeroShotCoT => "zfdda-cot",
            PipelineMode::TwoStage => "vqa-tsp",
        }
    }

    /// Row label used in reports.
    pub fn label(self) -> &'static str {
        match self {
            PipelineMode::NoCoT => "ZFDDA w/o CoT",
            PipelineMode::ZeroShotCoT => "ZFDDA zero-shot CoT",
            PipelineMode::TwoStage => "VQA-TSP",
        }
    }
}

impl fmt::Display for PipelineMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PipelineMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        PipelineMode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| {
                format!("unknown mode {s:?} (expected vqa-tsp, zfdda-cot or zfdda-no-cot)")
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Stage1,
    Stage2,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Stage1 => "stage1",
            Stage::Stage2 => "stage2",
        })
    }
}

#[derive(Debug, Error)]
pub enum StageFailure {
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
}

#[derive(Debug, Error)]
#[error("{stage}: {source}")]
pub struct StageError {
    pub stage: Stage,
    #[source]
    pub source: StageFailure,
}

impl StageError {
    fn at(stage: Stage) -> impl FnOnce(StageFailure) -> StageError {
        move |source| StageError { stage, source }
    }
}

fn stage1<E: Into<StageFailure>>(e: E) -> StageError {
    StageError::at(Stage::Stage1)(e.into())
}

fn stage2<E: Into<StageFailure>>(e: E) -> StageError {
    StageError::at(Stage::Stage2)(e.into())
}

/// Context and completion backends. The same completion backend serves both
/// generation stages.
#[derive(Debug, Clone)]
pub struct Backends {
    pub context: Arc<dyn Backend>,
    pub completion: Arc<dyn Backend>,
}

impl Backends {
    pub fn new(context: impl Backend + 'static, completion: impl Backend + 'static) -> Self {
        Self {
            context: Arc::new(context),
            completion: Arc::new(completion),
        }
    }

    pub fn is_deterministic(&self) -> bool {
        self.context.is_deterministic() && self.completion.is_deterministic()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StageOne {
    pub visual_context: VisualContext,
    pub prompt: PromptText,
    pub thought: ThoughtProcess,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StageTwo {
    pub answer: FinalAnswer,
    pub prompt: PromptText,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageTimings {
    pub stage1: u64,
    pub stage2: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackendNames {
    pub context: String,
    pub completion: String,
    pub deterministic: bool,
}

/// Per-sample trace of one pipeline run.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PipelineResult {
    pub sample_id: String,
    pub mode: PipelineMode,
    pub visual_context: VisualContext,
    pub stage1_prompt: Option<PromptText>,
    pub thought: Option<ThoughtProcess>,
    pub stage2_prompt: PromptText,
    pub answer: FinalAnswer,
    /// Wall time per stage in milliseconds, when recorded.
    pub timings_ms: Option<StageTimings>,
    pub backends: BackendNames,
}

impl PipelineResult {
    /// Lists violated result invariants. The zero-shot CoT check assumes the
    /// thought and question do not themselves quote the visual context.
    pub fn invariant_violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        let has_stage1 = self.stage1_prompt.is_some() && self.thought.is_some();
        let no_stage1 = self.stage1_prompt.is_none() && self.thought.is_none();
        let v = &self.visual_context.text;
        let p2 = &self.stage2_prompt.text;
        match self.mode {
            PipelineMode::NoCoT if !no_stage1 => {
                out.push("no-cot result carries a first stage".into())
            }
            PipelineMode::TwoStage | PipelineMode::ZeroShotCoT if !has_stage1 => {
                out.push("chain-of-thought result lacks its first stage".into())
            }
            _ => {}
        }
        if let Some(r) = &self.thought {
            if !p2.contains(&r.text) {
                out.push("stage-two prompt lacks the thought process".into());
            }
        }
        match self.mode {
            PipelineMode::TwoStage if !p2.contains(v.as_str()) => {
                out.push("vqa-tsp stage-two prompt lacks the visual context".into())
            }
            PipelineMode::ZeroShotCoT if p2.contains(v.as_str()) => {
                out.push("zfdda-cot stage-two prompt contains the visual context".into())
            }
            _ => {}
        }
        out
    }
}

/// A sample that failed; batches keep going.
#[derive(Debug)]
pub struct SampleFailure {
    pub sample_id: String,
    pub mode: PipelineMode,
    pub error: StageError,
}

pub type SampleOutcome = Result<PipelineResult, SampleFailure>;

#[derive(Debug, Clone)]
pub struct Pipeline {
    backends: Backends,
    prompts: PromptSet,
    record_timings: bool,
}

impl Pipeline {
    /// Timings are recorded only when some backend is nondeterministic, so
    /// deterministic runs produce byte-identical result files.
    pub fn new(backends: Backends) -> Self {
        Self {
            record_timings: !backends.is_deterministic(),
            backends,
            prompts: PromptSet::default(),
        }
    }

    pub fn with_prompts(mut self, prompts: PromptSet) -> Self {
        self.prompts = prompts;
        self
    }

    pub fn with_timings(mut self, record: bool) -> Self {
        self.record_timings = record;
        self
    }

    pub fn backends(&self) -> &Backends {
        &self.backends
    }

    pub fn prompts(&self) -> &PromptSet {
        &self.prompts
    }

    /// Visual context, step-by-step prompt, and the thought process it yields.
    pub async fn run_stage_one(
        &self,
        image: &ImageRef,
        question: &str,
    ) -> Result<StageOne, StageError> {
        let visual_context = self.extract(image, question).await?;
        let prompt = self
            .prompts
            .build_cot_prompt(&visual_context, question)
            .map_err(stage1)?;
        let text = complete_text(self.backends.completion.as_ref(), &prompt.text)
            .await
            .map_err(stage1)?;
        Ok(StageOne {
            visual_context,
            prompt,
            thought: ThoughtProcess { text },
        })
    }

    /// Answers from the thought process plus the visual context passed
    /// through unchanged from stage one.
    pub async fn run_stage_two(
        &self,
        thought: &ThoughtProcess,
        visual_context: &VisualContext,
        question: &str,
    ) -> Result<StageTwo, StageError> {
        if thought.text.trim().is_empty() {
            return Err(stage2(BackendError::InvalidInput(
                "thought process must be non-empty".into(),
            )));
        }
        let prompt = self
            .prompts
            .build_general_prompt(visual_context, thought, question)
            .map_err(stage2)?;
        self.answer(prompt).await
    }

    async fn extract(&self, image: &ImageRef, question: &str) -> Result<VisualContext, StageError> {
        extract_visual_context(self.backends.context.as_ref(), image, question)
            .await
            .map_err(stage1)
    }

    async fn answer(&self, prompt: PromptText) -> Result<StageTwo, StageError> {
        let text = complete_text(self.backends.completion.as_ref(), &prompt.text)
            .await
            .map_err(stage2)?;
        Ok(StageTwo {
            answer: FinalAnswer::new(text),
            prompt,
        })
    }

    pub async fn run_sample(&self, sample: &VqaSample, mode: PipelineMode) -> SampleOutcome {
        self.try_run_sample(sample, mode)
            .await
            .map_err(|error| SampleFailure {
                sample_id: sample.sample_id.clone(),
                mode,
                error,
            })
    }

    async fn try_run_sample(
        &self,
        sample: &VqaSample,
        mode: PipelineMode,
    ) -> Result<PipelineResult, StageError> {
        let question = sample.prompt_question();
        let start = Instant::now();
        let (visual_context, first, stage1_done) = match mode {
            PipelineMode::NoCoT => {
                let v = self.extract(&sample.image, &question).await?;
                (v, None, Instant::now())
            }
            PipelineMode::TwoStage | PipelineMode::ZeroShotCoT => {
                let one = self.run_stage_one(&sample.image, &question).await?;
                (
                    one.visual_context,
                    Some((one.prompt, one.thought)),
                    Instant::now(),
                )
            }
        };
        let second = match (mode, &first) {
            (PipelineMode::TwoStage, Some((_, thought))) => {
                self.run_stage_two(thought, &visual_context, &question)
                    .await?
            }
            (PipelineMode::ZeroShotCoT, Some((_, thought))) => {
                let prompt = self
                    .prompts
                    .build_general_prompt_without_context(thought, &question)
                    .map_err(stage2)?;
                self.answer(prompt).await?
            }
            _ => {
                let prompt = self
                    .prompts
                    .build_no_cot_prompt(&visual_context, &question)
                    .map_err(stage2)?;
                self.answer(prompt).await?
            }
        };
        let timings_ms = self.record_timings.then(|| StageTimings {
            stage1: (stage1_done - start).as_millis() as u64,
            stage2: stage1_done.elapsed().as_millis() as u64,
        });
        let (stage1_prompt, thought) = first.unzip();
        Ok(PipelineResult {
            sample_id: sample.sample_id.clone(),
            mode,
            visual_context,
            stage1_prompt,
            thought,
            stage2_prompt: second.prompt,
            answer: second.answer,
            timings_ms,
            backends: BackendNames {
                context: self.backends.context.name().to_string(),
                completion: self.backends.completion.name().to_string(),
                deterministic: self.backends.is_deterministic(),
            },
        })
    }

    /// Runs every sample with at most `parallelism` in flight. Output order
    /// matches input order; failures are recorded in place.
    pub async fn run_batch(
        &self,
        samples: &[VqaSample],
        mode: PipelineMode,
        parallelism: NonZeroUsize,
    ) -> Vec<SampleOutcome> {
        stream::iter(samples)
            .map(|sample| self.run_sample(sample, mode))
            .buffered(parallelism.get())
            .collect()
            .await
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorInfo {
    pub stage: Stage,
    pub message: String,
}

/// One line of a results file. Field order is fixed so files diff cleanly.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResultLine {
    pub sample_id: String,
    pub mode: PipelineMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub visual_context: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stage1_prompt: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub thought: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stage2_prompt: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub answer: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub normalized_answer: Option<String>,
    /// `null` when timings were not recorded; absent on error lines.
    #[serde(
        default,
        skip_serializing_if = "is_error_line_timing",
        deserialize_with = "present_timing"
    )]
    pub timings_ms: Option<Option<StageTimings>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub backends: Option<BackendNames>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<ErrorInfo>,
}

fn is_error_line_timing(t: &Option<Option<StageTimings>>) -> bool {
    t.is_none()
}

// A present `null` means "not recorded", which plain `Option<Option<_>>`
// would collapse into "absent".
fn present_timing<'de, D>(d: D) -> Result<Option<Option<StageTimings>>, D::Error>
where
    D: serde::Deserializer<'de>,
{
    Option::<StageTimings>::deserialize(d).map(Some)
}

impl ResultLine {
    pub fn is_error(&self) -> bool {
        self.error.is_some()
    }

    pub fn result_key(&self) -> (String, PipelineMode) {
        (self.sample_id.clone(), self.mode)
    }
}

impl From<&PipelineResult> for ResultLine {
    fn from(r: &PipelineResult) -> Self {
        Self {
            sample_id: r.sample_id.clone(),
            mode: r.mode,
            visual_context: Some(r.visual_context.text.clone()),
            stage1_prompt: r.stage1_prompt.as_ref().map(|p| p.text.clone()),
            thought: r.thought.as_ref().map(|t| t.text.clone()),
            stage2_prompt: Some(r.stage2_prompt.text.clone()),
            answer: Some(r.answer.text.clone()),
            normalized_answer: Some(r.answer.normalized.clone()),
            timings_ms: Some(r.timings_ms),
            backends: Some(r.backends.clone()),
            error: None,
        }
    }
}

impl From<&SampleOutcome> for ResultLine {
    fn from(outcome: &SampleOutcome) -> Self {
        match outcome {
            Ok(r) => r.into(),
            Err(f) => Self {
                sample_id: f.sample_id.clone(),
                mode: f.mode,
                visual_context: None,
                stage1_prompt: None,
                thought: None,
                stage2_prompt: None,
                answer: None,
                normalized_answer: None,
                timings_ms: None,
                backends: None,
                error: Some(ErrorInfo {
                    stage: f.error.stage,
                    message: f.error.source.to_string(),
                }),
            },
        }
    }
}

#[derive(Debug, Error)]
pub enum ResultsFileError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {source}")]
    Parse {
        path: String,
        line: usize,
        #[source]
        source: serde_json::Error,
    },
}

/// Renders outcomes as JSONL, one line per sample.
pub fn results_to_jsonl(outcomes: &[SampleOutcome]) -> String {
    let mut out = String::new();
    for outcome in outcomes {
        out.push_str(
            &serde_json::to_string(&ResultLine::from(outcome)).expect("result line serializes"),
        );
        out.push('\n');
    }
    out
}

pub fn write_results(
    path: impl AsRef<Path>,
    outcomes: &[SampleOutcome],
) -> Result<(), ResultsFileError> {
    let path = path.as_ref();
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|source| ResultsFileError::Io {
            path: parent.display().to_string(),
            source,
        })?;
    }
    std::fs::write(path, results_to_jsonl(outcomes)).map_err(|source| ResultsFileError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn read_results(path: impl AsRef<Path>) -> Result<Vec<ResultLine>, ResultsFileError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| ResultsFileError::Io {
        path: path.display().to_string(),
        source,
    })?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|source| ResultsFileError::Parse {
                path: path.display().to_string(),
                line: i + 1,
                source,
            })
        })
        .collect()
}
