//! Human review of pipeline results: a durable rating store that hands out
//! tasks, records plausible/implausible verdicts, and summarizes them live.
//!
//! Ratings are appended to a JSONL file and replayed on start, so the file
//! is the single source of truth and survives restarts.

mod service;

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use chrono::Utc;
use parking_lot::RwLock;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::evaluation::{
    kappa_over_complete_items, majority_of, EvaluationSummary, RatingRecord, ResultRef, Verdict,
};
use crate::model::{ImageRef, QuestionType, VqaSample};
use crate::pipeline::{PipelineMode, ResultLine};

pub use service::{router, ServiceState};

#[derive(Debug, Error)]
pub enum ReviewError {
    #[error("evaluator id must be non-empty")]
    EmptyEvaluator,
    #[error("run {0:?} has no reviewable results")]
    EmptyRun(String),
    #[error("unknown result {}/{}", .0.sample_id, .0.mode)]
    UnknownResult(ResultRef),
    #[error("evaluator {evaluator_id:?} already rated {}/{}", .result_ref.sample_id, .result_ref.mode)]
    Duplicate {
        result_ref: ResultRef,
        evaluator_id: String,
    },
    #[error("result for sample {0:?} has no matching dataset sample")]
    MissingSample(String),
    #[error("raters per item must be at least 1")]
    InvalidRaters,
    #[error("ratings store {path}: {message}")]
    Store { path: String, message: String },
}

/// A result as presented to evaluators.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReviewItem {
    pub result_ref: ResultRef,
    pub image: ImageRef,
    pub qtype: QuestionType,
    pub question: String,
    pub options: Vec<String>,
    pub answer: String,
    pub thought: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReviewTask {
    pub result_ref: ResultRef,
    pub image_id: String,
    pub image_uri: String,
    pub question: String,
    pub options: Vec<String>,
    pub answer: String,
    pub thought: Option<String>,
    pub already_rated_by: Vec<String>,
}

/// Builds review items from the successful lines of a results file.
pub fn review_items(
    results: &[ResultLine],
    samples: &[VqaSample],
) -> Result<Vec<ReviewItem>, ReviewError> {
    let by_id: HashMap<&str, &VqaSample> =
        samples.iter().map(|s| (s.sample_id.as_str(), s)).collect();
    results
        .iter()
        .filter(|r| !r.is_error())
        .filter_map(|r| r.answer.as_ref().map(|a| (r, a)))
        .map(|(r, answer)| {
            let sample = by_id
                .get(r.sample_id.as_str())
                .ok_or_else(|| ReviewError::MissingSample(r.sample_id.clone()))?;
            Ok(ReviewItem {
                result_ref: ResultRef {
                    sample_id: r.sample_id.clone(),
                    mode: r.mode,
                },
                image: sample.image.clone(),
                qtype: sample.qtype,
                question: sample.question.clone(),
                options: sample.options.clone(),
                answer: answer.clone(),
                thought: r.thought.clone(),
            })
        })
        .collect()
}

/// Reads a ratings JSONL file. A missing file is an empty store; a torn
/// final line (crash mid-append) is skipped.
pub fn read_ratings(path: impl AsRef<Path>) -> Result<Vec<RatingRecord>, ReviewError> {
    let path = path.as_ref();
    let store_err = |message: String| ReviewError::Store {
        path: path.display().to_string(),
        message,
    };
    let text = match std::fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(store_err(e.to_string())),
    };
    let lines: Vec<(usize, &str)> = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .collect();
    let mut out = Vec::with_capacity(lines.len());
    for (pos, (i, line)) in lines.iter().enumerate() {
        match serde_json::from_str(line) {
            Ok(r) => out.push(r),
            Err(_) if pos + 1 == lines.len() && !text.ends_with('\n') => {
                tracing::warn!(path = %path.display(), line = i + 1, "skipping torn final rating line");
            }
            Err(e) => return Err(store_err(format!("line {}: {e}", i + 1))),
        }
    }
    Ok(out)
}

struct Item {
    data: ReviewItem,
    raters: Vec<String>,
}

struct State {
    items: Vec<Item>,
    ratings: Vec<RatingRecord>,
    rated: HashSet<(ResultRef, String)>,
    file: File,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LiveSummary {
    pub run: String,
    pub raters_per_item: usize,
    pub total_items: usize,
    pub rated_items: usize,
    /// Items with exactly `raters_per_item` ratings; kappa is computed over these.
    pub complete_items: usize,
    pub total_ratings: usize,
    /// Majority verdicts over every rated item, kappa over complete items.
    pub summary: EvaluationSummary,
    pub per_mode: BTreeMap<PipelineMode, EvaluationSummary>,
    pub evaluators: BTreeMap<String, usize>,
}

/// One review run backed by an append-only ratings file. All mutations go
/// through a single write lock; reads see a consistent snapshot.
pub struct ReviewRun {
    name: String,
    raters_per_item: usize,
    path: PathBuf,
    index: BTreeMap<ResultRef, usize>,
    image_root: Option<PathBuf>,
    state: RwLock<State>,
}

impl std::fmt::Debug for ReviewRun {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ReviewRun")
            .field("name", &self.name)
            .field("raters_per_item", &self.raters_per_item)
            .field("path", &self.path)
            .finish_non_exhaustive()
    }
}

impl ReviewRun {
    /// Opens (or creates) the ratings file and replays it.
    pub fn open(
        name: impl Into<String>,
        mut items: Vec<ReviewItem>,
        raters_per_item: usize,
        ratings_path: impl Into<PathBuf>,
    ) -> Result<Self, ReviewError> {
        let name = name.into();
        let path = ratings_path.into();
        if raters_per_item == 0 {
            return Err(ReviewError::InvalidRaters);
        }
        if items.is_empty() {
            return Err(ReviewError::EmptyRun(name));
        }
        items.sort_by(|a, b| a.result_ref.cmp(&b.result_ref));
        items.dedup_by(|a, b| a.result_ref == b.result_ref);
        let index: BTreeMap<ResultRef, usize> = items
            .iter()
            .enumerate()
            .map(|(i, item)| (item.result_ref.clone(), i))
            .collect();
        let store_err = |message: String| ReviewError::Store {
            path: path.display().to_string(),
            message,
        };

        let existing = read_ratings(&path)?;
        let mut items: Vec<Item> = items
            .into_iter()
            .map(|data| Item {
                data,
                raters: Vec::new(),
            })
            .collect();
        let mut rated = HashSet::new();
        for r in &existing {
            let &i = index.get(&r.result_ref).ok_or_else(|| {
                store_err(format!(
                    "rating for unknown result {}/{}",
                    r.result_ref.sample_id, r.result_ref.mode
                ))
            })?;
            if !rated.insert((r.result_ref.clone(), r.evaluator_id.clone())) {
                return Err(store_err(format!(
                    "duplicate rating by {:?} for {}/{}",
                    r.evaluator_id, r.result_ref.sample_id, r.result_ref.mode
                )));
            }
            items[i].raters.push(r.evaluator_id.clone());
        }
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent).map_err(|e| store_err(e.to_string()))?;
        }
        // Cut a torn tail so new lines never follow a partial record.
        if let Ok(raw) = std::fs::read(&path) {
            if raw.last().is_some_and(|&b| b != b'\n') {
                let keep = raw.iter().rposition(|&b| b == b'\n').map_or(0, |i| i + 1);
                OpenOptions::new()
                    .write(true)
                    .open(&path)
                    .and_then(|f| f.set_len(keep as u64))
                    .map_err(|e| store_err(e.to_string()))?;
            }
        }
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| store_err(e.to_string()))?;
        Ok(Self {
            name,
            raters_per_item,
            path,
            index,
            image_root: None,
            state: RwLock::new(State {
                items,
                ratings: existing,
                rated,
                file,
            }),
        })
    }

    /// Directory that relative image paths are resolved against.
    pub fn with_image_root(mut self, root: impl Into<PathBuf>) -> Self {
        self.image_root = Some(root.into());
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn raters_per_item(&self) -> usize {
        self.raters_per_item
    }

    pub fn ratings_path(&self) -> &Path {
        &self.path
    }

    pub fn image_root(&self) -> Option<&Path> {
        self.image_root.as_deref()
    }

    pub fn ratings(&self) -> Vec<RatingRecord> {
        self.state.read().ratings.clone()
    }

    pub fn find_image(&self, image_id: &str) -> Option<ImageRef> {
        self.state
            .read()
            .items
            .iter()
            .find(|i| i.data.image.id == image_id)
            .map(|i| i.data.image.clone())
    }

    /// The least-rated item this evaluator has not rated yet, among items
    /// still short of `raters_per_item`. Ties go to the lowest result ref.
    pub fn next_task(&self, evaluator_id: &str) -> Result<Option<ReviewTask>, ReviewError> {
        if evaluator_id.trim().is_empty() {
            return Err(ReviewError::EmptyEvaluator);
        }
        let state = self.state.read();
        let task = state
            .items
            .iter()
            .filter(|i| i.raters.len() < self.raters_per_item)
            .filter(|i| !i.raters.iter().any(|r| r == evaluator_id))
            .min_by_key(|i| i.raters.len())
            .map(|i| ReviewTask {
                result_ref: i.data.result_ref.clone(),
                image_id: i.data.image.id.clone(),
                image_uri: i.data.image.uri.clone(),
                question: i.data.question.clone(),
                options: i.data.options.clone(),
                answer: i.data.answer.clone(),
                thought: i.data.thought.clone(),
                already_rated_by: i.raters.clone(),
            });
        Ok(task)
    }

    pub fn submit_rating(
        &self,
        result_ref: ResultRef,
        evaluator_id: &str,
        verdict: Verdict,
    ) -> Result<RatingRecord, ReviewError> {
        if evaluator_id.trim().is_empty() {
            return Err(ReviewError::EmptyEvaluator);
        }
        let &i = self
            .index
            .get(&result_ref)
            .ok_or_else(|| ReviewError::UnknownResult(result_ref.clone()))?;
        let mut state = self.state.write();
        let key = (result_ref.clone(), evaluator_id.to_string());
        if state.rated.contains(&key) {
            return Err(ReviewError::Duplicate {
                result_ref,
                evaluator_id: evaluator_id.to_string(),
            });
        }
        let record = RatingRecord {
            result_ref,
            evaluator_id: evaluator_id.to_string(),
            verdict,
            timestamp: Utc::now(),
        };
        let mut line = serde_json::to_string(&record).expect("rating serializes");
        line.push('\n');
        state
            .file
            .write_all(line.as_bytes())
            .and_then(|_| state.file.sync_data())
            .map_err(|e| ReviewError::Store {
                path: self.path.display().to_string(),
                message: e.to_string(),
            })?;
        state.rated.insert(key);
        state.items[i].raters.push(record.evaluator_id.clone());
        state.ratings.push(record.clone());
        Ok(record)
    }

    pub fn live_summary(&self) -> LiveSummary {
        let state = self.state.read();
        let by_ref: BTreeMap<&ResultRef, Vec<Verdict>> =
            state.ratings.iter().fold(BTreeMap::new(), |mut acc, r| {
                acc.entry(&r.result_ref)
                    .or_insert_with(Vec::new)
                    .push(r.verdict);
                acc
            });
        let mut overall = Vec::new();
        let mut per_mode: BTreeMap<PipelineMode, Vec<(QuestionType, Verdict)>> = BTreeMap::new();
        for (result_ref, verdicts) in &by_ref {
            let item = &state.items[self.index[*result_ref]].data;
            let v = majority_of(verdicts);
            overall.push((item.qtype, v));
            per_mode
                .entry(result_ref.mode)
                .or_default()
                .push((item.qtype, v));
        }
        let complete_items = by_ref
            .values()
            .filter(|v| v.len() == self.raters_per_item)
            .count();
        let kappa = kappa_over_complete_items(&state.ratings, self.raters_per_item)
            .ok()
            .map(|r| r.kappa);
        let mut summary = EvaluationSummary::from_records(&overall);
        summary.kappa = kappa;
        let mut evaluators = BTreeMap::new();
        for r in &state.ratings {
            *evaluators.entry(r.evaluator_id.clone()).or_insert(0) += 1;
        }
        LiveSummary {
            run: self.name.clone(),
            raters_per_item: self.raters_per_item,
            total_items: state.items.len(),
            rated_items: by_ref.len(),
            complete_items,
            total_ratings: state.ratings.len(),
            summary,
            per_mode: per_mode
                .into_iter()
                .map(|(m, records)| {
                    let mode_ratings: Vec<RatingRecord> = state
                        .ratings
                        .iter()
                        .filter(|r| r.result_ref.mode == m)
                        .cloned()
                        .collect();
                    let mut s = EvaluationSummary::from_records(&records);
                    s.kappa = kappa_over_complete_items(&mode_ratings, self.raters_per_item)
                        .ok()
                        .map(|r| r.kappa);
                    (m, s)
                })
                .collect(),
            evaluators,
        }
    }
}
