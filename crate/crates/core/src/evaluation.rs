//! Accuracy (plausible answers over questions asked), its per-question-type
//! breakdown, automatic scoring for closed-form questions, verdict
//! aggregation across evaluators, Fleiss' kappa, and comparison reports.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{normalize_answer, FinalAnswer, QuestionType, VqaSample};
use crate::pipeline::{PipelineMode, PipelineResult};

/// Agreement the reference evaluator panel reached.
pub const REFERENCE_PANEL_KAPPA: f64 = 0.72;
/// Default minimum panel kappa before an evaluator's verdicts count.
pub const DEFAULT_KAPPA_THRESHOLD: f64 = 0.60;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricError {
    #[error("no verdicts to score")]
    Empty,
    #[error("ratings refer to more than one result")]
    MixedResults,
    #[error("row {row} has {got} ratings, expected {expected}")]
    RowSumMismatch {
        row: usize,
        expected: usize,
        got: usize,
    },
    #[error("rows have different category counts")]
    RaggedMatrix,
    #[error("need at least 2 raters per item, got {0}")]
    TooFewRaters(usize),
    #[error("need at least 2 categories, got {0}")]
    TooFewCategories(usize),
    #[error("kappa is undefined: every rating falls in one category")]
    DegenerateAgreement,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Plausible,
    Implausible,
}

impl Verdict {
    pub fn is_plausible(self) -> bool {
        self == Verdict::Plausible
    }

    fn category(self) -> usize {
        match self {
            Verdict::Plausible => 0,
            Verdict::Implausible => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ResultRef {
    pub sample_id: String,
    pub mode: PipelineMode,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RatingRecord {
    pub result_ref: ResultRef,
    pub evaluator_id: String,
    pub verdict: Verdict,
    pub timestamp: DateTime<Utc>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TypeStats {
    pub n_q: usize,
    pub n_p: usize,
    pub accuracy: Option<f64>,
}

impl TypeStats {
    fn new(n_q: usize, n_p: usize) -> Self {
        Self {
            n_q,
            n_p,
            accuracy: (n_q > 0).then(|| n_p as f64 / n_q as f64),
        }
    }
}

/// `accuracy` is `n_p / n_q`, absent when nothing has been scored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationSummary {
    pub n_q: usize,
    pub n_p: usize,
    pub accuracy: Option<f64>,
    pub per_type: BTreeMap<QuestionType, TypeStats>,
    pub kappa: Option<f64>,
}

impl EvaluationSummary {
    /// Summary over any number of records, including none.
    pub fn from_records(records: &[(QuestionType, Verdict)]) -> Self {
        let mut counts: BTreeMap<QuestionType, (usize, usize)> = BTreeMap::new();
        for &(qtype, verdict) in records {
            let entry = counts.entry(qtype).or_default();
            entry.0 += 1;
            entry.1 += usize::from(verdict.is_plausible());
        }
        Self::from_counts(counts)
    }

    /// Builds a summary from per-type `(n_q, n_p)` counts.
    pub fn from_counts(counts: BTreeMap<QuestionType, (usize, usize)>) -> Self {
        let per_type: BTreeMap<_, _> = counts
            .into_iter()
            .map(|(t, (n_q, n_p))| (t, TypeStats::new(n_q, n_p)))
            .collect();
        let n_q = per_type.values().map(|s| s.n_q).sum();
        let n_p = per_type.values().map(|s| s.n_p).sum();
        let overall = TypeStats::new(n_q, n_p);
        Self {
            n_q,
            n_p,
            accuracy: overall.accuracy,
            per_type,
            kappa: None,
        }
    }
}

pub fn accuracy(verdicts: &[Verdict]) -> Result<f64, MetricError> {
    if verdicts.is_empty() {
        return Err(MetricError::Empty);
    }
    let plausible = verdicts.iter().filter(|v| v.is_plausible()).count();
    Ok(plausible as f64 / verdicts.len() as f64)
}

pub fn accuracy_by_type(
    records: &[(QuestionType, Verdict)],
) -> Result<EvaluationSummary, MetricError> {
    if records.is_empty() {
        return Err(MetricError::Empty);
    }
    Ok(EvaluationSummary::from_records(records))
}

fn tokens(text: &str) -> Vec<&str> {
    text.split(|c: char| !(c.is_alphanumeric() || c == '\''))
        .filter(|t| !t.is_empty())
        .collect()
}

fn contains_words(haystack: &[&str], needle: &[&str]) -> bool {
    !needle.is_empty() && haystack.windows(needle.len()).any(|w| w == needle)
}

/// Yes/no polarity of a normalized answer: a leading "yes"/"no" decides,
/// otherwise exactly one of the two words must appear.
pub fn yes_no_polarity(normalized_answer: &str) -> Option<bool> {
    let words = tokens(normalized_answer);
    match words.first() {
        Some(&"yes") => return Some(true),
        Some(&"no") => return Some(false),
        _ => {}
    }
    let yes = words.contains(&"yes");
    let no = words.contains(&"no");
    match (yes, no) {
        (true, false) => Some(true),
        (false, true) => Some(false),
        _ => None,
    }
}

/// Scores answers that have a closed-form key. Free-form questions, samples
/// without ground truth and yes-no answers without a clear polarity return
/// `None` and need human review.
pub fn auto_score_answer(answer: &FinalAnswer, sample: &VqaSample) -> Option<Verdict> {
    let gt = normalize_answer(sample.ground_truth.as_deref()?);
    let verdict = |ok: bool| {
        if ok {
            Verdict::Plausible
        } else {
            Verdict::Implausible
        }
    };
    match sample.qtype {
        QuestionType::FreeForm => None,
        QuestionType::YesNo => {
            let expected = match gt.as_str() {
                "yes" => true,
                "no" => false,
                _ => return None,
            };
            yes_no_polarity(&answer.normalized).map(|p| verdict(p == expected))
        }
        QuestionType::MultipleChoice => {
            let words = tokens(&answer.normalized);
            let matched: Vec<String> = sample
                .options
                .iter()
                .map(|o| normalize_answer(o))
                .filter(|o| contains_words(&words, &tokens(o)))
                .collect();
            Some(verdict(matched.len() == 1 && matched[0] == gt))
        }
    }
}

/// Whether the sample's ground truth admits automatic scoring at all.
pub fn has_closed_form_key(sample: &VqaSample) -> bool {
    let Some(gt) = sample.ground_truth.as_deref().map(normalize_answer) else {
        return false;
    };
    match sample.qtype {
        QuestionType::FreeForm => false,
        QuestionType::YesNo => gt == "yes" || gt == "no",
        QuestionType::MultipleChoice => true,
    }
}

pub fn auto_score_closed(result: &PipelineResult, sample: &VqaSample) -> Option<Verdict> {
    auto_score_answer(&result.answer, sample)
}

/// Strict majority wins; a tie counts as implausible.
pub fn majority_verdict(ratings: &[RatingRecord]) -> Result<Verdict, MetricError> {
    let first = ratings.first().ok_or(MetricError::Empty)?;
    if ratings.iter().any(|r| r.result_ref != first.result_ref) {
        return Err(MetricError::MixedResults);
    }
    let verdicts: Vec<Verdict> = ratings.iter().map(|r| r.verdict).collect();
    Ok(majority_of(&verdicts))
}

pub(crate) fn majority_of(verdicts: &[Verdict]) -> Verdict {
    let plausible = verdicts.iter().filter(|v| v.is_plausible()).count();
    if plausible * 2 > verdicts.len() {
        Verdict::Plausible
    } else {
        Verdict::Implausible
    }
}

/// Fleiss' kappa over an items × categories count matrix in which every row
/// sums to the same number of raters.
pub fn fleiss_kappa(matrix: &[Vec<usize>]) -> Result<f64, MetricError> {
    let first = matrix.first().ok_or(MetricError::Empty)?;
    let k = first.len();
    if k < 2 {
        return Err(MetricError::TooFewCategories(k));
    }
    let n: usize = first.iter().sum();
    if n < 2 {
        return Err(MetricError::TooFewRaters(n));
    }
    let mut column_totals = vec![0usize; k];
    let mut p_bar = 0.0;
    for (row_index, row) in matrix.iter().enumerate() {
        if row.len() != k {
            return Err(MetricError::RaggedMatrix);
        }
        let sum: usize = row.iter().sum();
        if sum != n {
            return Err(MetricError::RowSumMismatch {
                row: row_index,
                expected: n,
                got: sum,
            });
        }
        let squares: usize = row.iter().map(|c| c * c).sum();
        p_bar += (squares - n) as f64 / (n * (n - 1)) as f64;
        for (total, c) in column_totals.iter_mut().zip(row) {
            *total += c;
        }
    }
    let items = matrix.len();
    let total = items * n;
    if column_totals.contains(&total) {
        return Err(MetricError::DegenerateAgreement);
    }
    p_bar /= items as f64;
    let p_e: f64 = column_totals
        .iter()
        .map(|&c| {
            let p = c as f64 / total as f64;
            p * p
        })
        .sum();
    Ok((p_bar - p_e) / (1.0 - p_e))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KappaReport {
    pub kappa: f64,
    /// Items included (those with exactly `raters` ratings).
    pub items: usize,
    pub raters: usize,
    pub categories: usize,
}

/// Groups ratings by result.
pub fn group_ratings(records: &[RatingRecord]) -> BTreeMap<&ResultRef, Vec<&RatingRecord>> {
    let mut grouped: BTreeMap<&ResultRef, Vec<&RatingRecord>> = BTreeMap::new();
    for r in records {
        grouped.entry(&r.result_ref).or_default().push(r);
    }
    grouped
}

/// Kappa over the items that carry exactly `raters` ratings.
pub fn kappa_over_complete_items(
    records: &[RatingRecord],
    raters: usize,
) -> Result<KappaReport, MetricError> {
    let matrix: Vec<Vec<usize>> = group_ratings(records)
        .values()
        .filter(|rs| rs.len() == raters)
        .map(|rs| {
            let mut row = vec![0; 2];
            for r in rs {
                row[r.verdict.category()] += 1;
            }
            row
        })
        .collect();
    let kappa = fleiss_kappa(&matrix)?;
    Ok(KappaReport {
        kappa,
        items: matrix.len(),
        raters,
        categories: 2,
    })
}

/// Outcome of gating an evaluator panel on a calibration rating set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Admission {
    pub threshold: f64,
    /// Kappa of the admitted panel on the calibration items, if measurable.
    pub kappa: Option<f64>,
    pub admitted: BTreeSet<String>,
    pub rejected: BTreeSet<String>,
}

/// Admits the largest panel whose kappa on the calibration set reaches
/// `threshold`, dropping one evaluator at a time (the one whose removal
/// raises kappa most). Only items rated by every remaining evaluator count.
pub fn admit_evaluators(calibration: &[RatingRecord], threshold: f64) -> Admission {
    let mut panel: BTreeSet<String> = calibration.iter().map(|r| r.evaluator_id.clone()).collect();
    let all = panel.clone();
    let finish = |panel: BTreeSet<String>, kappa: Option<f64>| Admission {
        threshold,
        kappa,
        rejected: all.difference(&panel).cloned().collect(),
        admitted: panel,
    };
    while panel.len() >= 2 {
        let kappa = panel_kappa(calibration, &panel);
        if kappa.is_some_and(|k| k >= threshold) {
            return finish(panel, kappa);
        }
        let drop = panel
            .iter()
            .map(|candidate| {
                let mut rest = panel.clone();
                rest.remove(candidate);
                (
                    candidate.clone(),
                    panel_kappa(calibration, &rest).unwrap_or(f64::NEG_INFINITY),
                )
            })
            .fold(None::<(String, f64)>, |best, (id, k)| match best {
                Some((_, bk)) if bk >= k => best,
                _ => Some((id, k)),
            })
            .map(|(id, _)| id)
            .expect("panel is non-empty");
        panel.remove(&drop);
    }
    finish(BTreeSet::new(), None)
}

fn panel_kappa(calibration: &[RatingRecord], panel: &BTreeSet<String>) -> Option<f64> {
    if panel.len() < 2 {
        return None;
    }
    let relevant: Vec<RatingRecord> = calibration
        .iter()
        .filter(|r| panel.contains(&r.evaluator_id))
        .cloned()
        .collect();
    let complete: Vec<RatingRecord> = group_ratings(&relevant)
        .into_values()
        .filter(|rs| {
            rs.iter()
                .map(|r| &r.evaluator_id)
                .collect::<BTreeSet<_>>()
                .len()
                == panel.len()
        })
        .flatten()
        .cloned()
        .collect();
    kappa_over_complete_items(&complete, panel.len())
        .ok()
        .map(|r| r.kappa)
}

pub const REPORT_COLUMNS: [&str; 4] = ["All", "Multiple-choice", "Free-form", "Yes-no"];

/// One report row: accuracies for All / Multiple-choice / Free-form / Yes-no.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub label: String,
    pub cells: [Option<f64>; 4],
}

impl ReportRow {
    pub fn from_summary(label: impl Into<String>, s: &EvaluationSummary) -> Self {
        let by_type = |t: QuestionType| s.per_type.get(&t).and_then(|st| st.accuracy);
        Self {
            label: label.into(),
            cells: [
                s.accuracy,
                by_type(QuestionType::MultipleChoice),
                by_type(QuestionType::FreeForm),
                by_type(QuestionType::YesNo),
            ],
        }
    }
}

fn basis_points(accuracy: f64) -> i64 {
    (accuracy * 10_000.0).round() as i64
}

fn format_cell(cell: Option<f64>) -> String {
    match cell {
        Some(a) => format!("{:.2}%", basis_points(a) as f64 / 100.0),
        None => "n/a".to_string(),
    }
}

/// Fixed-width accuracy table. In each column the second-best value is
/// underlined with a row of dashes beneath it.
pub fn render_table(rows: &[ReportRow]) -> String {
    let mut second_best = vec![[false; 4]; rows.len()];
    for col in 0..4 {
        let distinct: BTreeSet<i64> = rows
            .iter()
            .filter_map(|r| r.cells[col].map(basis_points))
            .collect();
        if let Some(&second) = distinct.iter().rev().nth(1) {
            for (row, marks) in rows.iter().zip(second_best.iter_mut()) {
                marks[col] = row.cells[col].map(basis_points) == Some(second);
            }
        }
    }

    let cells: Vec<[String; 4]> = rows.iter().map(|r| r.cells.map(format_cell)).collect();
    let label_width = rows
        .iter()
        .map(|r| r.label.chars().count())
        .chain(std::iter::once("Method".len()))
        .max()
        .unwrap_or(0);
    let widths: Vec<usize> = (0..4)
        .map(|c| {
            cells
                .iter()
                .map(|row| row[c].chars().count())
                .chain(std::iter::once(REPORT_COLUMNS[c].len()))
                .max()
                .unwrap_or(0)
        })
        .collect();

    let mut out = String::new();
    let mut line = format!("{:<label_width$}", "Method");
    for (c, header) in REPORT_COLUMNS.iter().enumerate() {
        let _ = write!(line, "  {:<w$}", header, w = widths[c]);
    }
    out.push_str(line.trim_end());
    out.push('\n');
    for ((row, cells), marks) in rows.iter().zip(&cells).zip(&second_best) {
        let mut line = format!("{:<label_width$}", row.label);
        let mut under = " ".repeat(label_width);
        for c in 0..4 {
            let _ = write!(line, "  {:<w$}", cells[c], w = widths[c]);
            let mark = if marks[c] {
                "-".repeat(cells[c].chars().count())
            } else {
                String::new()
            };
            let _ = write!(under, "  {:<w$}", mark, w = widths[c]);
        }
        out.push_str(line.trim_end());
        out.push('\n');
        if marks.iter().any(|&m| m) {
            out.push_str(under.trim_end());
            out.push('\n');
        }
    }
    if second_best.iter().flatten().any(|&m| m) {
        out.push_str("Dashes underline the second-best result in each column.\n");
    }
    out
}

pub fn render_report(summaries: &BTreeMap<PipelineMode, EvaluationSummary>) -> String {
    let rows: Vec<ReportRow> = summaries
        .iter()
        .map(|(mode, s)| ReportRow::from_summary(mode.label(), s))
        .collect();
    render_table(&rows)
}

/// Reference results on the flood VQA benchmark. Per-type question counts
/// are the only split of its 22,422 questions under which every published
/// rounded accuracy, including the overall column, is reproduced.
pub fn reference_summaries() -> BTreeMap<PipelineMode, EvaluationSummary> {
    const N_Q: [usize; 3] = [4116, 3900, 14406];
    let rows = [
        (PipelineMode::NoCoT, [1319, 2425, 7928]),
        (PipelineMode::ZeroShotCoT, [1367, 3247, 8263]),
        (PipelineMode::TwoStage, [1409, 3204, 9033]),
    ];
    rows.into_iter()
        .map(|(mode, n_p)| {
            let counts = [
                QuestionType::MultipleChoice,
                QuestionType::FreeForm,
                QuestionType::YesNo,
            ]
            .into_iter()
            .zip(N_Q.into_iter().zip(n_p))
            .collect();
            (mode, EvaluationSummary::from_counts(counts))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use Verdict::{Implausible as I, Plausible as P};

    fn rating(sample: &str, evaluator: &str, verdict: Verdict) -> RatingRecord {
        RatingRecord {
            result_ref: ResultRef {
                sample_id: sample.into(),
                mode: PipelineMode::TwoStage,
            },
            evaluator_id: evaluator.into(),
            verdict,
            timestamp: DateTime::<Utc>::UNIX_EPOCH,
        }
    }

    fn sample(qtype: QuestionType, options: &[&str], gt: Option<&str>) -> VqaSample {
        VqaSample {
            sample_id: "s".into(),
            image: crate::model::ImageRef {
                id: "i".into(),
                uri: "u".into(),
            },
            question: "q".into(),
            qtype,
            options: options.iter().map(|s| s.to_string()).collect(),
            ground_truth: gt.map(String::from),
        }
    }

    #[test]
    fn accuracy_examples() {
        assert_eq!(accuracy(&[P, P, P, I]).unwrap(), 0.75);
        assert_eq!(accuracy(&[I, I]).unwrap(), 0.0);
        assert_eq!(accuracy(&[]), Err(MetricError::Empty));
    }

    #[test]
    fn accuracy_by_type_examples() {
        use QuestionType::*;
        let s = accuracy_by_type(&[(YesNo, P), (YesNo, I), (FreeForm, P), (FreeForm, P)]).unwrap();
        assert_eq!(s.accuracy, Some(0.75));
        assert_eq!(s.per_type[&YesNo].accuracy, Some(0.5));
        assert_eq!(s.per_type[&FreeForm].accuracy, Some(1.0));
        assert!(!s.per_type.contains_key(&MultipleChoice));

        let one = accuracy_by_type(&[(YesNo, P), (YesNo, I), (YesNo, I)]).unwrap();
        assert_eq!(one.per_type.len(), 1);
        assert_eq!(one.per_type[&YesNo].accuracy, one.accuracy);

        let shuffled =
            accuracy_by_type(&[(FreeForm, P), (YesNo, I), (FreeForm, P), (YesNo, P)]).unwrap();
        assert_eq!(shuffled, s);
        assert_eq!(accuracy_by_type(&[]), Err(MetricError::Empty));
    }

    #[test]
    fn auto_scoring() {
        let yn = sample(QuestionType::YesNo, &[], Some("yes"));
        assert_eq!(
            auto_score_answer(&FinalAnswer::new("Yes, there was flood damage."), &yn),
            Some(P)
        );
        assert_eq!(auto_score_answer(&FinalAnswer::new("No."), &yn), Some(I));
        assert_eq!(
            auto_score_answer(&FinalAnswer::new("There was flood damage"), &yn),
            None
        );
        assert_eq!(
            auto_score_answer(&FinalAnswer::new("I'd say yes rather than no"), &yn),
            None
        );
        assert_eq!(
            auto_score_answer(&FinalAnswer::new("The answer is yes"), &yn),
            Some(P)
        );

        let mc = sample(
            QuestionType::MultipleChoice,
            &["house", "plane", "boat", "no safe place"],
            Some("no safe place"),
        );
        assert_eq!(
            auto_score_answer(&FinalAnswer::new("the house"), &mc),
            Some(I)
        );
        assert_eq!(
            auto_score_answer(&FinalAnswer::new("There is no safe place."), &mc),
            Some(P)
        );
        assert_eq!(
            auto_score_answer(&FinalAnswer::new("the boat or the house"), &mc),
            Some(I)
        );
        // "boats" is not a whole-word match for "boat".
        assert_eq!(auto_score_answer(&FinalAnswer::new("boats"), &mc), Some(I));

        let ff = sample(QuestionType::FreeForm, &[], Some("flooded"));
        assert_eq!(auto_score_answer(&FinalAnswer::new("flooded"), &ff), None);
        let no_gt = sample(QuestionType::YesNo, &[], None);
        assert_eq!(auto_score_answer(&FinalAnswer::new("yes"), &no_gt), None);
        assert!(has_closed_form_key(&yn) && has_closed_form_key(&mc));
        assert!(!has_closed_form_key(&ff) && !has_closed_form_key(&no_gt));
    }

    #[test]
    fn majority_examples() {
        assert_eq!(
            majority_verdict(&[
                rating("a", "1", P),
                rating("a", "2", P),
                rating("a", "3", I)
            ]),
            Ok(P)
        );
        assert_eq!(
            majority_verdict(&[rating("a", "1", P), rating("a", "2", I)]),
            Ok(I)
        );
        assert_eq!(majority_verdict(&[rating("a", "1", I)]), Ok(I));
        assert_eq!(majority_verdict(&[]), Err(MetricError::Empty));
        assert_eq!(
            majority_verdict(&[rating("a", "1", P), rating("b", "2", P)]),
            Err(MetricError::MixedResults)
        );
    }

    #[test]
    fn kappa_fixtures() {
        // Perfect agreement, categories differ across items.
        assert_eq!(
            fleiss_kappa(&[vec![2, 0], vec![0, 2], vec![2, 0]]).unwrap(),
            1.0
        );
        // Hand-evaluated: P̄ = 0.5, P̄e = 0.625.
        let k = fleiss_kappa(&[vec![2, 0], vec![1, 1]]).unwrap();
        assert!((k - (-1.0 / 3.0)).abs() < 1e-12);
        // Hand-evaluated: P̄ = 0, P̄e = 0.5.
        let k = fleiss_kappa(&[vec![1, 1], vec![1, 1]]).unwrap();
        assert!((k - (-1.0)).abs() < 1e-12);
    }

    #[test]
    fn kappa_errors() {
        assert_eq!(
            fleiss_kappa(&[vec![2, 0], vec![2, 0]]),
            Err(MetricError::DegenerateAgreement)
        );
        assert_eq!(
            fleiss_kappa(&[vec![2, 0], vec![1, 2]]),
            Err(MetricError::RowSumMismatch {
                row: 1,
                expected: 2,
                got: 3
            })
        );
        assert_eq!(
            fleiss_kappa(&[vec![1, 0]]),
            Err(MetricError::TooFewRaters(1))
        );
        assert_eq!(
            fleiss_kappa(&[vec![3]]),
            Err(MetricError::TooFewCategories(1))
        );
        assert_eq!(fleiss_kappa(&[]), Err(MetricError::Empty));
    }

    #[test]
    fn kappa_from_ratings_uses_complete_items() {
        let records = vec![
            rating("a", "1", P),
            rating("a", "2", P),
            rating("b", "1", P),
            rating("b", "2", I),
            rating("c", "1", I),
        ];
        let report = kappa_over_complete_items(&records, 2).unwrap();
        assert_eq!(report.items, 2);
        assert!((report.kappa + 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn admission_drops_the_outlier() {
        let truth = [P, I, P, I, P, P, I, I];
        let mut records = Vec::new();
        for (i, &v) in truth.iter().enumerate() {
            let item = format!("cal-{i}");
            records.push(rating(&item, "alice", v));
            records.push(rating(&item, "bob", v));
            records.push(rating(&item, "carol", v));
            // dave disagrees on every other item
            let flipped = if i % 2 == 0 {
                if v == P {
                    I
                } else {
                    P
                }
            } else {
                v
            };
            records.push(rating(&item, "dave", flipped));
        }
        let admission = admit_evaluators(&records, DEFAULT_KAPPA_THRESHOLD);
        assert_eq!(admission.kappa, Some(1.0));
        assert_eq!(admission.rejected, BTreeSet::from(["dave".to_string()]));
        assert_eq!(admission.admitted.len(), 3);

        let strict = admit_evaluators(&records[..2], 0.5);
        assert!(strict.admitted.is_empty());
    }

    #[test]
    fn reference_summaries_match_published_rounding() {
        let refs = reference_summaries();
        let row = ReportRow::from_summary("VQA-TSP", &refs[&PipelineMode::TwoStage]);
        let cells: Vec<String> = row.cells.iter().map(|c| format_cell(*c)).collect();
        assert_eq!(cells, ["60.86%", "34.23%", "82.15%", "62.70%"]);
        let row = ReportRow::from_summary("x", &refs[&PipelineMode::ZeroShotCoT]);
        let cells: Vec<String> = row.cells.iter().map(|c| format_cell(*c)).collect();
        assert_eq!(cells, ["57.43%", "33.21%", "83.26%", "57.36%"]);
        let row = ReportRow::from_summary("x", &refs[&PipelineMode::NoCoT]);
        let cells: Vec<String> = row.cells.iter().map(|c| format_cell(*c)).collect();
        assert_eq!(cells, ["52.06%", "32.05%", "62.18%", "55.03%"]);
        for s in refs.values() {
            assert_eq!(s.n_q, 22_422);
        }
    }

    #[test]
    fn report_layout() {
        let report = render_report(&reference_summaries());
        let lines: Vec<&str> = report.lines().collect();
        let squash = |l: &str| l.split_whitespace().collect::<Vec<_>>().join(" ");
        let tsp = lines.iter().position(|l| l.starts_with("VQA-TSP")).unwrap();
        assert_eq!(squash(lines[tsp]), "VQA-TSP 60.86% 34.23% 82.15% 62.70%");
        // Only the free-form cell of the VQA-TSP row is second best.
        let under = lines[tsp + 1];
        let ff_col = lines[tsp].find("82.15%").unwrap();
        assert_eq!(under.find('-'), Some(ff_col));
        assert_eq!(under.trim(), "------");

        let single: BTreeMap<_, _> = reference_summaries()
            .into_iter()
            .filter(|(m, _)| *m == PipelineMode::TwoStage)
            .collect();
        let report = render_report(&single);
        assert_eq!(report.lines().count(), 2);
        assert!(!report.contains("------") && !report.contains("Dashes"));
    }

    #[test]
    fn empty_type_cell() {
        let s = EvaluationSummary::from_records(&[(QuestionType::YesNo, P)]);
        let table = render_table(&[ReportRow::from_summary("VQA-TSP", &s)]);
        let row = table.lines().nth(1).unwrap();
        assert_eq!(
            row.split_whitespace().collect::<Vec<_>>(),
            ["VQA-TSP", "100.00%", "n/a", "n/a", "100.00%"]
        );
    }
}
