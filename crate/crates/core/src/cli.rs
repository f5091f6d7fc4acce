//! Command-line entry points.
//!
//! Exit codes: 0 success, 1 configuration or input error, 2 some samples
//! failed, 3 nothing scorable (or degenerate agreement).

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write as _;
use std::num::NonZeroUsize;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};

use crate::config::RunConfig;
use crate::evaluation::{
    admit_evaluators, auto_score_answer, group_ratings, has_closed_form_key,
    kappa_over_complete_items, majority_verdict, reference_summaries, render_report,
    EvaluationSummary, MetricError, RatingRecord, Verdict, DEFAULT_KAPPA_THRESHOLD,
    REFERENCE_PANEL_KAPPA,
};
use crate::model::{load_dataset, FinalAnswer, QuestionType, VqaSample};
use crate::pipeline::{read_results, write_results, Pipeline, PipelineMode, ResultLine};
use crate::review::{read_ratings, review_items, router, ReviewRun, ServiceState};

pub const EXIT_OK: u8 = 0;
pub const EXIT_CONFIG: u8 = 1;
pub const EXIT_PARTIAL: u8 = 2;
pub const EXIT_UNSCORABLE: u8 = 3;

#[derive(Debug, Parser)]
#[command(
    name = "vqa-tsp",
    version,
    about = "Two-stage prompting for zero-shot flood VQA"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one pipeline mode over the configured dataset.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        mode: Option<PipelineMode>,
        #[arg(long)]
        parallelism: Option<usize>,
        /// Results file (JSONL).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score one results file and print the accuracy table.
    Eval {
        results: Option<PathBuf>,
        #[command(flatten)]
        score: ScoreArgs,
    },
    /// Score several results files (one per mode) side by side.
    Compare {
        results: Vec<PathBuf>,
        #[command(flatten)]
        score: ScoreArgs,
    },
    /// Serve the human review API and UI for a results file.
    ReviewServe {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        results: Option<PathBuf>,
        #[arg(long)]
        ratings: Option<PathBuf>,
        #[arg(long)]
        bind: Option<String>,
    },
    /// Fleiss' kappa over the items of a ratings file that carry a full set
    /// of ratings.
    Kappa {
        ratings: PathBuf,
        /// Ratings per item; defaults to the largest count in the file.
        #[arg(long)]
        raters: Option<usize>,
        #[arg(long, default_value_t = DEFAULT_KAPPA_THRESHOLD)]
        threshold: f64,
    },
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    /// Supplies the dataset, ratings path, panel size and calibration set.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Dataset file, when no config is given.
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[arg(long)]
    pub ratings: Option<PathBuf>,
    /// Score closed-form answers against ground truth instead of ratings.
    #[arg(long)]
    pub auto: bool,
    /// Ratings per item for kappa.
    #[arg(long)]
    pub raters: Option<usize>,
    /// Summary JSON output.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Render the stored reference results instead of scoring.
    #[arg(long, conflicts_with_all = ["config", "dataset", "ratings", "auto"])]
    pub reference: bool,
}

#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    fn config(message: impl std::fmt::Display) -> Self {
        Self {
            code: EXIT_CONFIG,
            message: message.to_string(),
        }
    }

    fn unscorable(message: impl std::fmt::Display) -> Self {
        Self {
            code: EXIT_UNSCORABLE,
            message: message.to_string(),
        }
    }
}

/// Runs a parsed command and returns its exit code. Errors are printed to
/// stderr.
pub async fn execute(cli: Cli) -> u8 {
    let outcome = match cli.command {
        Command::Run {
            config,
            mode,
            parallelism,
            out,
        } => cmd_run(&config, mode, parallelism, out).await,
        Command::Eval { results, score } => {
            let results: Vec<PathBuf> = results.into_iter().collect();
            cmd_eval(&results, &score, false)
        }
        Command::Compare { results, score } => cmd_eval(&results, &score, true),
        Command::ReviewServe {
            config,
            results,
            ratings,
            bind,
        } => cmd_review_serve(&config, results, ratings, bind).await,
        Command::Kappa {
            ratings,
            raters,
            threshold,
        } => cmd_kappa(&ratings, raters, threshold),
    };
    match outcome {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {}", e.message);
            e.code
        }
    }
}

pub async fn cmd_run(
    config_path: &Path,
    mode: Option<PipelineMode>,
    parallelism: Option<usize>,
    out: Option<PathBuf>,
) -> Result<u8, CliError> {
    let config = RunConfig::load(config_path).map_err(CliError::config)?;
    let mode = mode
        .or(config.mode)
        .ok_or_else(|| CliError::config("no mode given (--mode or `mode` in the config)"))?;
    let parallelism = NonZeroUsize::new(parallelism.unwrap_or(config.parallelism))
        .ok_or_else(|| CliError::config("parallelism must be at least 1"))?;
    let out = out.or_else(|| config.results_path()).ok_or_else(|| {
        CliError::config("no output path given (--out or `results` in the config)")
    })?;
    let samples = load_dataset(config.dataset_path()).map_err(CliError::config)?;
    let backends = config.build_backends().map_err(CliError::config)?;
    let mut pipeline =
        Pipeline::new(backends).with_prompts(config.prompts().map_err(CliError::config)?);
    if let Some(record) = config.record_timings {
        pipeline = pipeline.with_timings(record);
    }
    let outcomes = pipeline.run_batch(&samples, mode, parallelism).await;
    write_results(&out, &outcomes).map_err(CliError::config)?;
    let failed = outcomes.iter().filter(|o| o.is_err()).count();
    eprintln!(
        "{}: wrote {} results ({failed} failed) to {}",
        mode.as_str(),
        outcomes.len(),
        out.display()
    );
    for failure in outcomes.iter().filter_map(|o| o.as_ref().err()) {
        eprintln!("  {}: {}", failure.sample_id, failure.error);
    }
    Ok(if failed == 0 { EXIT_OK } else { EXIT_PARTIAL })
}

fn scorer_config(score: &ScoreArgs) -> Result<Option<RunConfig>, CliError> {
    score
        .config
        .as_deref()
        .map(RunConfig::load)
        .transpose()
        .map_err(CliError::config)
}

pub fn cmd_eval(results: &[PathBuf], score: &ScoreArgs, compare: bool) -> Result<u8, CliError> {
    let summaries = if score.reference {
        reference_summaries()
    } else {
        if results.is_empty() {
            return Err(CliError::config("no results file given"));
        }
        let config = scorer_config(score)?;
        let dataset = score
            .dataset
            .clone()
            .or_else(|| config.as_ref().map(|c| c.dataset_path()))
            .ok_or_else(|| CliError::config("no dataset (--dataset or --config)"))?;
        let samples = load_dataset(&dataset).map_err(CliError::config)?;
        let mut lines = Vec::new();
        let mut seen_modes = BTreeSet::new();
        for path in results {
            let file_lines = read_results(path).map_err(CliError::config)?;
            let modes: BTreeSet<PipelineMode> = file_lines.iter().map(|l| l.mode).collect();
            if compare && modes.iter().any(|m| seen_modes.contains(m)) {
                return Err(CliError::config(format!(
                    "{} repeats a mode of an earlier file",
                    path.display()
                )));
            }
            seen_modes.extend(modes);
            lines.extend(file_lines);
        }
        if score.auto {
            auto_summaries(&lines, &samples)?
        } else {
            let ratings_path = score
                .ratings
                .clone()
                .or_else(|| config.as_ref().and_then(|c| c.ratings_path()))
                .ok_or_else(|| CliError::config("no ratings (--ratings, --config or --auto)"))?;
            let ratings = read_ratings(&ratings_path).map_err(CliError::config)?;
            let ratings = admitted_ratings(ratings, config.as_ref())?;
            let raters = score
                .raters
                .or_else(|| config.as_ref().map(|c| c.raters_per_item))
                .unwrap_or(3);
            rated_summaries(&lines, &samples, &ratings, raters)?
        }
    };
    if summaries.values().all(|s| s.n_q == 0) {
        return Err(CliError::unscorable("no scorable results"));
    }
    if let Some(out) = &score.out {
        let json = serde_json::to_string_pretty(&summaries).expect("summaries serialize");
        write_file(out, &(json + "\n"))?;
    }
    let mut stdout = std::io::stdout().lock();
    let _ = stdout.write_all(render_report(&summaries).as_bytes());
    for (mode, s) in &summaries {
        let kappa = s
            .kappa
            .map_or_else(|| "n/a".to_string(), |k| format!("{k:.2}"));
        let _ = writeln!(
            stdout,
            "{}: N(q) = {}, N(p) = {}, kappa = {kappa}",
            mode.as_str(),
            s.n_q,
            s.n_p
        );
    }
    Ok(EXIT_OK)
}

fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)
            .map_err(|e| CliError::config(format!("{}: {e}", parent.display())))?;
    }
    std::fs::write(path, contents).map_err(|e| CliError::config(format!("{}: {e}", path.display())))
}

fn sample_index(samples: &[VqaSample]) -> BTreeMap<&str, &VqaSample> {
    samples.iter().map(|s| (s.sample_id.as_str(), s)).collect()
}

/// Closed-form scoring. A failed sample whose question has a closed-form key
/// counts as implausible; everything unscorable is left out.
fn auto_summaries(
    lines: &[ResultLine],
    samples: &[VqaSample],
) -> Result<BTreeMap<PipelineMode, EvaluationSummary>, CliError> {
    let index = sample_index(samples);
    let mut records: BTreeMap<PipelineMode, Vec<(QuestionType, Verdict)>> = BTreeMap::new();
    for line in lines {
        let sample = index.get(line.sample_id.as_str()).ok_or_else(|| {
            CliError::config(format!("result for unknown sample {:?}", line.sample_id))
        })?;
        let verdict = match &line.answer {
            Some(answer) if !line.is_error() => {
                auto_score_answer(&FinalAnswer::new(answer.clone()), sample)
            }
            _ => has_closed_form_key(sample).then_some(Verdict::Implausible),
        };
        let entry = records.entry(line.mode).or_default();
        if let Some(v) = verdict {
            entry.push((sample.qtype, v));
        }
    }
    Ok(records
        .into_iter()
        .map(|(mode, r)| (mode, EvaluationSummary::from_records(&r)))
        .collect())
}

fn admitted_ratings(
    ratings: Vec<RatingRecord>,
    config: Option<&RunConfig>,
) -> Result<Vec<RatingRecord>, CliError> {
    let Some(path) = config.and_then(|c| c.calibration_path()) else {
        return Ok(ratings);
    };
    let calibration = read_ratings(&path).map_err(CliError::config)?;
    let admission = admit_evaluators(
        &calibration,
        config.map_or(DEFAULT_KAPPA_THRESHOLD, |c| c.kappa_threshold),
    );
    let kappa = admission
        .kappa
        .map_or_else(|| "n/a".to_string(), |k| format!("{k:.2}"));
    eprintln!(
        "calibration kappa {kappa}: admitted {:?}, rejected {:?}",
        admission.admitted, admission.rejected
    );
    Ok(ratings
        .into_iter()
        .filter(|r| admission.admitted.contains(&r.evaluator_id))
        .collect())
}

/// Majority verdict per rated result. Results without ratings are left out.
fn rated_summaries(
    lines: &[ResultLine],
    samples: &[VqaSample],
    ratings: &[RatingRecord],
    raters: usize,
) -> Result<BTreeMap<PipelineMode, EvaluationSummary>, CliError> {
    let index = sample_index(samples);
    let known: BTreeSet<(String, PipelineMode)> =
        lines.iter().map(ResultLine::result_key).collect();
    let relevant: Vec<RatingRecord> = ratings
        .iter()
        .filter(|r| known.contains(&(r.result_ref.sample_id.clone(), r.result_ref.mode)))
        .cloned()
        .collect();
    let mut records: BTreeMap<PipelineMode, Vec<(QuestionType, Verdict)>> = BTreeMap::new();
    let mut per_mode: BTreeMap<PipelineMode, Vec<RatingRecord>> = BTreeMap::new();
    for (result_ref, group) in group_ratings(&relevant) {
        let sample = index.get(result_ref.sample_id.as_str()).ok_or_else(|| {
            CliError::config(format!(
                "rating for unknown sample {:?}",
                result_ref.sample_id
            ))
        })?;
        let owned: Vec<RatingRecord> = group.into_iter().cloned().collect();
        let verdict = majority_verdict(&owned).map_err(CliError::config)?;
        records
            .entry(result_ref.mode)
            .or_default()
            .push((sample.qtype, verdict));
        per_mode.entry(result_ref.mode).or_default().extend(owned);
    }
    Ok(records
        .into_iter()
        .map(|(mode, r)| {
            let mut summary = EvaluationSummary::from_records(&r);
            summary.kappa = kappa_over_complete_items(&per_mode[&mode], raters)
                .ok()
                .map(|k| k.kappa);
            (mode, summary)
        })
        .collect())
}

pub fn cmd_kappa(path: &Path, raters: Option<usize>, threshold: f64) -> Result<u8, CliError> {
    if !(0.0..=1.0).contains(&threshold) {
        return Err(CliError::config("threshold must be in [0, 1]"));
    }
    let ratings = read_ratings(path).map_err(CliError::config)?;
    if ratings.is_empty() {
        return Err(CliError::unscorable(format!(
            "{} holds no ratings",
            path.display()
        )));
    }
    let raters = raters
        .or_else(|| group_ratings(&ratings).values().map(Vec::len).max())
        .unwrap_or_default();
    let report = kappa_over_complete_items(&ratings, raters).map_err(|e| match e {
        MetricError::DegenerateAgreement => CliError::unscorable(
            "kappa is undefined: every rating falls in one category, so chance agreement is 1",
        ),
        other => CliError::unscorable(format!("kappa over items with {raters} ratings: {other}")),
    })?;
    let verdict = if report.kappa >= threshold {
        "admitted"
    } else {
        "below threshold"
    };
    println!("kappa: {:.2} ({})", report.kappa, report.kappa);
    println!(
        "N = {} items, n = {} raters, k = {} categories",
        report.items, report.raters, report.categories
    );
    println!("reference panel kappa: {REFERENCE_PANEL_KAPPA:.2}; admission threshold {threshold:.2}: {verdict}");
    Ok(EXIT_OK)
}

pub async fn cmd_review_serve(
    config_path: &Path,
    results: Option<PathBuf>,
    ratings: Option<PathBuf>,
    bind: Option<String>,
) -> Result<u8, CliError> {
    let config = RunConfig::load(config_path).map_err(CliError::config)?;
    let results = results.or_else(|| config.results_path()).ok_or_else(|| {
        CliError::config("no results file (--results or `results` in the config)")
    })?;
    let lines = read_results(&results).map_err(CliError::config)?;
    let samples = load_dataset(config.dataset_path()).map_err(CliError::config)?;
    let items = review_items(&lines, &samples).map_err(CliError::config)?;
    let ratings = ratings
        .or_else(|| config.ratings_path())
        .unwrap_or_else(|| results.with_extension("ratings.jsonl"));
    let name = config.run_name.clone().unwrap_or_else(|| {
        results
            .file_stem()
            .map_or_else(|| "run".to_string(), |s| s.to_string_lossy().into_owned())
    });
    let image_root = config
        .dataset_path()
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_default();
    let run = ReviewRun::open(name.clone(), items, config.raters_per_item, &ratings)
        .map_err(CliError::config)?
        .with_image_root(image_root);
    let bind = bind
        .or_else(|| config.bind.clone())
        .unwrap_or_else(|| "127.0.0.1:8080".to_string());
    let listener = tokio::net::TcpListener::bind(&bind)
        .await
        .map_err(|e| CliError::config(format!("bind {bind}: {e}")))?;
    let addr = listener.local_addr().map_err(CliError::config)?;
    let app = router(
        ServiceState::new([Arc::new(run)]),
        config.ui_dir().as_deref(),
    );
    eprintln!(
        "review run {name:?} on http://{addr} (ratings in {})",
        ratings.display()
    );
    axum::serve(listener, app)
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
        .map_err(CliError::config)?;
    Ok(EXIT_OK)
}
