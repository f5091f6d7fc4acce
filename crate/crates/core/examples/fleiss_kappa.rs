//! Inter-rater agreement and the evaluator admission gate.
//!
//! ```bash
//! cargo run --example fleiss_kappa
//! ```

use chrono::{DateTime, Utc};
use vqa_tsp::evaluation::{
    admit_evaluators, fleiss_kappa, kappa_over_complete_items, RatingRecord, ResultRef, Verdict,
    DEFAULT_KAPPA_THRESHOLD, REFERENCE_PANEL_KAPPA,
};
use vqa_tsp::pipeline::PipelineMode;

fn main() {
    // rows are items, columns count raters per category
    let examples: [(&str, Vec<Vec<usize>>); 3] = [
        ("split then unanimous", vec![vec![1, 1], vec![2, 0]]),
        ("always split", vec![vec![1, 1], vec![1, 1]]),
        (
            "unanimous, both categories used",
            vec![vec![3, 0], vec![0, 3]],
        ),
    ];
    for (name, m) in &examples {
        println!("{name:32} {m:?} -> kappa {:.4}", fleiss_kappa(m).unwrap());
    }
    match fleiss_kappa(&[vec![2, 0], vec![2, 0]]) {
        Ok(k) => println!("single category -> {k}"),
        Err(e) => println!("single category -> error: {e}"),
    }

    // a calibration set: ana and bo agree, cy answers at random
    let pattern = "PPIPIPPIIPPPIPIP";
    let noise = "IPPIPIIPPPIIPPIP";
    let mut calibration = Vec::new();
    for (i, (good, bad)) in pattern.chars().zip(noise.chars()).enumerate() {
        for (evaluator, c) in [("ana", good), ("bo", good), ("cy", bad)] {
            calibration.push(RatingRecord {
                result_ref: ResultRef {
                    sample_id: format!("cal-{i:02}"),
                    mode: PipelineMode::TwoStage,
                },
                evaluator_id: evaluator.into(),
                verdict: if c == 'P' {
                    Verdict::Plausible
                } else {
                    Verdict::Implausible
                },
                timestamp: DateTime::<Utc>::UNIX_EPOCH,
            });
        }
    }
    let full = kappa_over_complete_items(&calibration, 3).unwrap();
    println!(
        "\nfull panel: kappa {:.3} over N = {}, n = {}, k = {}",
        full.kappa, full.items, full.raters, full.categories
    );
    let admission = admit_evaluators(&calibration, DEFAULT_KAPPA_THRESHOLD);
    println!(
        "admitted {:?}, rejected {:?}, panel kappa {:.3} (threshold {:.2}, reference panel {:.2})",
        admission.admitted,
        admission.rejected,
        admission.kappa.unwrap_or(f64::NAN),
        admission.threshold,
        REFERENCE_PANEL_KAPPA
    );
}
