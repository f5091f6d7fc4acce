//! Renders the published benchmark accuracies, with the second-best result
//! of each column underlined.
//!
//! ```bash
//! cargo run --example reference_report
//! ```

use vqa_tsp::evaluation::{reference_summaries, render_report};

fn main() {
    let summaries = reference_summaries();
    print!("{}", render_report(&summaries));
    println!();
    for (mode, s) in &summaries {
        println!(
            "{:14} N(p) = {:5} of N(q) = {}",
            mode.as_str(),
            s.n_p,
            s.n_q
        );
    }
}
