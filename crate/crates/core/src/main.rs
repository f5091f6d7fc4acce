use std::process::ExitCode;

use clap::Parser;
use tracing_subscriber::EnvFilter;

use vqa_tsp::cli::{execute, Cli};

#[tokio::main]
async fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("warn")),
        )
        .with_writer(std::io::stderr)
        .init();
    ExitCode::from(execute(Cli::parse()).await)
}
