//! Two-stage prompting for zero-shot visual question answering on flood
//! imagery, with a human-evaluation harness.
//!
//! Stage 1 turns an image into a textual visual context and asks a language
//! model to think step by step. Stage 2 feeds the visual context and the
//! resulting thought back in and asks for the final answer.

pub mod backends;
pub mod cli;
pub mod config;
pub mod evaluation;
pub mod fixtures;
pub mod model;
pub mod pipeline;
pub mod prompting;
pub mod review;
