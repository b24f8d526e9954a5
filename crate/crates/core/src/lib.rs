//! Multi-view license plate recognition, end to end and self-contained:
//! synthetic scene generation, classical plate localization, multi-view
//! image fusion, a from-scratch CRNN with CTC training, and a small
//! multi-camera service harness.
//!
//! Everything is deterministic given a seed: dataset generation, weight
//! init, training order, and decoding all draw from explicitly seeded
//! generators, so repeated runs produce byte-identical artifacts.

pub mod camsim;
pub mod cli;
pub mod config;
pub mod ctc;
pub mod error;
pub mod fusion;
pub mod geometry;
pub mod img;
pub mod neuralcore;
pub mod pipeline;
pub mod synthgen;

pub use error::{Error, Result};

/// Entry point for the `platefuse` binary (kept here so the CLI surface can
/// be integration-tested through the library).
pub fn cli_main() {
    if let Err(e) = cli::run(std::env::args_os()) {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}
