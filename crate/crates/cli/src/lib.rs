//! Experiment driver for the sketch-guided modular policy library.

pub mod error;
pub mod output;
pub mod pipeline;
pub mod spec;

pub use error::{CliError, Result};
