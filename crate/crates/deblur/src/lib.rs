//! Host-side companion to `deblur-core`: PPM images, paired datasets,
//! checkpoint files, run configuration and the `deblur` command line.

pub use deblur_core as core;

pub mod checkpoint;
pub mod cli;
pub mod commands;
pub mod config;
pub mod dataset;
pub mod error;
pub mod ppm;
pub mod report;

pub use error::{CliError, CliResult};
