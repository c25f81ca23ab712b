//! File formats, dataset folders, configuration, checkpoints, benchmarks and
//! the training driver behind the `fetr` command.

pub mod bench;
pub mod checkpoint;
pub mod config;
pub mod dataset;
mod error;
pub mod image_io;
pub mod run;
pub mod synth;

pub use error::{Error, Result};
