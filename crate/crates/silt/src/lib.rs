//! File formats, checkpoints, the pipeline commands and the experiment driver
//! around `silt-core`.

pub mod artifact;
pub mod checkpoint;
pub mod config;
pub mod error;
pub mod experiment;
pub mod formats;
pub mod pipeline;

pub use error::{CliError, Result};
