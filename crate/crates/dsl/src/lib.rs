//! File formats, experiment pipelines and the `dsl` command-line tool built
//! on `dsl-core`.

pub mod cli;
pub mod config;
pub mod error;
pub mod experiments;
pub mod formats;
pub mod manifest;

pub use error::{DslError, Result};
