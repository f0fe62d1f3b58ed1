//! Command-line driver for behavior-diagnostic game design: configuration,
//! persistence formats, renderers and table reproduction on top of `bdg-core`.

pub mod cli;
pub mod commands;
pub mod config;
pub mod error;
pub mod formats;
pub mod render;
pub mod reproduce;

pub use error::{CliError, Result};
