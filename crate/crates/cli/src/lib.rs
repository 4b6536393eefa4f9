//! Command-line harness around `spsconv`: synthetic scenes, baseline vs
//! pruned backbone runs, pruning-ratio sweeps and foreground statistics.

pub mod commands;
pub mod config;
pub mod error;
pub mod scene;

pub use error::{CliError, Result};
