//! File format, commands and reports.

pub mod commands;
pub mod format;
pub mod report;

pub use commands::{cmd_ends, cmd_family, cmd_filtrate, cmd_solve, cmd_tree, cmd_validate, Outcome, RunOptions};
pub use format::{parse, serialize, BundleFile, ParseError};
