//! Command-line front end for multiple membership model fitting.
//!
//! Exit codes: 0 success, 1 usage or output failure, 2 data errors, 3 model
//! errors, 4 numerical failures.

pub mod cli;
pub mod error;
pub mod experiment;
pub mod ingest;
pub mod output;

pub use error::{exit, CliError, Result};
