//! Files, manifests and the command-line runner around `sparsecl-core`.

pub mod analyze;
pub mod cli;
pub mod dataset;
pub mod error;
pub mod formats;
pub mod manifest;
pub mod provenance;
pub mod report;
pub mod runner;

pub use error::{CliError, Result};
