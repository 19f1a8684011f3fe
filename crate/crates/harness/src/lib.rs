//! Configuration, dataset ingestion and experiment drivers behind the
//! `nystrom` command-line tool.

pub mod config;
pub mod dataset;
pub mod error;
pub mod experiments;
pub mod output;

pub use config::Config;
pub use error::{HarnessError, Result};
pub use output::CsvTable;
