//! Config parsing, experiment dispatch and report writing for the `kgorbit` binary.

pub mod config;
pub mod error;
pub mod output;
pub mod runner;

pub use config::{override_seed, parse_config, serialize_config, Experiment, RunConfig};
pub use error::{CliError, Result};
pub use runner::{run, RunOutcome};
