//! Configuration ingestion, experiment drivers and data emission behind the
//! `symflow` binary.

pub mod config;
pub mod run;
pub mod verify;

pub use config::{ConfigError, RunConfig};
pub use run::{Outcome, RunError};
pub use verify::{Check, Report, Suite};
