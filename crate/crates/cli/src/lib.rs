//! Command-line front end for `mfergodic`: experiment configs, the results
//! ledger, plot CSVs and the acceptance bench.

pub mod app;
pub mod bench;
pub mod commands;
pub mod config;
pub mod error;
pub mod ledger;
pub mod plot;

pub use app::{main_with_args, Cli};
pub use config::ExperimentConfig;
pub use error::{exit, CliError};
