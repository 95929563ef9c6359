//! Configuration, experiment runner, presets and CSV output.

pub mod config;
pub mod csv;
pub mod presets;
pub mod run;

use thiserror::Error;

use crate::error::PmdError;
pub use config::{parse_config, ConfigError, ExperimentConfig, Kind, MdpSource, RawConfig};
pub use csv::{emit_csv, parse_csv, Cell, CsvTable};
pub use run::{execute, output_dir, run_experiment, write_record, RunRecord, SeedRun};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{context}: {source}")]
    Run { context: String, source: PmdError },
}
