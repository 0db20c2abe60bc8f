//! Point-cloud ingestion, configuration and the `compute`, `benchmark` and
//! `validate` subcommands behind the `nys-sink` binary.

pub mod commands;
pub mod config;
pub mod error;
pub mod io;

pub use config::{Cli, CliConfig, Command, RankSpec};
pub use error::{CliError, ErrorReport};
pub use io::{load_point_cloud, write_point_cloud};
