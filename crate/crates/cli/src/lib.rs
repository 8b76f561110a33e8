//! Config files, artifact formats and the experiment runner behind the
//! `gitd` binary.

pub mod config;
pub mod error;
pub mod formats;
pub mod gradcheck;
pub mod run;

pub use config::{parse_config, parse_config_for, Mode, ModeSpec, RunConfig};
pub use error::CliError;
pub use run::{dispatch, Manifest};
