//! Batch front end for `lumen-core`: strict JSON job configs, deterministic
//! JSON reports, per-atom CSV and OBJ meshes.

pub mod config;
pub mod error;
pub mod mesh;
pub mod report;
pub mod run;

pub use error::CliError;
pub use run::{execute, run, Cli, Command};
