//! Command-line pipeline and exploration service on top of `ldm3d-core`.

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod dataset;
pub mod error;
pub mod server;

pub use error::{CliError, Result};
