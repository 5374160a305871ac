//! Command implementations behind the `caref` binary.

pub mod config;
pub mod error;
pub mod gradcheck;
pub mod report;
pub mod settings;
pub mod sweep;
pub mod train;

pub use error::{CliError, Result};
