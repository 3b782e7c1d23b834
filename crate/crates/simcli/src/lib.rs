//! Batch front end for the rar-core Monte Carlo laboratory.

pub mod commands;
pub mod config;
pub mod error;
pub mod table;

pub use config::{DelaySpec, Format, SimulationConfig};
pub use error::{CliError, CliResult};
pub use table::{Cell, Table};
