//! File formats, mesh pipeline, simulation study and CLI support for the
//! low-rank SPDE state-space model.

pub mod cli;
pub mod config;
pub mod error;
pub mod io;
pub mod pipeline;
pub mod scenario;
pub mod study;

pub use error::{CliError, Result};
