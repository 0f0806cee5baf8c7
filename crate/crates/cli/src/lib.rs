//! Dataset generation, training, sampling, evaluation and plotting for
//! parameter interpolation flows, behind the `pif` binary.

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod error;
pub mod io;
pub mod svg;

pub use error::{CliError, Result};
