//! File formats, parallel drivers and the command-line interface for
//! [`ctrs_core`].

pub mod cli;
pub mod error;
pub mod formats;
pub mod runner;
pub mod training;

pub use error::{Error, Result};
