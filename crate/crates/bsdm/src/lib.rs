//! File formats, checkpoint storage, CSV reports and the `bsdm` command line
//! built on [`bsdm_core`].

pub mod checkpoint;
pub mod cli;
mod error;
pub mod io;
pub mod report;

pub use error::{Error, Result};
