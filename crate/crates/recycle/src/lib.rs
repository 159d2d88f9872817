//! File formats, command line and experiment runner around `recycle-core`.

pub mod ckpt;
pub mod cli;
pub mod config;
pub mod error;
pub mod experiment;
pub mod io;
pub mod report;
pub mod synth_io;

pub use error::{Error, Result};
