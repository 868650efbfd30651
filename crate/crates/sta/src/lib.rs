//! File formats, checkpoints, configuration and commands around `sta-core`.

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod error;
pub mod formats;
pub mod fsutil;
pub mod sbu;

pub use error::{Error, Result};
