//! Files, configuration, reports, the bridge server and the command line
//! around `modalroute-core`.

pub mod bridge;
pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod error;
pub mod io;
pub mod report;
pub mod wire;

pub use error::{Error, Result};
