//! File formats, exports, timing and Monte-Carlo campaigns around
//! [`dsse_core`], plus the `dsse` command line.

pub mod campaign;
pub mod clock;
pub mod commands;
pub mod config;
pub mod error;
pub mod export;
pub mod feeder_io;
pub mod measurement_io;
pub mod msglog;
pub mod timeseries;

pub use error::{Error, Result};

/// Comment line opening every CSV this crate writes.
pub const SCHEMA_LINE: &str = "# schema_version=1";

/// Version written to and accepted from structured documents.
pub const FORMAT_VERSION: u32 = 1;
