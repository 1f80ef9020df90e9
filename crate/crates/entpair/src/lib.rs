//! Disk formats and the `entpair` command line on top of `entpair-core`.
//!
//! * [`fptn`]: the FPTN binary tensor format used for feature maps.
//! * [`manifest`]: manifest, pair and decision CSV files.
//! * [`bundle`]: model bundle files (versioned JSON header plus FPTN blobs).
//! * [`report`]: CSV and SVG outputs.
//! * [`cli`]: argument parsing and subcommand dispatch.

pub mod bundle;
pub mod cli;
pub mod error;
pub mod fptn;
pub mod manifest;
pub mod report;

pub use error::{Error, Result};
