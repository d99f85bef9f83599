//! File formats, configuration, the toy benchmark and the command-line tool
//! built on `momadiff-core`.

pub mod ablation;
pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod error;
pub mod formats;
pub mod motion_file;
pub mod plot;
pub mod run_manifest;
pub mod stats;
pub mod toy;
