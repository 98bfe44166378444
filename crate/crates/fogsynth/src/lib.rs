//! Host side of the fog traffic synthesis pipeline: file formats, run
//! configuration, artifact layout, stage drivers and the command line.

pub mod artifacts;
pub mod cli;
pub mod config;
pub mod formats;
pub mod report;
pub mod runtime;
pub mod stages;
