//! Command-line driver: config parsing, the run/audit/eig pipelines and
//! their output files.

pub mod artifacts;
pub mod config;
pub mod error;
pub mod run;
