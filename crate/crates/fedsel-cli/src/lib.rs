//! Experiment harness around `fedsel-core`: a versioned TOML config schema,
//! a multi-seed runner writing round and summary CSVs, and time-to-target
//! reporting.

pub mod config;
pub mod report;
pub mod runner;
