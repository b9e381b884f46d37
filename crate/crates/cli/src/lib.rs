//! Command-line front end: configuration, data loading and report output.

pub mod config;
pub mod data;
pub mod error;
pub mod run;
