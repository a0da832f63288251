//! Command-line front end: run configuration, task execution and matrix files.

pub mod config;
pub mod matrix;
pub mod task;
