//! Experiment runner and acceptance checks for the `amf` library.

pub mod checks;
pub mod config;
pub mod runner;
