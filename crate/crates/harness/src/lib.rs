//! Experiment harness: dataset generation, training runs, reward sweeps,
//! evaluation and trajectory rendering, each leaving a manifest beside its
//! outputs.

pub mod commands;
pub mod config;
pub mod manifest;
pub mod plot;
pub mod stats;
