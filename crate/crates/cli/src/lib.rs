//! Experiment tooling around the estimation library: dataset file formats,
//! simulation presets, and the Monte Carlo power-study harness.

pub mod harness;
pub mod io;
