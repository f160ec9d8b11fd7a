//! Experiment orchestration: configuration, the simulation loop with its four
//! arms, CSV metrics and the command-line interface.

pub mod cli;
pub mod config;
pub mod csv;
pub mod episode;
pub mod selftest;

pub use cli::cli_main;
pub use config::{Arm, ExperimentConfig};
pub use csv::{emit_csv, parse_csv};
pub use episode::{run_episode, MetricsRow, RunResult};
