//! Experiment runner around `unlearn-core`: text formats for checkpoints,
//! datasets and tasks, TOML configuration, reports, seeded sweeps and the
//! `unlearn-lab` command line.

pub mod cli;
pub mod config;
pub mod error;
pub mod formats;
pub mod pipeline;
pub mod report;

pub use error::{LabError, LabResult};
