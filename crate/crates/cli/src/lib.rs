//! Command-line driver: ingestion, synthesis, co-training and evaluation
//! as reproducible runs configured by JSON files.

pub mod commands;
pub mod config;

pub use commands::{
    cmd_eval, cmd_run, cmd_simulate, load_checkpoint, Checkpoint, RunOptions, RunReport,
};
pub use config::{AccessMode, DatasetSource, RunConfigFile};
