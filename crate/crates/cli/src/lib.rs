//! Experiment runner: `generate`, `train`, `analyze` and `predict`.

pub mod config;
pub mod error;
pub mod output;
pub mod train;
pub mod analyze;
pub mod generate;
pub mod predict;
