//! Experiment runner for the `cml` library: configuration parsing,
//! deterministic experiment orchestration, grid sweeps, result files and the
//! acceptance battery.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod config;
pub mod experiments;
pub mod output;
pub mod sweep;
pub mod verify;

use config::{parse_config, ConfigErrors, ExperimentConfig};
use output::RunRecord;

/// Parses `text`, applies an optional seed override and runs it. The record
/// echoes `text` unchanged.
pub fn run_text(text: &str, seed: Option<u64>) -> Result<(ExperimentConfig, RunRecord), ConfigErrors> {
    let mut cfg = parse_config(text)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let record = experiments::run(text, &cfg);
    Ok((cfg, record))
}
