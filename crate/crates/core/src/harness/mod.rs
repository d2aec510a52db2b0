// SPDX-License-Identifier: Apache-2.0

//! Reproducible experiment runner behind the `spguard` binary.
//!
//! Every artifact is a pure function of the effective configuration and the
//! tool version, apart from the manifest timestamp (pin it with
//! `SOURCE_DATE_EPOCH`). Results are assembled in scenario, method, seed
//! order whatever the thread count.

pub mod config;
pub mod manifest;
pub mod masks;
pub mod plot;
pub mod run;
pub mod sweep;

use std::path::Path;

pub use config::{ExperimentConfig, ScenarioSpec, SeedsSpec, WorldSource, CALIBRATION_STREAM, EVAL_STREAM};
pub use manifest::{read_manifest, sha256_hex, verify_manifest, RunManifest, TOOL_VERSION};
pub use masks::{mask_dump, mask_dump_from_config, mask_locality};
pub use plot::{emit_tradeoff_plot, tradeoff_points, TradeoffPoint};
pub use run::{
    build_reports, calibrate, evaluate, metrics_csv, read_metrics_csv, resolve_detector, run, Detector, MethodReport,
    MetricsRow, RunOutcome, RunReport,
};
pub use sweep::{default_lambda_grid, sweep_csv, sweep_lambda, sweep_trends, SweepRow, DEFAULT_SCHEDULES};

use crate::error::{Error, Result};

/// Writes `bytes` to `path`, creating parent directories.
pub fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}
