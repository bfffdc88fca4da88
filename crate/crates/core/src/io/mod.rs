//! File formats: images, run configuration, checkpoints, loss logs and reports.

pub mod checkpoint;
pub mod config;
pub mod image;
pub mod losslog;

pub use checkpoint::{Checkpoint, CheckpointMeta};
pub use config::{DataConfig, EvalConfig, RunConfig};
pub use losslog::{format_record, parse_loss_log, LossRecord, LOSS_LOG_HEADER};

use crate::error::{Error, Result};
use crate::metrics::EvalReport;

pub fn report_to_toml(report: &EvalReport) -> String {
    toml::to_string(report).expect("report is serializable")
}

pub fn report_from_toml(text: &str) -> Result<EvalReport> {
    toml::from_str(text).map_err(|e| Error::Data(format!("report: {e}")))
}
