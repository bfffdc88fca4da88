//! Tab-separated training loss log.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::trainer::{Phase, StepReport};

pub const LOSS_LOG_HEADER: &str = "format_version\t1\nstep\tphase\ts\tloss\n";

#[derive(Clone, Debug, PartialEq)]
pub struct LossRecord {
    pub step: u64,
    pub phase: Phase,
    pub s: f64,
    pub loss: f64,
}

impl From<&StepReport> for LossRecord {
    fn from(r: &StepReport) -> Self {
        Self { step: r.step, phase: r.phase, s: r.s, loss: r.loss }
    }
}

/// One line, newline-terminated; floats use the shortest exact representation.
pub fn format_record(r: &LossRecord) -> String {
    let mut line = String::new();
    writeln!(line, "{}\t{}\t{}\t{}", r.step, r.phase, r.s, r.loss).unwrap();
    line
}

pub fn parse_loss_log(text: &str) -> Result<Vec<LossRecord>> {
    let body = text.strip_prefix(LOSS_LOG_HEADER).ok_or_else(|| Error::Data("loss log header missing".into()))?;
    body.lines()
        .enumerate()
        .map(|(i, line)| {
            let bad = || Error::Data(format!("loss log line {}: {line:?}", i + 3));
            let f: Vec<&str> = line.split('\t').collect();
            if f.len() != 4 {
                return Err(bad());
            }
            Ok(LossRecord {
                step: f[0].parse().map_err(|_| bad())?,
                phase: f[1].parse().map_err(|_| bad())?,
                s: f[2].parse().map_err(|_| bad())?,
                loss: f[3].parse().map_err(|_| bad())?,
            })
        })
        .collect()
}
