//! Per-epoch training log shared with the fine-tuning harness.
//!
//! The trainer appends one CSV row per epoch with columns
//! `epoch,ce_loss,struct_penalty,validity_rate`. Rows are append-only and
//! epochs strictly increase.

use std::fs::{self, OpenOptions};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const HEADER: [&str; 4] = ["epoch", "ce_loss", "struct_penalty", "validity_rate"];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: u32,
    pub ce_loss: f64,
    pub struct_penalty: f64,
    pub validity_rate: f64,
}

#[derive(Debug, Error)]
pub enum EpochLogError {
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{}: {source}", path.display())]
    Csv { path: PathBuf, source: csv::Error },
    #[error("{}: header must be {}", path.display(), HEADER.join(","))]
    Header { path: PathBuf },
    #[error("row {row}: {reason}")]
    Invalid { row: usize, reason: String },
}

impl EpochLog {
    fn check(&self, row: usize) -> Result<(), EpochLogError> {
        let bad = |reason: String| Err(EpochLogError::Invalid { row, reason });
        if !(0.0..=1.0).contains(&self.validity_rate) {
            return bad(format!("validity_rate {} outside [0, 1]", self.validity_rate));
        }
        if !(0.0..=1.0).contains(&self.struct_penalty) {
            return bad(format!("struct_penalty {} outside [0, 1]", self.struct_penalty));
        }
        if !self.ce_loss.is_finite() || self.ce_loss < 0.0 {
            return bad(format!("ce_loss {} is not a finite non-negative number", self.ce_loss));
        }
        Ok(())
    }
}

fn check_series(rows: &[EpochLog]) -> Result<(), EpochLogError> {
    for (i, r) in rows.iter().enumerate() {
        r.check(i + 1)?;
        if i > 0 && r.epoch <= rows[i - 1].epoch {
            return Err(EpochLogError::Invalid {
                row: i + 1,
                reason: format!("epoch {} does not follow {}", r.epoch, rows[i - 1].epoch),
            });
        }
    }
    Ok(())
}

/// Reads and validates a whole log.
pub fn read_epoch_log(path: impl AsRef<Path>) -> Result<Vec<EpochLog>, EpochLogError> {
    let path = path.as_ref();
    let csv_err = |source| EpochLogError::Csv { path: path.to_path_buf(), source };
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path).map_err(csv_err)?;
    let header = reader.headers().map_err(csv_err)?;
    if header.iter().ne(HEADER) {
        return Err(EpochLogError::Header { path: path.to_path_buf() });
    }
    let rows = reader.deserialize().collect::<Result<Vec<EpochLog>, _>>().map_err(csv_err)?;
    check_series(&rows)?;
    Ok(rows)
}

/// Appends one validated row, writing the header when the file is new.
pub fn append_epoch(path: impl AsRef<Path>, row: EpochLog) -> Result<(), EpochLogError> {
    let path = path.as_ref();
    let existing = if path.exists() { read_epoch_log(path)? } else { Vec::new() };
    let mut all = existing;
    all.push(row);
    check_series(&all)?;
    let io_err = |source| EpochLogError::Io { path: path.to_path_buf(), source };
    let fresh = fs::metadata(path).map(|m| m.len() == 0).unwrap_or(true);
    let file = OpenOptions::new().create(true).append(true).open(path).map_err(io_err)?;
    let mut w = csv::WriterBuilder::new().has_headers(fresh).from_writer(file);
    w.serialize(row).map_err(|source| EpochLogError::Csv { path: path.to_path_buf(), source })?;
    w.flush().map_err(io_err)
}
