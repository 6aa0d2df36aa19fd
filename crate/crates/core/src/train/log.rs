use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

pub const TRAIN_LOG_HEADER: &str = "step,epoch,loss,val_loss,val_bleu,seconds";

/// One optimization step; validation columns are filled on the last step of
/// each epoch.
#[derive(Clone, Debug, PartialEq)]
pub struct LogRow {
    pub step: u64,
    pub epoch: usize,
    pub loss: f64,
    pub val_loss: Option<f64>,
    pub val_bleu: Option<f64>,
    pub seconds: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochSummary {
    pub epoch: usize,
    pub steps: usize,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
    pub val_bleu: Option<f64>,
}

/// Append-only record of a training run.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    rows: Vec<LogRow>,
    epochs: Vec<EpochSummary>,
}

impl TrainLog {
    pub fn rows(&self) -> &[LogRow] {
        &self.rows
    }

    pub fn epochs(&self) -> &[EpochSummary] {
        &self.epochs
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty() && self.epochs.is_empty()
    }

    pub fn push_step(&mut self, row: LogRow) -> Result<()> {
        if let Some(last) = self.rows.last() {
            if row.step <= last.step {
                return Err(Error::Invalid(format!("log step {} after {}", row.step, last.step)));
            }
        }
        self.rows.push(row);
        Ok(())
    }

    /// Closes an epoch: stores its summary and copies the validation
    /// numbers onto its last step row.
    pub fn close_epoch(&mut self, summary: EpochSummary) {
        if let Some(row) = self.rows.iter_mut().rev().find(|r| r.epoch == summary.epoch) {
            row.val_loss = summary.val_loss;
            row.val_bleu = summary.val_bleu;
        }
        self.epochs.push(summary);
    }

    pub fn to_csv(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| format!("{x}")).unwrap_or_default();
        let mut s = String::from(TRAIN_LOG_HEADER);
        s.push('\n');
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{}",
                r.step,
                r.epoch,
                r.loss,
                opt(r.val_loss),
                opt(r.val_bleu),
                opt(r.seconds)
            );
        }
        s
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}
