use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One line of the metrics file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LogEntry {
    Start {
        stage: String,
        seed: u64,
        config_hash: String,
        data_hash: String,
        trainable_params: usize,
        steps_per_epoch: u64,
    },
    Step {
        epoch: usize,
        step: u64,
        loss: f64,
        grad_norm: f64,
    },
    /// Held-out anatomy monitoring during pre-training.
    Monitor {
        epoch: usize,
        step: u64,
        miou: f64,
        acc: f64,
        n: usize,
    },
    /// End-of-epoch validation during fine-tuning.
    Validation {
        epoch: usize,
        step: u64,
        train_loss: f64,
        miou: f64,
        acc: f64,
        n: usize,
    },
    Checkpoint {
        epoch: usize,
        step: u64,
        path: String,
    },
    Finish {
        steps: u64,
        best_epoch: Option<usize>,
        wall_clock_s: f64,
    },
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub entries: Vec<LogEntry>,
}

impl TrainLog {
    pub fn push(&mut self, entry: LogEntry) {
        tracing::debug!(?entry, "train");
        self.entries.push(entry);
    }

    pub fn step_losses(&self) -> Vec<f64> {
        self.entries
            .iter()
            .filter_map(|e| match e {
                LogEntry::Step { loss, .. } => Some(*loss),
                _ => None,
            })
            .collect()
    }

    /// Validation mIoU per epoch, in epoch order.
    pub fn validation_history(&self) -> Vec<f64> {
        self.entries
            .iter()
            .filter_map(|e| match e {
                LogEntry::Validation { miou, .. } => Some(*miou),
                _ => None,
            })
            .collect()
    }

    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        for e in &self.entries {
            serde_json::to_writer(&mut out, e)?;
            out.write_all(b"\n")?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn read_jsonl(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut log = Self::default();
        for (i, line) in text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
        {
            log.entries
                .push(serde_json::from_str(line).map_err(|e| Error::Parse {
                    line: i + 1,
                    field: "kind".into(),
                    message: e.to_string(),
                })?);
        }
        Ok(log)
    }
}

/// 1-based index of the epoch with the highest validation mIoU; ties go to
/// the earlier epoch.
pub fn select_best_epoch(history: &[f64]) -> Result<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, &m) in history.iter().enumerate() {
        if m.is_nan() {
            return Err(Error::InvalidInput(format!(
                "validation mIoU at epoch {} is NaN",
                i + 1
            )));
        }
        if best.is_none_or(|(_, b)| m > b) {
            best = Some((i, m));
        }
    }
    best.map(|(i, _)| i + 1)
        .ok_or_else(|| Error::EmptyData("no validation entries".into()))
}
