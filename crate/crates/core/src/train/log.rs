use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Result;

/// One completed epoch. `val_metric` is macro-F1 for fine-tuning and null
/// for the attention tasks, whose validation metric is the loss itself.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_metric: Option<f64>,
    pub seconds: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    pub epochs: Vec<EpochLog>,
}

impl TrainLog {
    pub fn push(&mut self, record: EpochLog) {
        self.epochs.push(record);
    }

    /// One JSON object per line, one line per epoch.
    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<()> {
        for record in &self.epochs {
            serde_json::to_writer(&mut w, record)?;
            writeln!(w)?;
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_jsonl(&mut w)?;
        w.flush()?;
        Ok(())
    }
}
