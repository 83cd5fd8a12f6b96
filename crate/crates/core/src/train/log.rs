use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One logged number.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub epoch: usize,
    pub split: String,
    pub metric: String,
    pub value: f64,
}

/// Per-epoch training log, written as CSV `epoch,split,metric,value`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    pub rows: Vec<LogRow>,
    /// Also print each row to stderr as it is pushed.
    pub echo: bool,
}

impl TrainLog {
    pub fn push(&mut self, epoch: usize, split: &str, metric: &str, value: f64) {
        if self.echo {
            eprintln!("epoch={epoch} split={split} metric={metric} value={value}");
        }
        self.rows.push(LogRow {
            epoch,
            split: split.into(),
            metric: metric.into(),
            value,
        });
    }

    /// Values of one series in epoch order.
    pub fn series(&self, split: &str, metric: &str) -> Vec<f64> {
        self.rows
            .iter()
            .filter(|r| r.split == split && r.metric == metric)
            .map(|r| r.value)
            .collect()
    }

    pub fn extend(&mut self, other: TrainLog) {
        self.rows.extend(other.rows);
    }

    pub fn to_csv_string(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in &self.rows {
            w.serialize(r)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::validation(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut text = self.to_csv_string()?;
        if self.rows.is_empty() {
            text = "epoch,split,metric,value\n".into();
        }
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}
