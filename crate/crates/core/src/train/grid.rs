use std::cmp::Ordering;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Learning rates × weight decays, searched exhaustively.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpace {
    pub learning_rates: Vec<f64>,
    pub weight_decays: Vec<f64>,
}

impl Default for GridSpace {
    fn default() -> Self {
        Self {
            learning_rates: vec![3e-4, 5e-4, 1e-3],
            weight_decays: vec![0.01, 0.001, 0.0001],
        }
    }
}

impl GridSpace {
    /// Every `(lr, wd)` pair, learning rate outermost.
    pub fn points(&self) -> Vec<(f64, f64)> {
        self.learning_rates
            .iter()
            .flat_map(|&lr| self.weight_decays.iter().map(move |&wd| (lr, wd)))
            .collect()
    }
}

/// Validation scores of one completed run.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RunScore {
    pub val_accuracy: f64,
    pub val_f1: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GridRow {
    pub lr: f64,
    pub weight_decay: f64,
    /// The run's error message if it aborted.
    pub outcome: std::result::Result<RunScore, String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GridReport {
    pub rows: Vec<GridRow>,
    /// Index into `rows` of the selected run, if any succeeded.
    pub best: Option<usize>,
}

/// Orders candidates: higher validation accuracy, then lower learning rate,
/// then higher weight decay.
fn better(a: &GridRow, sa: &RunScore, b: &GridRow, sb: &RunScore) -> bool {
    match sa.val_accuracy.total_cmp(&sb.val_accuracy) {
        Ordering::Greater => true,
        Ordering::Less => false,
        Ordering::Equal => match a.lr.total_cmp(&b.lr) {
            Ordering::Less => true,
            Ordering::Greater => false,
            Ordering::Equal => a.weight_decay > b.weight_decay,
        },
    }
}

/// Runs `run(lr, wd)` for every grid point. Failed runs are recorded and
/// excluded from selection; the search always continues.
pub fn grid_search(space: &GridSpace, mut run: impl FnMut(f64, f64) -> Result<RunScore>) -> Result<GridReport> {
    let points = space.points();
    if points.is_empty() {
        return Err(Error::validation("grid search space is empty"));
    }
    let rows: Vec<GridRow> = points
        .into_iter()
        .map(|(lr, wd)| GridRow {
            lr,
            weight_decay: wd,
            outcome: run(lr, wd).map_err(|e| e.to_string()),
        })
        .collect();
    let mut best: Option<usize> = None;
    for (i, row) in rows.iter().enumerate() {
        let Ok(score) = &row.outcome else { continue };
        let replace = match best {
            None => true,
            Some(j) => {
                let Ok(bs) = &rows[j].outcome else { unreachable!() };
                better(row, score, &rows[j], bs)
            }
        };
        if replace {
            best = Some(i);
        }
    }
    Ok(GridReport { rows, best })
}

impl GridReport {
    pub fn best_point(&self) -> Option<(f64, f64)> {
        self.best.map(|i| (self.rows[i].lr, self.rows[i].weight_decay))
    }

    /// CSV with columns `lr,weight_decay,status,val_accuracy,val_f1,error`.
    pub fn write(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["lr", "weight_decay", "status", "val_accuracy", "val_f1", "error"])?;
        for row in &self.rows {
            let (lr, wd) = (row.lr.to_string(), row.weight_decay.to_string());
            match &row.outcome {
                Ok(s) => w.write_record([lr, wd, "ok".into(), s.val_accuracy.to_string(), s.val_f1.to_string(), String::new()])?,
                Err(e) => w.write_record([lr, wd, "failed".into(), String::new(), String::new(), e.clone()])?,
            }
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}
