//! Classification metrics on a small hand-made prediction set: confusion
//! matrix, weighted and macro summaries, one-vs-rest ROC and PR curves.
//!
//! ```bash
//! cargo run --example metrics [out_dir]
//! ```

use std::path::PathBuf;

use usmae::metrics::{Averaging, MetricsReport, PredictionSet};

fn main() -> usmae::Result<()> {
    let classes: Vec<String> = ["cat", "dog", "owl"].iter().map(|s| s.to_string()).collect();
    let rows: [(usize, [f64; 3]); 8] = [
        (0, [0.7, 0.2, 0.1]),
        (0, [0.4, 0.5, 0.1]),
        (0, [0.8, 0.1, 0.1]),
        (1, [0.1, 0.8, 0.1]),
        (1, [0.3, 0.6, 0.1]),
        (1, [0.5, 0.3, 0.2]),
        (2, [0.2, 0.2, 0.6]),
        (2, [0.1, 0.3, 0.6]),
    ];
    let mut preds = PredictionSet::new(classes.len());
    for (label, scores) in rows {
        preds.push(label, scores.to_vec())?;
    }
    let report = MetricsReport::new(&preds, &classes, Averaging::Weighted)?;

    println!("confusion (rows true, columns predicted):");
    for (name, row) in classes.iter().zip(&report.confusion) {
        println!("  {name:<4} {row:?}");
    }
    for (name, s) in [("weighted", report.weighted), ("macro", report.macro_avg)] {
        println!(
            "{name:<9} accuracy {:.4}  precision {:.4}  recall {:.4}  f1 {:.4}",
            s.accuracy, s.precision, s.recall, s.f1
        );
    }
    for (i, name) in classes.iter().enumerate() {
        let auc = report.roc[i].as_ref().map_or(f64::NAN, |c| c.area);
        let ap = report.pr[i].as_ref().map_or(f64::NAN, |c| c.area);
        println!("{name:<4} ROC AUC {auc:.4}  average precision {ap:.4}");
    }

    if let Some(dir) = std::env::args().nth(1).map(PathBuf::from) {
        std::fs::create_dir_all(&dir).map_err(|e| usmae::Error::Io {
            path: dir.clone(),
            source: e,
        })?;
        report.write(&dir)?;
        println!("wrote report CSVs to {}", dir.display());
    }
    Ok(())
}
