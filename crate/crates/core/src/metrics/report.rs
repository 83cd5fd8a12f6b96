use std::path::Path;

use super::{confusion_matrix, pr_curve_ovr, roc_curve_ovr, summarize, Averaging, Curve, PredictionSet, Summary};
use crate::data::Example;
use crate::error::{Error, Result};
use crate::model::{patchify, VitMae};

/// Everything reported for one evaluated split.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport {
    pub classes: Vec<String>,
    pub samples: usize,
    pub averaging: Averaging,
    /// Rows are true classes, columns predicted classes.
    pub confusion: Vec<Vec<u64>>,
    /// Summary under the selected averaging.
    pub summary: Summary,
    pub weighted: Summary,
    pub macro_avg: Summary,
    /// `None` where the curve is undefined, e.g. a class absent from the split.
    pub roc: Vec<Option<Curve>>,
    pub pr: Vec<Option<Curve>>,
}

impl MetricsReport {
    pub fn new(preds: &PredictionSet, classes: &[String], averaging: Averaging) -> Result<Self> {
        if classes.len() != preds.num_classes() {
            return Err(Error::validation(format!(
                "{} class names for a {}-class prediction set",
                classes.len(),
                preds.num_classes()
            )));
        }
        let weighted = summarize(preds, Averaging::Weighted)?;
        let macro_avg = summarize(preds, Averaging::Macro)?;
        let k = preds.num_classes();
        Ok(Self {
            classes: classes.to_vec(),
            samples: preds.len(),
            averaging,
            confusion: confusion_matrix(preds)?,
            summary: match averaging {
                Averaging::Weighted => weighted,
                Averaging::Macro => macro_avg,
            },
            weighted,
            macro_avg,
            roc: (0..k).map(|c| roc_curve_ovr(preds, c).ok()).collect(),
            pr: (0..k).map(|c| pr_curve_ovr(preds, c).ok()).collect(),
        })
    }

    /// `(metric, value)` rows as written to `metrics.csv`.
    pub fn rows(&self) -> Vec<(String, String)> {
        let mut rows = vec![
            ("samples".to_string(), self.samples.to_string()),
            ("averaging".into(), format!("{:?}", self.averaging).to_lowercase()),
            ("accuracy".into(), self.summary.accuracy.to_string()),
            ("precision".into(), self.summary.precision.to_string()),
            ("recall".into(), self.summary.recall.to_string()),
            ("f1".into(), self.summary.f1.to_string()),
        ];
        for (prefix, s) in [("weighted", &self.weighted), ("macro", &self.macro_avg)] {
            rows.push((format!("{prefix}_precision"), s.precision.to_string()));
            rows.push((format!("{prefix}_recall"), s.recall.to_string()));
            rows.push((format!("{prefix}_f1"), s.f1.to_string()));
        }
        for (c, name) in self.classes.iter().enumerate() {
            let area = |curve: &Option<Curve>| curve.as_ref().map_or("nan".to_string(), |c| c.area.to_string());
            rows.push((format!("roc_auc_{name}"), area(&self.roc[c])));
            rows.push((format!("average_precision_{name}"), area(&self.pr[c])));
        }
        rows
    }

    /// Writes `metrics.csv`, `confusion.csv` and one `roc_<class>.csv` and
    /// `pr_<class>.csv` per class with a defined curve.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;

        let mut w = csv::Writer::from_path(dir.join("metrics.csv"))?;
        w.write_record(["metric", "value"])?;
        for (k, v) in self.rows() {
            w.write_record([k, v])?;
        }
        w.flush().map_err(|e| Error::io(dir.join("metrics.csv"), e))?;

        let mut w = csv::Writer::from_path(dir.join("confusion.csv"))?;
        let mut header = vec!["true\\predicted".to_string()];
        header.extend(self.classes.iter().cloned());
        w.write_record(&header)?;
        for (name, row) in self.classes.iter().zip(&self.confusion) {
            let mut rec = vec![name.clone()];
            rec.extend(row.iter().map(u64::to_string));
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io(dir.join("confusion.csv"), e))?;

        for (c, name) in self.classes.iter().enumerate() {
            for (kind, curve) in [("roc", &self.roc[c]), ("pr", &self.pr[c])] {
                if let Some(curve) = curve {
                    let path = dir.join(format!("{kind}_{}.csv", file_stem(name)));
                    let mut w = csv::Writer::from_path(&path)?;
                    w.write_record(["threshold", "x", "y"])?;
                    for p in &curve.points {
                        w.write_record([p.threshold.to_string(), p.x.to_string(), p.y.to_string()])?;
                    }
                    w.flush().map_err(|e| Error::io(&path, e))?;
                }
            }
        }
        Ok(())
    }
}

/// Class name made safe for a file name.
pub(crate) fn file_stem(name: &str) -> String {
    name.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}

/// Softmax scores for every example in one deterministic pass.
pub fn predict(model: &VitMae, examples: &[Example]) -> Result<PredictionSet> {
    let mut set = PredictionSet::new(model.config().num_classes);
    for ex in examples {
        let patches = patchify(&ex.image, model.config().patch_size)?;
        let logits: Vec<f64> = model.logits(&patches)?.iter().map(|&z| z as f64).collect();
        if !logits.iter().all(|z| z.is_finite()) {
            return Err(Error::NonFinite("classifier produced non-finite logits".into()));
        }
        set.push_logits(ex.label, &logits)?;
    }
    Ok(set)
}

/// Scores a split and builds the full report. No augmentation is applied.
pub fn evaluate(model: &VitMae, examples: &[Example], classes: &[String], averaging: Averaging) -> Result<MetricsReport> {
    if examples.is_empty() {
        return Err(Error::validation("cannot evaluate an empty split"));
    }
    MetricsReport::new(&predict(model, examples)?, classes, averaging)
}
