use super::PredictionSet;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CurvePoint {
    pub threshold: f64,
    pub x: f64,
    pub y: f64,
}

/// Curve points plus the area under them. ROC points are `(FPR, TPR)`,
/// precision-recall points are `(recall, precision)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Curve {
    pub points: Vec<CurvePoint>,
    pub area: f64,
}

/// Cumulative `(threshold, tp, fp)` after each distinct score, descending.
fn sweep(preds: &PredictionSet, class: usize) -> Result<(Vec<(f64, usize, usize)>, usize, usize)> {
    if class >= preds.num_classes() {
        return Err(Error::validation(format!("class {class} out of range")));
    }
    let mut scored: Vec<(f64, bool)> = preds
        .samples()
        .iter()
        .map(|s| (s.scores[class], s.label == class))
        .collect();
    scored.sort_by(|a, b| b.0.total_cmp(&a.0));
    let positives = scored.iter().filter(|s| s.1).count();
    let negatives = scored.len() - positives;

    let mut steps = Vec::new();
    let (mut tp, mut fp) = (0, 0);
    for (i, &(score, positive)) in scored.iter().enumerate() {
        if positive {
            tp += 1;
        } else {
            fp += 1;
        }
        if scored.get(i + 1).is_none_or(|next| next.0 != score) {
            steps.push((score, tp, fp));
        }
    }
    Ok((steps, positives, negatives))
}

/// One-vs-rest ROC for `class` with trapezoidal AUC. The first point is the
/// `+∞` threshold at the origin.
pub fn roc_curve_ovr(preds: &PredictionSet, class: usize) -> Result<Curve> {
    let (steps, pos, neg) = sweep(preds, class)?;
    if pos == 0 || neg == 0 {
        return Err(Error::validation(format!(
            "undefined ROC: class {class} has {pos} positives and {neg} negatives"
        )));
    }
    let mut points = vec![CurvePoint {
        threshold: f64::INFINITY,
        x: 0.0,
        y: 0.0,
    }];
    let mut area = 0.0;
    for (threshold, tp, fp) in steps {
        let prev = *points.last().unwrap();
        let p = CurvePoint {
            threshold,
            x: fp as f64 / neg as f64,
            y: tp as f64 / pos as f64,
        };
        area += (p.x - prev.x) * (p.y + prev.y) / 2.0;
        points.push(p);
    }
    Ok(Curve { points, area })
}

/// One-vs-rest precision-recall curve for `class` with step-wise average
/// precision `Σ (R_k − R_{k−1}) · P_k`.
pub fn pr_curve_ovr(preds: &PredictionSet, class: usize) -> Result<Curve> {
    let (steps, pos, _) = sweep(preds, class)?;
    if pos == 0 {
        return Err(Error::validation(format!("undefined precision-recall: class {class} has no positives")));
    }
    let mut points = Vec::with_capacity(steps.len());
    let (mut area, mut prev_recall) = (0.0, 0.0);
    for (threshold, tp, fp) in steps {
        let recall = tp as f64 / pos as f64;
        let precision = tp as f64 / (tp + fp) as f64;
        area += (recall - prev_recall) * precision;
        prev_recall = recall;
        points.push(CurvePoint {
            threshold,
            x: recall,
            y: precision,
        });
    }
    Ok(Curve { points, area })
}
