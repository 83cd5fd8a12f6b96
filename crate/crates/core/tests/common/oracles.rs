//! Reference implementations written independently of the library.

use rand::Rng;

/// Scalar AdamW trajectory: `(θ, g_t)` → θ after each step.
///
/// Textbook order: moments, bias correction, decoupled decay of the
/// pre-step weight, then the adaptive step.
pub fn adamw_trajectory(theta0: f64, grads: &[f64], lr: f64, wd: f64, decayed: bool) -> Vec<f64> {
    let (b1, b2, eps) = (0.9f64, 0.999f64, 1e-8f64);
    let (mut theta, mut m, mut v) = (theta0, 0.0, 0.0);
    let mut out = Vec::new();
    for (t, &g) in grads.iter().enumerate() {
        let t = (t + 1) as i32;
        m = b1 * m + (1.0 - b1) * g;
        v = b2 * v + (1.0 - b2) * g * g;
        let m_hat = m / (1.0 - b1.powi(t));
        let v_hat = v / (1.0 - b2.powi(t));
        let decay = if decayed { lr * wd * theta } else { 0.0 };
        theta = theta - decay - lr * m_hat / (v_hat.sqrt() + eps);
        out.push(theta);
    }
    out
}

/// Index of the first maximum.
pub fn first_argmax(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate() {
        if s > scores[best] {
            best = i;
        }
    }
    best
}

/// One-vs-rest AUC as the Mann-Whitney statistic over all positive and
/// negative pairs, ties counting one half.
pub fn auc_rank(scores: &[f64], positive: &[bool]) -> Option<f64> {
    let pos: Vec<f64> = scores.iter().zip(positive).filter(|(_, &p)| p).map(|(&s, _)| s).collect();
    let neg: Vec<f64> = scores.iter().zip(positive).filter(|(_, &p)| !p).map(|(&s, _)| s).collect();
    if pos.is_empty() || neg.is_empty() {
        return None;
    }
    let mut wins = 0.0;
    for &p in &pos {
        for &n in &neg {
            wins += if p > n {
                1.0
            } else if p == n {
                0.5
            } else {
                0.0
            };
        }
    }
    Some(wins / (pos.len() * neg.len()) as f64)
}

/// `counts[true][predicted]` by direct enumeration of every cell.
pub fn confusion_recount(labels: &[usize], scores: &[Vec<f64>], k: usize) -> Vec<Vec<u64>> {
    (0..k)
        .map(|t| {
            (0..k)
                .map(|p| {
                    labels
                        .iter()
                        .zip(scores)
                        .filter(|(&l, s)| l == t && first_argmax(s) == p)
                        .count() as u64
                })
                .collect()
        })
        .collect()
}

/// Random probability vectors over `k` classes. Scores are drawn from a
/// coarse grid so ties occur.
pub fn random_scores<R: Rng>(rng: &mut R, n: usize, k: usize) -> (Vec<usize>, Vec<Vec<f64>>) {
    let labels = (0..n).map(|_| rng.random_range(0..k)).collect();
    let scores = (0..n)
        .map(|_| {
            let raw: Vec<f64> = (0..k).map(|_| rng.random_range(1..=8) as f64).collect();
            let total: f64 = raw.iter().sum();
            raw.iter().map(|r| r / total).collect()
        })
        .collect();
    (labels, scores)
}
