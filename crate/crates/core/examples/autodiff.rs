//! Reverse-mode differentiation on the tape, checked against central
//! finite differences.
//!
//! ```bash
//! cargo run --example autodiff
//! ```

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use usmae::tensor::{Tape, Tensor};

/// Two-layer perceptron with cross-entropy, evaluated on a fresh tape.
fn loss(w1: &Tensor<f64>, w2: &Tensor<f64>, x: &Tensor<f64>, labels: &[usize]) -> usmae::Result<(Tape<f64>, usmae::tensor::Var)> {
    let mut tape = Tape::new();
    let x = tape.constant(x.clone());
    let w1 = tape.param("w1", w1);
    let w2 = tape.param("w2", w2);
    let h = tape.matmul(x, w1)?;
    let h = tape.gelu(h);
    let logits = tape.matmul(h, w2)?;
    let loss = tape.cross_entropy_logits(logits, labels)?;
    Ok((tape, loss))
}

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect())
        .unwrap()
        .with_grad()
}

fn main() -> usmae::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = random(&[4, 6], &mut rng);
    let w1 = random(&[6, 5], &mut rng);
    let w2 = random(&[5, 3], &mut rng);
    let labels = [0, 2, 1, 2];

    let (tape, out) = loss(&w1, &w2, &x, &labels)?;
    println!("loss = {:.6}", tape.scalar(out));
    let grads = tape.backward(out);
    let analytic = grads.get(tape.param_var("w1").unwrap()).unwrap().to_vec();

    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for i in 0..w1.numel() {
        let mut plus = w1.clone();
        plus.data_mut()[i] += h;
        let mut minus = w1.clone();
        minus.data_mut()[i] -= h;
        let (tp, lp) = loss(&plus, &w2, &x, &labels)?;
        let (tm, lm) = loss(&minus, &w2, &x, &labels)?;
        let numeric = (tp.scalar(lp) - tm.scalar(lm)) / (2.0 * h);
        worst = worst.max((numeric - analytic[i]).abs());
    }
    println!("d loss / d w1: {} entries, max |analytic - numeric| = {worst:.2e}", analytic.len());
    for (name, g) in tape.param_grads(&grads) {
        let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        println!("  ‖∇{name}‖ = {norm:.6}");
    }
    Ok(())
}
