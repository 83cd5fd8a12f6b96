//! The learning-rate schedule and AdamW on a toy quadratic.
//!
//! ```bash
//! cargo run --example lr_schedule
//! ```
//!
//! The schedule ramps linearly over the first tenth of all steps, then
//! follows a half cosine down to the floor at the last step. AdamW applies
//! decoupled weight decay except to biases, normalization gains and the
//! token and position embeddings.

use usmae::model::Param;
use usmae::tensor::Tensor;
use usmae::train::{decay_exempt, lr_at, warmup_steps, AdamW};

fn main() -> usmae::Result<()> {
    let (total, base) = (100, 5e-4);
    println!("warm-up steps: {}", warmup_steps(total, 0.1));
    for step in [0, 5, 10, 30, 55, 80, 99] {
        println!("  step {step:>3}  lr {:.3e}", lr_at(step, total, base, 0.1, 0.0)?);
    }

    for name in ["encoder.blocks.0.attn.qkv.weight", "encoder.blocks.0.attn.qkv.bias", "encoder.norm.gain", "cls_token"] {
        println!("{name:<34} decayed: {}", !decay_exempt(name));
    }

    // minimize ½‖w − 3‖² with a decayed weight and an exempt bias
    let mut params = vec![
        Param {
            name: "fc.weight".into(),
            value: Tensor::new(vec![2], vec![0.0, 1.0])?.with_grad(),
        },
        Param {
            name: "fc.bias".into(),
            value: Tensor::new(vec![1], vec![0.0])?.with_grad(),
        },
    ];
    let mut opt = AdamW::new(params.iter(), 0.1);
    let steps = 300;
    for step in 0..steps {
        for p in params.iter_mut() {
            let grad: Vec<f32> = p.value.data().iter().map(|w| w - 3.0).collect();
            p.value.zero_grad();
            p.value.accumulate_grad(&grad, 1.0);
        }
        opt.step(params.iter_mut(), lr_at(step, steps, 0.1, 0.1, 0.0)?)?;
    }
    for p in &params {
        println!("{:<10} {:?}", p.name, p.value.data());
    }
    println!("the decayed weight settles below 3; the exempt bias does not");
    Ok(())
}
