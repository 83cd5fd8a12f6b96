//! Saving and reloading a model: the file round-trips byte for byte and the
//! reloaded model produces bit-identical logits.
//!
//! ```bash
//! cargo run --example checkpoint
//! ```

use std::collections::BTreeMap;

use usmae::data::synth::synthetic_examples;
use usmae::data::PreprocessConfig;
use usmae::model::{checkpoint, init_parameters, patchify, ModelConfig};
use usmae::train::{derive_rng, Stream};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut cfg = ModelConfig::tiny();
    cfg.image_size = 64;
    let model = init_parameters(&cfg, &mut derive_rng(1, Stream::Init, &[]))?;
    println!("{} parameters in {} tensors", model.parameter_count(), model.params().len());

    let dir = std::env::temp_dir().join("usmae-checkpoint-example");
    std::fs::create_dir_all(&dir)?;
    let path = dir.join("model.usfm");
    let meta = BTreeMap::from([("seed".to_string(), "1".to_string())]);
    checkpoint::save(&path, &model, &meta)?;

    let (back, header) = checkpoint::load(&path)?;
    println!(
        "header: decoder={} head={} params={} meta={:?}",
        header.has_decoder,
        header.has_head,
        header.params.len(),
        header.meta
    );
    let rewritten = checkpoint::to_bytes(&back, &header.meta)?;
    let original = std::fs::read(&path)?;
    println!("rewrite byte-identical: {}", rewritten == original);

    let pre = PreprocessConfig {
        target_size: 64,
        ..PreprocessConfig::default()
    };
    let image = &synthetic_examples(1, 5, &pre)?[0].image;
    let patches = patchify(image, cfg.patch_size)?;
    let (a, b) = (model.logits(&patches)?, back.logits(&patches)?);
    let same = a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits());
    println!("logits {a:?}\nbit-identical after reload: {same}");
    Ok(())
}
