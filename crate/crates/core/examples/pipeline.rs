//! The whole workflow through the command-line front end, in process:
//! split → pretrain → finetune → gridsearch → evaluate on the bundled
//! synthetic corpus.
//!
//! ```bash
//! cargo run --release --example pipeline [out_dir]
//! ```
//!
//! The same steps with the binary:
//!
//! ```bash
//! usmae split      --config configs/smoke.toml --set manifest='"data/synthetic/manifest.csv"' --set output_dir='"out/split"'
//! usmae pretrain   --config configs/smoke.toml --set manifest='"out/split/manifest.csv"' --set output_dir='"out/pretrain"' --set epochs=20 --set batch_size=8
//! usmae finetune   --config configs/smoke.toml --set manifest='"out/split/manifest.csv"' --set checkpoint='"out/pretrain/pretrain.usfm"' --set output_dir='"out/finetune"'
//! usmae gridsearch --config configs/smoke.toml --set manifest='"out/split/manifest.csv"' --set checkpoint='"out/pretrain/pretrain.usfm"' --set output_dir='"out/grid"'
//! usmae evaluate   --config configs/smoke.toml --set manifest='"out/split/manifest.csv"' --set checkpoint='"out/finetune/finetune_best.usfm"' --set output_dir='"out/eval"'
//! ```

use std::path::{Path, PathBuf};

fn step(name: &str, config: &Path, sets: &[String]) -> i32 {
    let mut args = vec!["usmae".to_string(), name.to_string(), "--quiet".into(), "--config".into()];
    args.push(config.display().to_string());
    for s in sets {
        args.push("--set".into());
        args.push(s.clone());
    }
    let started = std::time::Instant::now();
    let code = usmae::cli::run(args);
    println!("{name:<10} exit {code}  {:>6.1} s", started.elapsed().as_secs_f64());
    code
}

/// `key="path"` with the path quoted as a TOML string.
fn set_path(key: &str, p: &Path) -> String {
    format!("{key}={:?}", p.display().to_string())
}

fn main() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR"));
    let config = root.join("configs/smoke.toml");
    let out = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("usmae-pipeline"));
    let manifest = out.join("split/manifest.csv");
    let pretrained = out.join("pretrain/pretrain.usfm");

    let steps: [(&str, Vec<String>); 5] = [
        (
            "split",
            vec![set_path("manifest", &root.join("data/synthetic/manifest.csv")), set_path("output_dir", &out.join("split"))],
        ),
        (
            "pretrain",
            vec![
                set_path("manifest", &manifest),
                set_path("output_dir", &out.join("pretrain")),
                "epochs=20".into(),
                "batch_size=8".into(),
            ],
        ),
        (
            "finetune",
            vec![set_path("manifest", &manifest), set_path("checkpoint", &pretrained), set_path("output_dir", &out.join("finetune"))],
        ),
        (
            "gridsearch",
            vec![set_path("manifest", &manifest), set_path("checkpoint", &pretrained), set_path("output_dir", &out.join("grid"))],
        ),
        (
            "evaluate",
            vec![
                set_path("manifest", &manifest),
                set_path("checkpoint", &out.join("finetune/finetune_best.usfm")),
                set_path("output_dir", &out.join("eval")),
            ],
        ),
    ];
    for (name, sets) in &steps {
        let code = step(name, &config, sets);
        if code != 0 {
            std::process::exit(code);
        }
    }
    println!("\ngrid results:\n{}", std::fs::read_to_string(out.join("grid/grid.csv")).unwrap_or_default());
    println!("test metrics:\n{}", std::fs::read_to_string(out.join("eval/metrics.csv")).unwrap_or_default());
}
