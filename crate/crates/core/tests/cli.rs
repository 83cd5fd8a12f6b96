mod common;

use std::path::Path;
use std::process::{Command, Output};

use usmae::data::synth::{write_corpus, SynthSpec};

fn usmae(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_usmae")).args(args).output().unwrap()
}

fn set(key: &str, path: &Path) -> String {
    format!("{key}={:?}", path.display().to_string())
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

/// One epoch of pretraining on the whole bundled corpus at 32 px.
fn quick_pretrain(out: &Path) -> Output {
    let manifest = common::bundled_manifest();
    usmae(&[
        "pretrain",
        "--quiet",
        "--set",
        "seed=1",
        "--set",
        "model=\"tiny\"",
        "--set",
        "target_size=32",
        "--set",
        "epochs=1",
        "--set",
        "batch_size=16",
        "--set",
        "pretrain_split=\"all\"",
        "--set",
        &set("manifest", &manifest),
        "--set",
        &set("output_dir", out),
    ])
}

#[test]
fn config_errors_list_every_violation_and_exit_2() {
    let out = usmae(&["finetune", "--set", "epochs=-3", "--set", "colour=\"blue\""]);
    assert_eq!(out.status.code(), Some(2));
    let err = stderr(&out);
    assert!(err.starts_with("error kind=config code=2"), "{err}");
    for needle in ["colour", "seed", "manifest", "output_dir", "checkpoint", "epochs"] {
        assert!(err.contains(needle), "{needle} missing from {err}");
    }
    assert_eq!(err.lines().count(), 1);
}

#[test]
fn unknown_subcommand_is_a_usage_error() {
    assert_eq!(usmae(&["train"]).status.code(), Some(2));
    assert_eq!(usmae(&["--help"]).status.code(), Some(0));
}

#[test]
fn evaluating_an_empty_split_fails_without_partial_output() {
    let tmp = tempfile::tempdir().unwrap();
    let pre = tmp.path().join("pre");
    let out = quick_pretrain(&pre);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));

    // the bundled manifest is unassigned, so its test split is empty
    let eval = tmp.path().join("eval");
    let out = usmae(&[
        "evaluate",
        "--set",
        "seed=1",
        "--set",
        "target_size=32",
        "--set",
        &set("manifest", &common::bundled_manifest()),
        "--set",
        &set("checkpoint", &pre.join("pretrain.usfm")),
        "--set",
        &set("output_dir", &eval),
    ]);
    assert_eq!(out.status.code(), Some(3), "{}", stderr(&out));
    assert!(stderr(&out).contains("kind=validation"));
    let left: Vec<_> = std::fs::read_dir(&eval).map(|d| d.collect()).unwrap_or_default();
    assert!(left.is_empty(), "{left:?}");
}

#[test]
fn identical_runs_write_identical_bytes() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("run");
    let files = ["pretrain.usfm", "pretrain_log.csv", "pretrain.run.toml"];
    let mut runs = Vec::new();
    for _ in 0..2 {
        let out = quick_pretrain(&dir);
        assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
        runs.push(files.map(|f| std::fs::read(dir.join(f)).unwrap()));
    }
    for (file, (x, y)) in files.iter().zip(runs[0].iter().zip(&runs[1])) {
        assert!(x == y, "{file} differs between runs");
    }
}

#[test]
fn split_refuses_to_overwrite_its_input() {
    let manifest = common::bundled_manifest();
    let out = usmae(&[
        "split",
        "--set",
        "seed=1",
        "--set",
        &set("manifest", &manifest),
        "--set",
        &set("output_dir", manifest.parent().unwrap()),
    ]);
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));
}

#[test]
fn bundled_corpus_matches_its_generator() {
    let tmp = tempfile::tempdir().unwrap();
    let spec = SynthSpec {
        patients: 60,
        images_per_patient: 3,
        seed: 2024,
        ..SynthSpec::default()
    };
    let fresh = write_corpus(tmp.path(), &spec).unwrap();
    let bundled = common::bundled_manifest();
    let shipped = bundled.parent().unwrap();
    assert_eq!(
        std::fs::read(tmp.path().join("manifest.csv")).unwrap(),
        std::fs::read(&bundled).unwrap()
    );
    for r in &fresh.records {
        let same = std::fs::read(tmp.path().join(&r.path)).unwrap() == std::fs::read(shipped.join(&r.path)).unwrap();
        assert!(same, "{} differs", r.path);
    }
}
