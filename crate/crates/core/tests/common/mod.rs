//! Helpers and independent oracles shared by the integration tests.

#![allow(dead_code)]

pub mod gradcheck;
pub mod oracles;

use std::path::{Path, PathBuf};

pub fn crate_dir() -> &'static Path {
    Path::new(env!("CARGO_MANIFEST_DIR"))
}

pub fn bundled_manifest() -> PathBuf {
    crate_dir().join("data/synthetic/manifest.csv")
}

pub fn smoke_config() -> PathBuf {
    crate_dir().join("configs/smoke.toml")
}
