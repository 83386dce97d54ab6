#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use mlpipe::pipeline::PipelineConfig;

pub fn root() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
}

pub fn fixture(name: &str) -> PathBuf {
    root().join("fixtures").join(name)
}

pub fn config_path(name: &str) -> PathBuf {
    root().join("configs").join(format!("{name}.toml"))
}

/// Loads a shipped config and points its output at `out`.
pub fn config(name: &str, out: &Path) -> PipelineConfig {
    let mut cfg = PipelineConfig::load(&config_path(name)).unwrap();
    cfg.paths.output_dir = out.to_path_buf();
    cfg
}

/// Every file in `dir`, by name.
pub fn files(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (
                e.file_name().to_string_lossy().into_owned(),
                std::fs::read(e.path()).unwrap(),
            )
        })
        .collect()
}
