#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use driftbench::data::{Label, Sample, Source};

pub fn manifest_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
}

pub fn fixture_csv() -> PathBuf {
    manifest_dir().join("fixtures/mini50.csv")
}

pub fn fixture_schema() -> PathBuf {
    manifest_dir().join("fixtures/mini50.schema.json")
}

pub fn config(name: &str) -> PathBuf {
    manifest_dir().join("configs").join(name)
}

pub fn cli(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_driftbench"))
        .args(args)
        .env_remove("DRIFTBENCH_OUT")
        .output()
        .expect("spawn driftbench")
}

pub fn cli_ok(args: &[&str]) -> Output {
    let out = cli(args);
    assert!(
        out.status.success(),
        "driftbench {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

pub fn path_str(p: &Path) -> &str {
    p.to_str().expect("utf-8 path")
}

/// Every regular file below `dir`, relative path and contents, sorted.
pub fn tree_bytes(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).expect("read dir") {
            let p = e.expect("entry").path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let bytes = std::fs::read(&p).expect("read file");
                out.push((p.strip_prefix(dir).unwrap().to_path_buf(), bytes));
            }
        }
    }
    out.sort();
    out
}

pub fn sample(id: &str, year: i32, label: Label, features: Vec<f64>) -> Sample {
    Sample {
        id: id.into(),
        year,
        label,
        source: Source::Emulator,
        features,
    }
}
