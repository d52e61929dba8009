#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

pub fn attnrank<I, S>(args: I) -> Output
where
    I: IntoIterator<Item = S>,
    S: AsRef<std::ffi::OsStr>,
{
    Command::new(env!("CARGO_BIN_EXE_attnrank"))
        .args(args)
        .env_remove("ATTNRANK_OUT_DIR")
        .output()
        .expect("spawn attnrank")
}

/// Runs the binary and panics with its stderr unless it exits 0.
pub fn ok<I, S>(args: I) -> Output
where
    I: IntoIterator<Item = S>,
    S: AsRef<std::ffi::OsStr>,
{
    let out = attnrank(args);
    assert!(
        out.status.success(),
        "exit {:?}\nstdout:\n{}\nstderr:\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

pub fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// A toy corpus plus embeddings, built through the CLI.
pub struct Workspace {
    pub dir: tempfile::TempDir,
}

impl Workspace {
    pub fn toy(seed: u64, train: usize, test: usize) -> Self {
        let dir = tempfile::tempdir().unwrap();
        let d = dir.path();
        let seed = seed.to_string();
        ok(["synth", "--kind", "toy", "--train", &train.to_string(), "--dev", "0", "--test", &test.to_string(), "--seed", &seed, "--dir", p(d)]);
        ok([
            "train-embeddings", "--corpus", p(&d.join("train.tsv")), "--profile", "toy", "--min-count", "1",
            "--seed", &seed, "--out", p(&d.join("emb.bin")),
        ]);
        Self { dir }
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    /// Trains into `run_dir` with toy-profile defaults plus `extra` flags.
    pub fn train(&self, run_dir: &str, extra: &[&str]) -> Output {
        let mut args: Vec<String> = [
            "train", "--train", p(&self.path("train.tsv")), "--embeddings", p(&self.path("emb.bin")), "--profile", "toy",
            "--run-dir", p(&self.path(run_dir)),
        ]
        .iter()
        .map(|s| s.to_string())
        .collect();
        args.extend(extra.iter().map(|s| s.to_string()));
        ok(args)
    }
}
