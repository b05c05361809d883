#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

pub fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_adepos"))
}

pub fn run(dir: &Path, args: &[&str]) -> Output {
    bin().current_dir(dir).args(args).output().expect("spawn adepos")
}

pub fn ok(dir: &Path, args: &[&str]) -> String {
    let out = run(dir, args);
    assert!(
        out.status.success(),
        "adepos {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

/// A small synthetic setup that trains in well under a second:
/// `healthy` good bearings and `degrading` failing ones, 2500 windows each
/// with onset at 70% of life, and a looser convergence tolerance.
pub fn small_setup(dir: &Path, healthy: usize, degrading: usize) -> PathBuf {
    ok(
        dir,
        &[
            "synth",
            "--out",
            "m.toml",
            "--healthy",
            &healthy.to_string(),
            "--degrading",
            &degrading.to_string(),
            "--windows",
            "2500",
            "--onset",
            "0.7",
            "--seed",
            "5",
        ],
    );
    let cfg = dir.join("run.toml");
    fs::write(
        &cfg,
        "manifest = \"m.toml\"\nout = \"out\"\nepsilon = 5e-3\nmax_train = 1600\nfit_windows = 100\n\n[sweep]\nhidden = [20]\nn_bl = [3]\nbits = [8, 16]\n",
    )
    .unwrap();
    cfg
}

/// Every file under `root`, relative path to contents.
pub fn snapshot(root: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut files = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                files.push((p.strip_prefix(root).unwrap().to_path_buf(), fs::read(&p).unwrap()));
            }
        }
    }
    files.sort();
    files
}

pub fn csv_rows(path: &Path) -> Vec<Vec<String>> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(str::to_owned).collect())
        .collect()
}
