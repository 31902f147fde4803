//! Criterion 10: every CLI subcommand is byte-for-byte reproducible for a
//! fixed seed and config, including a rerun from the resolved config.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use crate::Outcome;

const TINY: &str = "[data]\ntrain_videos = 8\ntest_videos = 8\n[pretrain]\nepochs = 2\n[transfer]\nepochs = 2\nlr_grid = 0.01,0.16\n";

fn transrank(args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_transrank"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!(
            "`transrank {}` exited with {}: {}",
            args.join(" "),
            out.status,
            String::from_utf8_lossy(&out.stderr).trim()
        ))
    }
}

/// Relative paths of all files below `dir`, sorted.
fn files(dir: &Path) -> Vec<PathBuf> {
    let mut out: Vec<PathBuf> = walkdir::WalkDir::new(dir)
        .into_iter()
        .filter_map(|e| e.ok())
        .filter(|e| e.file_type().is_file())
        .map(|e| e.path().strip_prefix(dir).unwrap().to_path_buf())
        .collect();
    out.sort();
    out
}

/// Compares two output directories file by file; returns the number of
/// files compared.
fn same_tree(a: &Path, b: &Path) -> Result<usize, String> {
    let (fa, fb) = (files(a), files(b));
    if fa != fb {
        return Err(format!(
            "{} and {} hold different files",
            a.display(),
            b.display()
        ));
    }
    for f in &fa {
        if fs::read(a.join(f)).map_err(|e| e.to_string())?
            != fs::read(b.join(f)).map_err(|e| e.to_string())?
        {
            return Err(format!("{} differs between runs", f.display()));
        }
    }
    Ok(fa.len())
}

fn run_all(root: &Path) -> Result<usize, String> {
    let cfg = root.join("tiny.cfg");
    fs::write(&cfg, TINY).map_err(|e| e.to_string())?;
    let cfg = cfg.to_str().unwrap();
    let dir = |name: &str| root.join(name).to_str().unwrap().to_string();
    let mut compared = 0;

    for name in ["data_a", "data_b"] {
        transrank(&[
            "gen-data",
            "--config",
            cfg,
            "--seed",
            "7",
            "--out",
            &dir(name),
        ])?;
    }
    compared += same_tree(&root.join("data_a"), &root.join("data_b"))?;

    let pre = |name: &str| -> Result<(), String> {
        transrank(&[
            "pretrain",
            "--config",
            cfg,
            "--seed",
            "7",
            "--out",
            &dir(name),
        ])
    };
    pre("pre_a")?;
    pre("pre_b")?;
    compared += same_tree(&root.join("pre_a"), &root.join("pre_b"))?;

    // Rerunning from the resolved config must reproduce the run exactly.
    let resolved = root.join("pre_a/config.resolved");
    transrank(&[
        "pretrain",
        "--config",
        resolved.to_str().unwrap(),
        "--out",
        &dir("pre_c"),
    ])?;
    compared += same_tree(&root.join("pre_a"), &root.join("pre_c"))?;

    let ckpt = root.join("pre_a/checkpoint.trkc");
    let ckpt = ckpt.to_str().unwrap();
    for cmd in [
        "eval-retrieval",
        "speediness",
        "linear-eval",
        "finetune",
        "eval-temporal",
    ] {
        let (a, b) = (format!("{cmd}_a"), format!("{cmd}_b"));
        for name in [&a, &b] {
            let mut args = vec![cmd, "--config", cfg, "--seed", "7", "--ckpt", ckpt];
            if cmd == "speediness" {
                args.push("--svg");
            }
            let out = dir(name);
            args.extend(["--out", &out]);
            transrank(&args)?;
        }
        compared += same_tree(&root.join(&a), &root.join(&b))?;
    }
    Ok(compared)
}

pub fn criterion_10() -> Outcome {
    let tmp = match tempfile::tempdir() {
        Ok(t) => t,
        Err(e) => return Outcome::new(false, format!("cannot create a temporary directory: {e}")),
    };
    match run_all(tmp.path()) {
        Ok(n) => Outcome::new(
            true,
            format!("gen-data, pretrain (twice and from config.resolved) and 5 evaluation commands: {n} files identical"),
        ),
        Err(e) => Outcome::new(false, e),
    }
}
