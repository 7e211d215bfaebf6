use std::path::{Path, PathBuf};
use std::process::Command;

use crate::Outcome;

fn tracefa(args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_tracefa")).args(args).output().map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!("tracefa {args:?}: {}", String::from_utf8_lossy(&out.stderr)))
    }
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn pipeline(root: &Path, threads: &str) -> Result<(), String> {
    let syn = root.join("synth");
    let fit = root.join("fit");
    let pred = root.join("predict");
    tracefa(&["--threads", threads, "synth", "--seed", "17", "--obs-fraction", "0.9", "--out", s(&syn)])?;
    let (g, a) = (syn.join("grades.csv"), syn.join("activity.csv"));
    tracefa(&[
        "--threads", threads, "fit", "--seed", "17", "--grades", s(&g), "--activity", s(&a), "--config",
        s(&syn.join("fit_config.json")), "--holdout-fraction", "0.2", "--em-max-iters", "10", "--out", s(&fit),
    ])?;
    tracefa(&[
        "--threads", threads, "predict", "--grades", s(&g), "--activity", s(&a), "--params",
        s(&fit.join("params.json")), "--mask", s(&fit.join("holdout.csv")), "--out", s(&pred),
    ])
}

fn files(root: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.push(path.strip_prefix(root).unwrap().to_path_buf());
            }
        }
    }
    out.sort();
    out
}

/// File contents with wall-clock timings removed from manifests.
fn comparable(path: &Path) -> Vec<u8> {
    let bytes = std::fs::read(path).unwrap();
    if path.file_name().is_some_and(|n| n == "manifest.json") {
        let mut v: serde_json::Value = serde_json::from_slice(&bytes).unwrap();
        v.as_object_mut().unwrap().remove("timings");
        return serde_json::to_vec(&v).unwrap();
    }
    bytes
}

pub fn determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    if let Err(e) = pipeline(&a, "1").and_then(|()| pipeline(&b, "2")) {
        return Outcome::new(false, e);
    }
    let (fa, fb) = (files(&a), files(&b));
    if fa != fb {
        return Outcome::new(false, format!("runs wrote different file sets: {fa:?} vs {fb:?}"));
    }
    let differing: Vec<String> = fa
        .iter()
        .filter(|f| comparable(&a.join(f)) != comparable(&b.join(f)))
        .map(|f| f.display().to_string())
        .collect();
    Outcome::new(
        differing.is_empty(),
        if differing.is_empty() {
            format!("{} files identical across runs with 1 and 2 threads", fa.len())
        } else {
            format!("differing files: {}", differing.join(", "))
        },
    )
}
