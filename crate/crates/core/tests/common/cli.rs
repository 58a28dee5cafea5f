//! Driving the `bsnmani` binary from tests.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

pub const SIM: &str = "n_nodes = 8\nq = 2\nn_subjects = 40\nn_test = 10\nseed = 5\n";

pub fn bsnmani(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bsnmani"))
        .args(args)
        .env("BSNMANI_THREADS", "2")
        .output()
        .unwrap()
}

pub fn ok(args: &[&str]) -> Output {
    let out = bsnmani(args);
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

pub fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

pub fn simulate(dir: &Path) -> PathBuf {
    let cfg = dir.join("sim.toml");
    fs::write(&cfg, SIM).unwrap();
    let data = dir.join("data");
    ok(&["simulate", "--config", s(&cfg), "--out", s(&data)]);
    data
}

pub fn fit(data: &Path, out: &Path, extra: &[&str]) {
    let (networks, clinical) = (data.join("networks.csv"), data.join("clinical.csv"));
    let mut args = vec![
        "fit",
        "--networks",
        s(&networks),
        "--clinical",
        s(&clinical),
        "--q",
        "2",
        "--iters",
        "200",
        "--seed",
        "7",
        "--out",
        s(out),
    ];
    args.extend_from_slice(extra);
    ok(&args);
}

/// Runs simulate, fit, predict and cv into `dir`.
pub fn pipeline(dir: &Path) {
    let data = simulate(dir);
    let post = dir.join("post");
    fit(&data, &post, &["--save-lambdas"]);
    ok(&[
        "predict",
        "--posterior",
        s(&post),
        "--networks",
        s(&data.join("test_networks.csv")),
        "--clinical",
        s(&data.join("test_clinical.csv")),
        "--samples",
        s(&dir.join("samples.csv")),
        "--seed",
        "3",
        "--out",
        s(&dir.join("predictions.csv")),
    ]);
    ok(&[
        "cv",
        "--networks",
        s(&data.join("networks.csv")),
        "--clinical",
        s(&data.join("clinical.csv")),
        "--q",
        "2",
        "--iters",
        "60",
        "--folds",
        "5",
        "--repeats",
        "2",
        "--seed",
        "1",
        "--out",
        s(&dir.join("cv.csv")),
    ]);
}

pub fn files(root: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    for entry in fs::read_dir(root).unwrap() {
        let p = entry.unwrap().path();
        if p.is_dir() {
            out.extend(files(&p));
        } else {
            out.push(p);
        }
    }
    out.sort();
    out
}

/// Compares two output trees byte for byte, skipping wall-clock timing files.
/// Returns the number of files compared or the first difference.
pub fn compare_trees(a: &Path, b: &Path) -> Result<usize, String> {
    let (fa, fb) = (files(a), files(b));
    let rel = |root: &Path, v: &[PathBuf]| {
        v.iter()
            .map(|p| p.strip_prefix(root).unwrap().to_path_buf())
            .collect::<Vec<_>>()
    };
    if rel(a, &fa) != rel(b, &fb) {
        return Err("the two runs wrote different file sets".into());
    }
    let mut compared = 0;
    for (x, y) in fa.iter().zip(&fb) {
        if x.file_name().is_some_and(|n| n == "timing.json") {
            continue;
        }
        if fs::read(x).unwrap() != fs::read(y).unwrap() {
            return Err(format!("{} differs", x.strip_prefix(a).unwrap().display()));
        }
        compared += 1;
    }
    Ok(compared)
}
