use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use segmap::io;
use segmap::uncertainty::{threshold, uncertainty_map, NormMode};

const CONFIG: &str = r#"
seed = 3

[synth]
width = 40
height = 32
n_images = 7
blob_radius_min = 5.0
blob_radius_max = 9.0

[net]
depth = 1
base_channels = 2
tile_size = 16

[train]
lr_stage1 = 0.01
lr_curriculum = 0.001
batch_size = 8
epochs = 1
stride = 8

[predict]
stride = 8
mc_samples = 2

[curriculum]
stages = 2
stop_epsilon = -1.0

[experiment]
folds = 2
"#;

fn segmap(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_segmap"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let o = segmap(dir, args);
    assert!(
        o.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&o.stderr)
    );
    String::from_utf8(o.stdout).unwrap()
}

fn code(dir: &Path, args: &[&str]) -> i32 {
    segmap(dir, args).status.code().unwrap()
}

/// Writes the config and a dataset, and trains a model.
fn setup() -> (tempfile::TempDir, PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("run.toml"), CONFIG).unwrap();
    ok(dir.path(), &["synth", "--config", "run.toml", "--out", "data"]);
    ok(dir.path(), &["train", "--config", "run.toml", "--data", "data/manifest.txt", "--out", "model"]);
    let p = dir.path().to_path_buf();
    (dir, p)
}

fn starts_with(path: &Path, magic: &[u8]) -> bool {
    fs::read(path).unwrap().starts_with(magic)
}

#[test]
fn predict_emits_all_artifacts() {
    let (_t, d) = setup();
    assert!(starts_with(&d.join("model/model.bnet"), b"BNET1 "));
    assert!(starts_with(&d.join("model/train_history.txt"), b"TRAIN1 "));
    ok(&d, &["predict", "--config", "run.toml", "--model", "model/model.bnet", "--image", "data/image_000.pgm", "--out", "pred"]);
    assert!(starts_with(&d.join("pred/image_000.pmap"), b"PMAP1 40 32 3\n"));
    assert!(starts_with(&d.join("pred/image_000.umap"), b"UMAP1 40 32\n"));
    assert!(starts_with(&d.join("pred/image_000_labels.pgm"), b"P5"));
    assert!(starts_with(&d.join("pred/image_000_mask.pgm"), b"P5"));
    let before = fs::read(d.join("pred/image_000.pmap")).unwrap();
    ok(&d, &["predict", "--config", "run.toml", "--model", "model/model.bnet", "--image", "data/image_000.pgm", "--out", "pred"]);
    assert_eq!(fs::read(d.join("pred/image_000.pmap")).unwrap(), before);
}

#[test]
fn uncertainty_round_trip_matches_in_process_mask() {
    let (_t, d) = setup();
    ok(&d, &["predict", "--config", "run.toml", "--model", "model/model.bnet", "--image", "data/image_001.pgm", "--out", "pred"]);
    ok(&d, &["uncertainty", "--config", "run.toml", "--threshold", "0.3", "--pmap", "pred/image_001.pmap", "--out", "unc"]);
    let pm = io::read_pmap(&d.join("pred/image_001.pmap")).unwrap();
    let in_process = threshold(&uncertainty_map(&pm, NormMode::Analytic), 0.3).unwrap();
    let umap = io::read_umap(&d.join("unc/image_001.umap")).unwrap();
    assert_eq!(threshold(&umap, 0.3).unwrap(), in_process);
    assert_eq!(io::read_mask(&d.join("unc/image_001_mask.pgm")).unwrap(), in_process);

    ok(&d, &["plan", "--config", "run.toml", "--umap", "unc/image_001.umap", "--out", "plans"]);
    let text = fs::read_to_string(d.join("plans/image_001.plan")).unwrap();
    assert!(text.starts_with("PLAN1 image=image_001 stage=2 tiles="));
}

#[test]
fn curriculum_is_reproducible() {
    let (_t, d) = setup();
    for out in ["c1", "c2"] {
        ok(&d, &["curriculum", "--config", "run.toml", "--model", "model/model.bnet", "--data", "data/manifest.txt", "--out", out]);
    }
    let a = fs::read(d.join("c1/history.txt")).unwrap();
    assert!(a.starts_with(b"HISTORY1 stages=2"));
    assert_eq!(a, fs::read(d.join("c2/history.txt")).unwrap());
    assert_eq!(fs::read(d.join("c1/model_best.bnet")).unwrap(), fs::read(d.join("c2/model_best.bnet")).unwrap());
    let plans: Vec<_> = fs::read_dir(d.join("c1/plans")).unwrap().collect();
    assert!(!plans.is_empty());
}

#[test]
fn evaluate_and_experiment_table() {
    let (_t, d) = setup();
    let line = ok(&d, &["evaluate", "--config", "run.toml", "--model", "model/model.bnet", "--data", "data/manifest.txt", "--out", "eval"]);
    assert!(line.starts_with("NPV "));
    assert!(starts_with(&d.join("eval/report.txt"), b"REPORT1\n"));

    let out = ok(&d, &["experiment", "--config", "run.toml", "--method", "curriculum", "--data", "data/manifest.txt", "--out", "runs"]);
    let run_dir = out.lines().next().unwrap().to_string();
    let table = ok(&d, &["table", "--run", &run_dir]);
    assert!(table.starts_with("Stage  Loss"));
    assert!(out.ends_with(&table));
    assert!(table.lines().any(|l| l.starts_with("best ")));
    assert!(table.contains(" ± "));
}

#[test]
fn distinct_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("run.toml"), CONFIG).unwrap();
    assert_eq!(code(d, &["no-such-command"]), 2);
    assert_eq!(code(d, &["predict", "--model", "m.bnet"]), 2);
    assert_eq!(code(d, &["--config", "run.toml", "--threshold", "2", "plan", "--umap", "x.umap"]), 3);
    fs::write(d.join("bad.toml"), "[net]\nwidth = 1\n").unwrap();
    assert_eq!(code(d, &["--config", "bad.toml", "synth"]), 3);
    assert_eq!(code(d, &["--config", "run.toml", "uncertainty", "--pmap", "missing.pmap"]), 4);
    fs::write(d.join("fake.pmap"), b"UMAP1 1 1\n\0\0\0\0").unwrap();
    assert_eq!(code(d, &["--config", "run.toml", "uncertainty", "--pmap", "fake.pmap"]), 5);
    fs::write(d.join("short.pmap"), b"PMAP1 2 2 3\n\0\0").unwrap();
    assert_eq!(code(d, &["--config", "run.toml", "uncertainty", "--pmap", "short.pmap"]), 5);
    fs::write(d.join("model.bnet"), b"not a model").unwrap();
    fs::write(d.join("img.pgm"), b"P5\n2 2\n255\n\0\0\0\0").unwrap();
    assert_eq!(code(d, &["predict", "--model", "model.bnet", "--image", "img.pgm"]), 5);
}
