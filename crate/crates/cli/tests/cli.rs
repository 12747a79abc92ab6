//! End-to-end checks of the `softsim` binary: the generate/train/mine/eval
//! chain, the sweep table, and the exit-code contract.

use std::path::{Path, PathBuf};
use std::process::Command;

fn softsim() -> Command {
    Command::new(env!("CARGO_BIN_EXE_softsim"))
}

fn temp_dir(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("softsim-cli-{}-{}", tag, std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

const TINY_CONFIG: &str = "\
[generation]
num_identities = 6
images_per_identity = 4
num_cameras = 3
height = 8
channels = 4
raw_parts = 2

[hyper]
parts = 2
hidden_dim = 10
embed_dim = 6
baseline_epochs = 3
finetune_epochs = 1
iterations = 2
lr_switch_epoch = 2
";

fn write_tiny_config(dir: &Path) -> PathBuf {
    let path = dir.join("config.toml");
    std::fs::write(&path, TINY_CONFIG).unwrap();
    path
}

#[test]
fn generate_train_eval_mine_chain() {
    let dir = temp_dir("chain");
    let config = write_tiny_config(&dir);
    let dataset = dir.join("data.ds");

    let out = softsim()
        .args(["generate", "--config"])
        .arg(&config)
        .arg("--out")
        .arg(&dataset)
        .output()
        .unwrap();
    assert!(out.status.success(), "{:?}", out);
    let text = std::fs::read_to_string(&dataset).unwrap();
    assert!(text.starts_with("SOFTSIM-DS-1"));

    let run_dir = dir.join("run");
    let out = softsim()
        .args(["train", "--config"])
        .arg(&config)
        .arg("--dataset")
        .arg(&dataset)
        .arg("--out")
        .arg(&run_dir)
        .output()
        .unwrap();
    assert!(out.status.success(), "{:?}", out);

    // the run directory carries everything needed to reproduce the run
    assert!(run_dir.join("config.resolved.toml").exists());
    assert!(run_dir.join("checkpoint-final.ckpt").exists());
    assert!(run_dir.join("checkpoint-iter-000.ckpt").exists());
    assert!(run_dir.join("checkpoint-iter-002.ckpt").exists());
    let metrics = std::fs::read_to_string(run_dir.join("metrics.csv")).unwrap();
    assert_eq!(metrics.lines().count(), 1 + 3, "header + baseline + 2 iterations");
    assert!(metrics.lines().next().unwrap().starts_with("iteration,rank1"));
    let resolved = std::fs::read_to_string(run_dir.join("config.resolved.toml")).unwrap();
    assert!(resolved.contains("seed = 7"));

    let eval_dir = dir.join("eval");
    let out = softsim()
        .args(["eval", "--checkpoint"])
        .arg(run_dir.join("checkpoint-final.ckpt"))
        .arg("--dataset")
        .arg(&dataset)
        .arg("--out")
        .arg(&eval_dir)
        .output()
        .unwrap();
    assert!(out.status.success(), "{:?}", out);
    let eval_metrics = std::fs::read_to_string(eval_dir.join("metrics.csv")).unwrap();
    assert_eq!(eval_metrics.lines().count(), 2);
    // the eval row must reproduce the final training metrics line
    let last_train_row = metrics.lines().last().unwrap();
    let eval_row = eval_metrics.lines().nth(1).unwrap();
    assert_eq!(last_train_row, eval_row);
    assert!(eval_dir.join("query_details.csv").exists());

    let mine_csv = dir.join("mine.csv");
    let out = softsim()
        .args(["mine", "--checkpoint"])
        .arg(run_dir.join("checkpoint-final.ckpt"))
        .arg("--dataset")
        .arg(&dataset)
        .arg("--out")
        .arg(&mine_csv)
        .output()
        .unwrap();
    assert!(out.status.success(), "{:?}", out);
    let mined = std::fs::read_to_string(&mine_csv).unwrap();
    let header = mined.lines().next().unwrap();
    assert!(header.contains("d_global") && header.contains("cce"));
    // 24 anchors x k=4 neighbors
    assert_eq!(mined.lines().count(), 1 + 24 * 4);

    let _ = std::fs::remove_dir_all(&dir);
}

#[test]
fn resume_continues_to_the_configured_iteration_count() {
    let dir = temp_dir("resume");
    let config = write_tiny_config(&dir);
    let short_dir = dir.join("short");
    let out = softsim()
        .args(["train", "--config"])
        .arg(&config)
        .arg("--out")
        .arg(&short_dir)
        .output()
        .unwrap();
    assert!(out.status.success(), "{:?}", out);

    // resume from iteration 1 with the same target count
    let resumed_dir = dir.join("resumed");
    let out = softsim()
        .args(["train", "--config"])
        .arg(&config)
        .arg("--out")
        .arg(&resumed_dir)
        .arg("--resume")
        .arg(short_dir.join("checkpoint-iter-001.ckpt"))
        .output()
        .unwrap();
    assert!(out.status.success(), "{:?}", out);
    let a = std::fs::read_to_string(short_dir.join("checkpoint-final.ckpt")).unwrap();
    let b = std::fs::read_to_string(resumed_dir.join("checkpoint-final.ckpt")).unwrap();
    assert_eq!(a, b, "resumed run diverged from the uninterrupted one");

    let _ = std::fs::remove_dir_all(&dir);
}

#[test]
fn sweep_emits_one_row_per_value() {
    let dir = temp_dir("sweep");
    let config = write_tiny_config(&dir);
    let csv_path = dir.join("sweep.csv");
    let out = softsim()
        .args(["sweep", "--config"])
        .arg(&config)
        .args(["--param", "k", "--values", "0,1,2"])
        .arg("--out")
        .arg(&csv_path)
        .output()
        .unwrap();
    assert!(out.status.success(), "{:?}", out);
    let table = std::fs::read_to_string(&csv_path).unwrap();
    assert_eq!(table.lines().count(), 4);
    assert!(table.lines().next().unwrap().starts_with("k,rank1"));
    let ks: Vec<&str> = table
        .lines()
        .skip(1)
        .map(|l| l.split(',').next().unwrap())
        .collect();
    assert_eq!(ks, vec!["0", "1", "2"]);

    let _ = std::fs::remove_dir_all(&dir);
}

#[test]
fn config_errors_exit_2() {
    let dir = temp_dir("cfg-err");
    let bad = dir.join("bad.toml");
    std::fs::write(&bad, "[hyper]\nlambda = 1.5\n").unwrap();
    let out = softsim()
        .args(["train", "--config"])
        .arg(&bad)
        .arg("--out")
        .arg(dir.join("run"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    let msg = String::from_utf8_lossy(&out.stderr);
    assert!(msg.contains("lambda"), "stderr: {}", msg);

    // missing config file is also a config error
    let out = softsim()
        .args(["train", "--config"])
        .arg(dir.join("missing.toml"))
        .arg("--out")
        .arg(dir.join("run"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));

    let _ = std::fs::remove_dir_all(&dir);
}

#[test]
fn data_errors_exit_3() {
    let dir = temp_dir("data-err");
    let config = write_tiny_config(&dir);
    // dataset file with the wrong magic
    let bogus = dir.join("bogus.ds");
    std::fs::write(&bogus, "NOT-A-DATASET\n").unwrap();
    let out = softsim()
        .args(["train", "--config"])
        .arg(&config)
        .arg("--dataset")
        .arg(&bogus)
        .arg("--out")
        .arg(dir.join("run"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3));

    let _ = std::fs::remove_dir_all(&dir);
}

#[test]
fn video_flag_generates_tracklets() {
    let dir = temp_dir("video");
    let config = write_tiny_config(&dir);
    let dataset = dir.join("video.ds");
    let out = softsim()
        .args(["generate", "--config"])
        .arg(&config)
        .arg("--video")
        .arg("--out")
        .arg(&dataset)
        .output()
        .unwrap();
    assert!(out.status.success(), "{:?}", out);
    let text = std::fs::read_to_string(&dataset).unwrap();
    assert!(text.contains("video_mode=true"));

    let _ = std::fs::remove_dir_all(&dir);
}
