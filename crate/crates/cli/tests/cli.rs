use std::path::Path;
use std::process::{Command, Output};

const SYNTH: &str = "blobs:K=3,n=40,sigma=0.2";

fn edl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_edl")).args(args).output().unwrap()
}

fn code(args: &[&str]) -> Option<i32> {
    edl(args).status.code()
}

fn train(out: &Path, extra: &[&str]) {
    let out = out.to_str().unwrap();
    let mut args = vec!["train-edl", "--synth", SYNTH, "--backbone", "mlp:8", "--epochs", "3", "--seed", "1", "--out", out];
    args.extend(extra);
    let o = edl(&args);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn training_log_has_the_documented_columns() {
    let dir = tempfile::tempdir().unwrap();
    train(dir.path(), &["--risk-matrix", "mnist"]);
    let log = std::fs::read_to_string(dir.path().join("train_log.csv")).unwrap();
    let mut lines = log.lines();
    assert_eq!(lines.next(), Some("epoch,loss,lambda,acc,cost"));
    assert_eq!(lines.count(), 3);
}

#[test]
fn missing_seed_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    assert_eq!(code(&["train-edl", "--synth", SYNTH, "--out", out]), Some(2));
    assert_eq!(code(&["pretrain", "--synth", SYNTH, "--data-seed", "1", "--out", out]), Some(2));
}

#[test]
fn unknown_flags_and_values_are_usage_errors() {
    assert_eq!(code(&["train-edl", "--bogus"]), Some(2));
    assert_eq!(code(&["train-edl", "--synth", SYNTH, "--seed", "1", "--act", "tanh", "--out", "x"]), Some(2));
}

#[test]
fn head_modes_need_a_base_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    for mode in ["edl-p", "edl-pg"] {
        let args = ["train-risk", "--mode", mode, "--synth", SYNTH, "--risk-matrix", "mnist", "--seed", "1", "--out", out];
        assert_eq!(code(&args), Some(2));
    }
}

#[test]
fn bandit_head_trains_from_a_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    train(&dir.path().join("base"), &[]);
    let base = dir.path().join("base/checkpoint.bin");
    let out = dir.path().join("pg");
    let o = edl(&[
        "train-risk", "--mode", "edl-pg", "--checkpoint", base.to_str().unwrap(), "--synth", SYNTH, "--risk-matrix",
        "mnist", "--epochs", "4", "--seed", "1", "--out", out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let log = std::fs::read_to_string(out.join("train_log.csv")).unwrap();
    assert!(log.lines().skip(1).all(|l| !l.ends_with(',')), "cost column filled:\n{log}");
}

#[test]
fn fusing_a_model_with_itself_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    train(dir.path(), &[]);
    let ckpt = dir.path().join("checkpoint.bin");
    let c = ckpt.to_str().unwrap();
    assert_eq!(code(&["fuse", "--checkpoint", c, "--checkpoint", c, "--synth", SYNTH, "--seed", "1"]), Some(2));
}

#[test]
fn eval_and_sweep_emit_machine_readable_output() {
    let dir = tempfile::tempdir().unwrap();
    train(dir.path(), &[]);
    let ckpt = dir.path().join("checkpoint.bin");
    let c = ckpt.to_str().unwrap();
    let o = edl(&["eval", "--checkpoint", c, "--synth", SYNTH, "--seed", "1", "--ood", "far", "--risk-matrix", "mnist"]);
    assert!(o.status.success());
    let report: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(report["samples"], 120);
    assert!(report["avg_cost"].is_number());
    assert!(report["entropy_auc"]["ood"].is_number());

    // Blob samples are not images.
    assert_eq!(code(&["rotate-sweep", "--checkpoint", c, "--synth", SYNTH, "--seed", "1"]), Some(2));
}

#[test]
fn missing_and_malformed_inputs_are_data_errors() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.bin");
    let m = missing.to_str().unwrap();
    assert_eq!(code(&["eval", "--checkpoint", m, "--synth", SYNTH, "--seed", "1"]), Some(3));
    let junk = dir.path().join("junk.bin");
    std::fs::write(&junk, b"EDLCKPT\0garbage").unwrap();
    assert_eq!(code(&["eval", "--checkpoint", junk.to_str().unwrap(), "--synth", SYNTH, "--seed", "1"]), Some(3));
}

#[test]
fn gradcheck_fault_is_a_numerical_failure() {
    assert_eq!(code(&["gradcheck", "--instances", "2"]), Some(0));
    assert_eq!(code(&["gradcheck", "--instances", "2", "--fault", "digamma"]), Some(4));
    assert_eq!(code(&["gradcheck", "--instances", "2", "--fault", "nonexistent"]), Some(2));
}

#[test]
fn config_file_supplies_flags() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.json");
    let out = dir.path().join("out");
    std::fs::write(
        &cfg,
        format!(r#"{{"synth": "{SYNTH}", "backbone": "mlp:8", "epochs": 2, "seed": 5, "out": {:?}}}"#, out),
    )
    .unwrap();
    assert_eq!(code(&["train-edl", "--config", cfg.to_str().unwrap()]), Some(0));
    assert!(out.join("checkpoint.bin").is_file());
}
