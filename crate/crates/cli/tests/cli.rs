use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn rtp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rtp"))
        .args(args)
        .env_remove("RTP_SEED")
        .output()
        .expect("run rtp")
}

fn ok(args: &[&str]) -> Output {
    let out = rtp(args);
    assert!(
        out.status.success(),
        "rtp {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// A pipeline config small enough for a few seconds of training.
fn small_config(dir: &Path) -> PathBuf {
    let path = dir.join("config.json");
    let json = serde_json::json!({
        "corpus": { "n_observations": 600 },
        "augment": { "n_up": 150, "n_down": 150, "n_none": 150 },
        "architecture": { "width": 16 },
        "training": { "max_epochs": 8 },
    });
    std::fs::write(&path, json.to_string()).unwrap();
    path
}

#[test]
fn chained_commands_produce_predictions() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    let cfg = small_config(d);
    let cfg = s(&cfg);
    let log = d.join("log.csv");
    let aug = d.join("aug.csv");
    ok(&["--config", cfg, "synthesize", "--out", s(&log)]);
    ok(&["--config", cfg, "augment", "--in", s(&log), "--out", s(&aug), "--n", "200", "--change", "up", "--append"]);

    let enc1 = d.join("a1.enc.json");
    let enc2 = d.join("b2.enc.json");
    ok(&["--config", cfg, "preprocess", "--in", s(&aug), "--layout", "a1", "--out", s(&enc1), "--balance"]);
    ok(&["--config", cfg, "preprocess", "--in", s(&aug), "--layout", "b2", "--out", s(&enc2)]);

    let m1 = d.join("a1.json");
    let m2 = d.join("b2.json");
    let hist = d.join("a1.history.json");
    ok(&["--config", cfg, "train", "--data", s(&enc1), "--out", s(&m1), "--history", s(&hist)]);
    ok(&["--config", cfg, "train", "--data", s(&enc2), "--out", s(&m2), "--classifier", s(&m1)]);
    assert!(std::fs::read_to_string(&hist).unwrap().contains("best_epoch"));

    let composite = d.join("composite.json");
    ok(&["compose", "--stage1", s(&m1), "--stage2", s(&m2), "--out", s(&composite)]);

    let report = d.join("eval.json");
    let errors = d.join("errors.csv");
    ok(&["--config", cfg, "evaluate", "--model", s(&composite), "--data", s(&log), "--out", s(&report), "--errors", s(&errors)]);
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    let acc = report["classification"]["accuracy"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&acc));
    assert_eq!(report["stage2"], "b2");

    let preds = d.join("preds.csv");
    ok(&["predict", "--model", s(&composite), "--in", s(&log), "--out", s(&preds)]);
    let text = std::fs::read_to_string(&preds).unwrap();
    let mut lines = text.lines();
    assert_eq!(
        lines.next().unwrap(),
        "row,prob_0,prob_1,prob_2,prob_3,prob_4,predicted_class,power_norm,power_watts"
    );
    let n_errors = std::fs::read_to_string(&errors).unwrap().lines().count();
    assert_eq!(lines.count(), n_errors - 1);
}

#[test]
fn same_seed_same_log() {
    let dir = TempDir::new().unwrap();
    let paths: Vec<PathBuf> = ["a", "b", "c"].iter().map(|n| dir.path().join(n)).collect();
    ok(&["--seed", "7", "synthesize", "--n", "200", "--out", s(&paths[0])]);
    ok(&["--seed", "7", "synthesize", "--n", "200", "--out", s(&paths[1])]);
    ok(&["--seed", "8", "synthesize", "--n", "200", "--out", s(&paths[2])]);
    let read = |p: &PathBuf| std::fs::read(p).unwrap();
    assert_eq!(read(&paths[0]), read(&paths[1]));
    assert_ne!(read(&paths[0]), read(&paths[2]));
}

#[test]
fn pipeline_writes_report() {
    let dir = TempDir::new().unwrap();
    let cfg = small_config(dir.path());
    let out = dir.path().join("run");
    let res = ok(&["--config", s(&cfg), "pipeline", "--out", s(&out)]);
    let stdout = String::from_utf8(res.stdout).unwrap();
    assert!(stdout.contains("composite a1+b2"), "{stdout}");
    for f in ["report.json", "composite.json", "predictions.csv", "models/a1.json", "errors/b2.csv"] {
        assert!(out.join(f).is_file(), "missing {f}");
    }
}

#[test]
fn missing_input_names_the_path() {
    let dir = TempDir::new().unwrap();
    let missing = dir.path().join("nowhere.csv");
    let out = rtp(&["preprocess", "--in", s(&missing), "--layout", "a1", "--out", s(&dir.path().join("x"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("nowhere.csv"));
}

#[test]
fn bad_arguments_exit_with_usage_code() {
    let out = rtp(&["preprocess", "--in", "x.csv", "--layout", "z9", "--out", "y"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("a1"));
    assert_eq!(rtp(&["no-such-command"]).status.code(), Some(1));
}

#[test]
fn regressor_without_classifier_is_rejected() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    let log = d.join("log.csv");
    let enc = d.join("b2.json");
    ok(&["synthesize", "--n", "100", "--out", s(&log)]);
    ok(&["preprocess", "--in", s(&log), "--layout", "b2", "--out", s(&enc)]);
    let out = rtp(&["train", "--data", s(&enc), "--out", s(&d.join("m.json"))]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--classifier"));
}

#[test]
fn divergent_training_exits_with_code_3() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    let log = d.join("log.csv");
    let enc = d.join("a1.json");
    let cfg = d.join("train.json");
    std::fs::write(&cfg, r#"{"optimizer": "sgd", "learning_rate": 1e300, "max_epochs": 5}"#).unwrap();
    ok(&["synthesize", "--n", "200", "--out", s(&log)]);
    ok(&["preprocess", "--in", s(&log), "--layout", "a1", "--out", s(&enc)]);
    let out = rtp(&["--config", s(&cfg), "train", "--data", s(&enc), "--out", s(&d.join("m.json"))]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}
