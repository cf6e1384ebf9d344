use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

const CONFIG: &str = r#"{
  "data": {"kind": "synth", "n_students": 16, "n_skills": 3, "n_quizzes": 6, "max_len": 12, "seed": 1},
  "embedding_dim": 3,
  "rnn_layers": 1,
  "caps": [6, "full"],
  "ratios": [0.5, 1.0],
  "train": {"learning_rate": 0.01, "max_epochs": 2}
}"#;

fn nskt(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nskt")).args(args).output().unwrap()
}

fn ok(args: &[&str]) {
    let out = nskt(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
}

fn error_kind(out: &Output) -> String {
    assert!(!out.status.success());
    let v: Value = serde_json::from_slice(&out.stderr).unwrap();
    assert!(v["message"].is_string());
    v["error"].as_str().unwrap().to_string()
}

fn setup(dir: &Path) -> String {
    let cfg = dir.join("cfg.json");
    fs::write(&cfg, CONFIG).unwrap();
    cfg.to_str().unwrap().to_string()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn train_eval_explain_graph() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = setup(dir.path());
    let out = dir.path().join("train");
    ok(&["train", "--config", &cfg, "--model", "responsible", "--cap", "full", "--ratio", "1.0", "--out", s(&out)]);
    let ckpt = out.join("checkpoint.json");
    let metrics: Value = serde_json::from_str(&fs::read_to_string(out.join("metrics.json")).unwrap()).unwrap();
    assert_eq!(metrics["seq_cap"], 12);
    assert_eq!(metrics["cap_label"], "full");
    assert_eq!(metrics["seed"], 7);
    let hash = metrics["config_hash"].as_str().unwrap().to_string();
    assert!(fs::read_to_string(out.join("history.csv")).unwrap().contains(&hash));

    let ev = dir.path().join("eval");
    ok(&["eval", "--checkpoint", s(&ckpt), "--out", s(&ev)]);
    let eval: Value = serde_json::from_str(&fs::read_to_string(ev.join("eval.json")).unwrap()).unwrap();
    assert_eq!(eval["metrics"]["auc"], metrics["auc"]);
    assert_eq!(eval["config_hash"].as_str(), Some(hash.as_str()));

    let ex = dir.path().join("explain");
    ok(&["explain", "--checkpoint", s(&ckpt), "--student", "3", "--step", "2", "--out", s(&ex)]);
    for f in [
        "attribution.json",
        "graph.dot",
        "skill_importance.csv",
        "quiz_importance.csv",
        "rule_importance.csv",
        "skill_time_heatmap.csv",
    ] {
        assert!(fs::read_to_string(ex.join(f)).unwrap().contains(&hash), "{f}");
    }
    let attr: Value = serde_json::from_str(&fs::read_to_string(ex.join("attribution.json")).unwrap()).unwrap();
    assert_eq!(attr["t_star"], 2);
    assert_eq!(attr["contributions"].as_array().unwrap().len(), 2);

    let g = dir.path().join("graph");
    ok(&["graph", "--checkpoint", s(&ckpt), "--student", "3", "--format", "json", "--out", s(&g)]);
    let graph: Value = serde_json::from_str(&fs::read_to_string(g.join("graph.json")).unwrap()).unwrap();
    assert!(!graph["graph"]["nodes"].as_array().unwrap().is_empty());

    let err = nskt(&["explain", "--checkpoint", s(&ckpt), "--student", "nobody", "--out", s(&ex)]);
    assert_eq!(error_kind(&err), "unknown_student");
    let err = nskt(&["explain", "--checkpoint", s(&ckpt), "--student", "3", "--step", "0", "--out", s(&ex)]);
    assert_eq!(error_kind(&err), "invalid_step");
}

#[test]
fn grid_rows_and_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = setup(dir.path());
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    ok(&["grid", "--config", &cfg, "--out", s(&a)]);
    ok(&["grid", "--config", &cfg, "--out", s(&b)]);
    let csv = fs::read(a.join("grid.csv")).unwrap();
    assert_eq!(csv, fs::read(b.join("grid.csv")).unwrap());
    assert_eq!(fs::read(a.join("grid.jsonl")).unwrap(), fs::read(b.join("grid.jsonl")).unwrap());
    // 3 models x 2 caps x 2 ratios, plus comment and header.
    assert_eq!(String::from_utf8(csv).unwrap().lines().count(), 14);

    ok(&["grid", "--config", &cfg, "--model", "classic", "--cap", "6", "--ratio", "1.0", "--out", s(&a)]);
    assert_eq!(fs::read_to_string(a.join("grid.jsonl")).unwrap().lines().count(), 1);
}

#[test]
fn preprocess_reports_counts_and_schema_errors() {
    let dir = tempfile::tempdir().unwrap();
    let raw = dir.path().join("raw.csv");
    let mut text = String::from("student_id,quiz_id,skill_id,score,order_key\n");
    for st in ["a", "b", "c", "d", "e"] {
        for k in 0..4 {
            text.push_str(&format!("{st},q{k},s{},{},{k}\n", k % 2, 20 * k + 10));
        }
    }
    text.push_str("e,q9,,50,9\n");
    fs::write(&raw, &text).unwrap();
    let out = dir.path().join("pre");
    ok(&["preprocess", "--input", s(&raw), "--out", s(&out)]);
    let stats: Value = serde_json::from_str(&fs::read_to_string(out.join("stats.json")).unwrap()).unwrap();
    assert_eq!(stats["stats"]["records"], 20);
    assert_eq!(stats["stats"]["students"], 5);
    // Scores 10, 30, 50, 70 against threshold 37.
    assert_eq!(stats["stats"]["correct"], 10);
    assert_eq!(stats["report"]["dropped_missing"].as_array().unwrap().len(), 1);
    for f in ["train.csv", "val.csv", "test.csv", "dataset.json"] {
        assert!(out.join(f).exists(), "{f}");
    }

    fs::write(&raw, "student_id,quiz_id,skill_id,score,order_key\na,q,s,high,1\n").unwrap();
    let err = nskt(&["preprocess", "--input", s(&raw), "--out", s(&out)]);
    assert_eq!(error_kind(&err), "schema");

    let ds = out.join("dataset.json");
    let cfg = dir.path().join("cfg.json");
    fs::write(
        &cfg,
        format!(r#"{{"data": {{"kind": "dataset", "path": "{}"}}, "embedding_dim": 2, "rnn_layers": 1}}"#, s(&ds)),
    )
    .unwrap();
    ok(&["graph", "--config", s(&cfg), "--model", "responsible", "--cap", "full", "--student", "c", "--out", s(&out)]);
    assert!(fs::read_to_string(out.join("graph.dot")).unwrap().contains("digraph"));
}

#[test]
fn synth_is_reproducible_and_seeded() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = setup(dir.path());
    let (a, b, c) = (dir.path().join("a"), dir.path().join("b"), dir.path().join("c"));
    ok(&["synth", "--config", &cfg, "--out", s(&a)]);
    ok(&["synth", "--config", &cfg, "--out", s(&b)]);
    ok(&["synth", "--config", &cfg, "--seed", "2", "--out", s(&c)]);
    let read = |d: &Path| fs::read(d.join("records.csv")).unwrap();
    assert_eq!(read(&a), read(&b));
    assert_ne!(read(&a), read(&c));
}

#[test]
fn usage_and_config_errors_are_json() {
    assert_eq!(error_kind(&nskt(&["grid", "--bogus"])), "usage");
    assert_eq!(error_kind(&nskt(&["train", "--ratio", "1.5", "--model", "classic", "--cap", "5"])), "config");
    assert_eq!(error_kind(&nskt(&["train", "--config", "/nonexistent.json"])), "io");
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    fs::write(&cfg, r#"{"unknown_field": 1}"#).unwrap();
    assert_eq!(error_kind(&nskt(&["grid", "--config", s(&cfg)])), "json");
}
