use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

use serde_json::{json, Value};
use tempfile::TempDir;

const CORE_DATA: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/../core/data");
const CORE_TEST_DATA: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/../core/tests/data");

fn memrex(args: &[&str]) -> Output {
    memrex_in(args, None)
}

fn memrex_in(args: &[&str], output_root: Option<&Path>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_memrex"));
    cmd.args(args).env_remove("MEMREX_OUTPUT_ROOT");
    if let Some(root) = output_root {
        cmd.env("MEMREX_OUTPUT_ROOT", root);
    }
    cmd.output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Bundled tiny config with the corpus path and output dir filled in.
fn write_config(dir: &Path, overrides: Value) -> PathBuf {
    let mut cfg: serde_json::Map<String, Value> =
        serde_json::from_str(&std::fs::read_to_string(format!("{CORE_DATA}/tiny_config.json")).unwrap()).unwrap();
    cfg.insert("data.train".into(), json!(format!("{CORE_DATA}/tiny_corpus.json")));
    cfg.insert("output.dir".into(), json!(s(&dir.join("run"))));
    cfg.insert("train.epochs".into(), json!(60));
    for (k, v) in overrides.as_object().unwrap() {
        cfg.insert(k.clone(), v.clone());
    }
    let path = dir.join("config.json");
    std::fs::write(&path, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
    path
}

/// One trained run shared by the read-only tests.
fn trained() -> &'static (TempDir, PathBuf) {
    static RUN: OnceLock<(TempDir, PathBuf)> = OnceLock::new();
    RUN.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let config = write_config(dir.path(), json!({}));
        let out = memrex(&["train", "--config", s(&config)]);
        assert!(out.status.success(), "{}", stderr(&out));
        let run = dir.path().join("run");
        (dir, run)
    })
}

fn corpus() -> String {
    format!("{CORE_DATA}/tiny_corpus.json")
}

#[test]
fn train_writes_artifacts() {
    let (_, run) = trained();
    assert!(run.join("checkpoint/manifest.json").is_file());
    assert!(run.join("checkpoint/tensors.bin").is_file());
    let log = std::fs::read_to_string(run.join("metrics.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 60);
    let first: Value = serde_json::from_str(log.lines().next().unwrap()).unwrap();
    assert_eq!(first["epoch"], 1);
    let dev = read_json(&run.join("dev_report.json"));
    assert_eq!(dev["split"], "dev");
    assert_eq!(dev["metrics"]["documents"], 0);
    let manifest = read_json(&run.join("checkpoint/manifest.json"));
    assert_eq!(manifest["config"]["memory.s_E"], 8);
}

#[test]
fn evaluate_overfit_checkpoint_on_train() {
    let (dir, run) = trained();
    let report = dir.path().join("eval/train.json");
    let out = memrex(&[
        "evaluate",
        "--checkpoint",
        s(&run.join("checkpoint")),
        "--data",
        &corpus(),
        "--split",
        "train",
        "--out",
        s(&report),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = stdout(&out);
    let f1: f64 = text
        .split("strict F1 ")
        .nth(1)
        .unwrap()
        .split_whitespace()
        .next()
        .unwrap()
        .parse()
        .unwrap();
    assert!(f1 >= 0.9, "{text}");
    assert_eq!(read_json(&report)["metrics"]["documents"], 10);
}

#[test]
fn gold_passthrough_scores_one() {
    let (_, run) = trained();
    let out = memrex(&[
        "evaluate",
        "--checkpoint",
        s(&run.join("checkpoint")),
        "--data",
        &corpus(),
        "--split",
        "all",
        "--gold-passthrough",
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(stdout(&out).contains("strict F1 1.0000"), "{}", stdout(&out));
    let report = read_json(&run.join("all_report.json"));
    assert_eq!(report["metrics"]["strict"]["f1"], 1.0);
}

#[test]
fn empty_split_reports_zero() {
    let (_, run) = trained();
    let dir = tempfile::tempdir().unwrap();
    let ids: Vec<String> = (0..10).map(|i| format!("tiny_{i:02}")).collect();
    let split = dir.path().join("split.json");
    std::fs::write(&split, json!({"train": ids, "dev": [], "test": []}).to_string()).unwrap();
    let report = dir.path().join("dev.json");
    let out = memrex(&[
        "evaluate",
        "--checkpoint",
        s(&run.join("checkpoint")),
        "--data",
        &corpus(),
        "--split",
        "dev",
        "--split-file",
        s(&split),
        "--out",
        s(&report),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let metrics = &read_json(&report)["metrics"];
    assert_eq!(metrics["documents"], 0);
    assert_eq!(metrics["strict"]["tp"], 0);
    assert_eq!(metrics["strict"]["f1"], 0.0);
}

#[test]
fn predict_with_and_without_annotations() {
    let (_, run) = trained();
    let dir = tempfile::tempdir().unwrap();
    let preds = dir.path().join("preds.json");
    let out = memrex(&[
        "predict",
        "--checkpoint",
        s(&run.join("checkpoint")),
        "--data",
        &corpus(),
        "--out",
        s(&preds),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let values = read_json(&preds);
    let docs = values.as_array().unwrap();
    assert_eq!(docs.len(), 10);
    assert_eq!(docs[0]["doc_id"], "tiny_00");
    assert!(docs[0]["clusters"]
        .as_array()
        .unwrap()
        .iter()
        .all(|c| c["type"].is_string()));
    assert!(dir.path().join("preds.metrics.json").is_file());

    let raw: Vec<Value> = serde_json::from_str(&std::fs::read_to_string(corpus()).unwrap()).unwrap();
    let bare: Vec<Value> = raw
        .iter()
        .map(|d| json!({"title": d["title"], "sents": d["sents"]}))
        .collect();
    let bare_path = dir.path().join("bare.json");
    std::fs::write(&bare_path, serde_json::to_string(&bare).unwrap()).unwrap();
    let bare_preds = dir.path().join("bare_preds.json");
    let out = memrex(&[
        "predict",
        "--checkpoint",
        s(&run.join("checkpoint")),
        "--data",
        s(&bare_path),
        "--out",
        s(&bare_preds),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert_eq!(read_json(&bare_preds), values);
    assert!(!dir.path().join("bare_preds.metrics.json").exists());
}

#[test]
fn corrupt_checkpoint_exits_one() {
    let (_, run) = trained();
    let dir = tempfile::tempdir().unwrap();
    let copy = dir.path().join("checkpoint");
    std::fs::create_dir(&copy).unwrap();
    for f in ["manifest.json", "tensors.bin"] {
        std::fs::copy(run.join("checkpoint").join(f), copy.join(f)).unwrap();
    }
    let mut bytes = std::fs::read(copy.join("tensors.bin")).unwrap();
    bytes[20] ^= 0xff;
    std::fs::write(copy.join("tensors.bin"), bytes).unwrap();
    let out = memrex(&[
        "predict",
        "--checkpoint",
        s(&copy),
        "--data",
        &corpus(),
        "--out",
        s(&dir.path().join("p.json")),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("integrity"), "{}", stderr(&out));
}

#[test]
fn vocabulary_mismatch_exits_two() {
    let (_, run) = trained();
    let dir = tempfile::tempdir().unwrap();
    let text = std::fs::read_to_string(corpus()).unwrap().replace("\"LOC\"", "\"GPE\"");
    let data = dir.path().join("gpe.json");
    std::fs::write(&data, text).unwrap();
    let out = memrex(&[
        "evaluate",
        "--checkpoint",
        s(&run.join("checkpoint")),
        "--data",
        s(&data),
        "--split",
        "test",
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("GPE"), "{}", stderr(&out));
}

#[test]
fn missing_data_file_exits_two_naming_path() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), json!({"data.train": "absent/train.json"}));
    let out = memrex(&["train", "--config", s(&config)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("absent/train.json"), "{}", stderr(&out));
    assert!(!dir.path().join("run").exists());
}

#[test]
fn invalid_config_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), json!({"memory.slots": 3}));
    let out = memrex(&["train", "--config", s(&config)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("slots"), "{}", stderr(&out));

    let config = write_config(dir.path(), json!({"memory.warmup_proportion": 2.0}));
    assert_eq!(memrex(&["train", "--config", s(&config)]).status.code(), Some(2));
}

#[test]
fn diverging_training_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(
        dir.path(),
        json!({"train.learning_rate": 1e300, "train.grad_clip": null, "train.epochs": 3}),
    );
    let out = memrex(&["train", "--config", s(&config)]);
    assert_eq!(out.status.code(), Some(1), "{}", stderr(&out));
    assert!(stderr(&out).contains("non-finite"), "{}", stderr(&out));
}

#[test]
fn same_config_same_metrics_under_output_root() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), json!({"output.dir": "runs/x", "train.epochs": 5}));
    let mut logs = Vec::new();
    for root in ["a", "b"] {
        let root = dir.path().join(root);
        let out = memrex_in(&["train", "--config", s(&config)], Some(&root));
        assert!(out.status.success(), "{}", stderr(&out));
        let log = root.join("runs/x/metrics.jsonl");
        assert!(root.join("runs/x/checkpoint/manifest.json").is_file());
        logs.push(std::fs::read(log).unwrap());
    }
    assert_eq!(logs[0], logs[1]);
    assert!(!dir.path().join("runs").exists());
}

#[test]
fn split_file_training_and_test_report() {
    let dir = tempfile::tempdir().unwrap();
    let ids: Vec<String> = (0..10).map(|i| format!("tiny_{i:02}")).collect();
    let split = dir.path().join("split.json");
    std::fs::write(
        &split,
        json!({"train": ids[..7], "dev": ids[7..9], "test": ids[9..]}).to_string(),
    )
    .unwrap();
    let config = write_config(dir.path(), json!({"data.split_file": s(&split), "train.epochs": 3}));
    let out = memrex(&["train", "--config", s(&config)]);
    assert!(out.status.success(), "{}", stderr(&out));
    let run = dir.path().join("run");
    assert_eq!(read_json(&run.join("dev_report.json"))["metrics"]["documents"], 2);
    assert_eq!(read_json(&run.join("test_report.json"))["metrics"]["documents"], 1);
    let log = std::fs::read_to_string(run.join("metrics.jsonl")).unwrap();
    assert!(log
        .lines()
        .all(|l| serde_json::from_str::<Value>(l).unwrap()["selection_split"] == "dev"));
}

#[test]
fn convert_cdr_writes_docred() {
    let dir = tempfile::tempdir().unwrap();
    let out_path = dir.path().join("cdr.json");
    let out = memrex(&[
        "convert-cdr",
        "--input",
        &format!("{CORE_TEST_DATA}/cdr_sample.pubtator"),
        "--out",
        s(&out_path),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let docs = read_json(&out_path);
    assert_eq!(docs.as_array().unwrap().len(), 2);
    assert_eq!(docs[0]["labels"][0]["r"], "CID");
}
