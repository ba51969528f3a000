use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn bloomtax(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bloomtax"))
        .args(args)
        .output()
        .unwrap()
}

fn stdout_json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).unwrap()
}

fn error_json(out: &Output) -> Value {
    let line = String::from_utf8_lossy(&out.stderr);
    let last = line.lines().last().unwrap_or_default();
    serde_json::from_str(last).unwrap_or_else(|_| panic!("stderr is not JSON: {line}"))
}

fn gensynth(dir: &Path, per_class: &str) -> String {
    let path = dir.join("corpus.csv");
    let out = bloomtax(&["gensynth", per_class, "--seed", "7", "--out", path.to_str().unwrap()]);
    assert!(out.status.success());
    path.to_str().unwrap().to_string()
}

#[test]
fn gensynth_writes_six_rows_per_count() {
    let dir = tempfile::tempdir().unwrap();
    let path = gensynth(dir.path(), "100");
    let text = fs::read_to_string(path).unwrap();
    assert_eq!(text.lines().count(), 601);
    assert!(text.starts_with("Sentence,Label\n"));
    let out = bloomtax(&["gensynth", "0"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn run_then_inspect_lists_ten_features_per_class() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = gensynth(dir.path(), "20");
    let out_dir = dir.path().join("run");
    let out = bloomtax(&[
        "run",
        "--corpus",
        &corpus,
        "--out",
        out_dir.to_str().unwrap(),
        "--model",
        "svm",
        "--augment",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report = String::from_utf8_lossy(&out.stdout);
    assert!(report.contains("| Model | Accuracy | Precision | Recall | F1-micro | F1-macro |"));
    assert!(report.contains("| SVM w/ Augmentation |"));
    for f in [
        "config.json",
        "manifest.json",
        "metrics.json",
        "confusion.csv",
        "report.md",
    ] {
        assert!(out_dir.join(f).exists(), "{f} missing");
    }

    let artifact = out_dir.join("models/svm.json");
    let out = bloomtax(&["inspect", artifact.to_str().unwrap()]);
    assert!(out.status.success());
    let v = stdout_json(&out);
    assert_eq!(v["kind"], "SVM");
    let top = v["top_features"].as_array().unwrap();
    assert_eq!(top.len(), 6);
    for class in top {
        assert_eq!(class["features"].as_array().unwrap().len(), 10);
    }
}

#[test]
fn corrupted_artifact_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("broken.json");
    fs::write(&path, "{\"schema_version\": 7}").unwrap();
    let out = bloomtax(&["inspect", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3));
    let err = error_json(&out);
    assert!(err["error"]["message"].as_str().unwrap().contains("schema version"));
}

#[test]
fn flags_conflicting_with_config_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = gensynth(dir.path(), "10");
    let cfg = dir.path().join("cfg.json");
    fs::write(&cfg, serde_json::json!({"corpus": corpus, "seed": 1}).to_string()).unwrap();
    let out_dir = dir.path().join("out");
    let out = bloomtax(&[
        "run",
        "--config",
        cfg.to_str().unwrap(),
        "--seed",
        "2",
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_json(&out)["error"]["class"], "config");
    assert!(!out_dir.exists());

    // Restating the same value is fine.
    let out = bloomtax(&[
        "run",
        "--config",
        cfg.to_str().unwrap(),
        "--seed",
        "1",
        "--out",
        out_dir.to_str().unwrap(),
        "--model",
        "nb",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn unknown_config_keys_and_missing_corpus_are_config_errors() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    fs::write(&cfg, "{\"seeed\": 1}").unwrap();
    assert_eq!(
        bloomtax(&["run", "--config", cfg.to_str().unwrap()]).status.code(),
        Some(2)
    );
    assert_eq!(bloomtax(&["run", "--out", "x"]).status.code(), Some(2));
}

#[test]
fn malformed_corpus_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("bad.csv");
    fs::write(&corpus, "Sentence,Label\nDefine x.,Remembering\n").unwrap();
    let out = bloomtax(&[
        "run",
        "--corpus",
        corpus.to_str().unwrap(),
        "--out",
        dir.path().join("o").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn zeroshot_rows_are_sorted_and_missing_token_fails_early() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = gensynth(dir.path(), "5");
    let out_dir = dir.path().join("zs");
    let out = bloomtax(&[
        "zeroshot",
        "--corpus",
        &corpus,
        "--out",
        out_dir.to_str().unwrap(),
        "--provider",
        "mock-unparseable",
        "--provider",
        "mock",
    ]);
    assert!(out.status.success());
    let report = fs::read_to_string(out_dir.join("report.md")).unwrap();
    assert!(report.find("| mock |").unwrap() < report.find("| mock_unparseable |").unwrap());
    let verdicts = fs::read_to_string(out_dir.join("verdicts.jsonl")).unwrap();
    assert_eq!(verdicts.lines().count(), 60);
    let first: Value = serde_json::from_str(verdicts.lines().next().unwrap()).unwrap();
    for key in ["id", "raw", "parsed", "latency_ms", "attempts"] {
        assert!(first.get(key).is_some(), "{key}");
    }

    let cfg = dir.path().join("live.json");
    let live = serde_json::json!({
        "corpus": corpus,
        "providers": [{
            "name": "live",
            "kind": "http",
            "endpoint": "http://127.0.0.1:9/v1/chat/completions",
            "model": "m",
            "auth_env": "BLOOMTAX_CLI_TEST_UNSET_TOKEN"
        }]
    });
    fs::write(&cfg, live.to_string()).unwrap();
    let out = bloomtax(&[
        "zeroshot",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        dir.path().join("live").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(error_json(&out)["error"]["message"]
        .as_str()
        .unwrap()
        .contains("BLOOMTAX_CLI_TEST_UNSET_TOKEN"));
}

#[test]
fn unreachable_provider_exits_with_provider_code() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = gensynth(dir.path(), "1");
    let cfg = dir.path().join("down.json");
    let body = serde_json::json!({
        "corpus": corpus,
        "providers": [{
            "name": "down",
            "kind": "http",
            "endpoint": "http://127.0.0.1:9/v1/chat/completions",
            "model": "m",
            "max_retries": 1,
            "backoff_ms": 1,
            "timeout_secs": 2
        }]
    });
    fs::write(&cfg, body.to_string()).unwrap();
    let out = bloomtax(&[
        "zeroshot",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        dir.path().join("o").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(4));
    assert_eq!(error_json(&out)["error"]["class"], "provider");
}

#[test]
fn metrics_subcommand_scores_label_files() {
    let dir = tempfile::tempdir().unwrap();
    let t = dir.path().join("true.txt");
    let p = dir.path().join("pred.txt");
    fs::write(&t, "Knowledge\nKnowledge\nComprehension\nComprehension\n").unwrap();
    fs::write(&p, "Knowledge\nComprehension\nComprehension\nComprehension\n").unwrap();
    let out = bloomtax(&[
        "metrics",
        "--y-true",
        t.to_str().unwrap(),
        "--y-pred",
        p.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    let v = stdout_json(&out);
    assert_eq!(v["metrics"]["accuracy"], 0.75);
    let f1 = v["metrics"]["macro_f1"].as_f64().unwrap();
    assert!((f1 - 0.7333333333333334).abs() < 1e-12);

    let out = bloomtax(&[
        "metrics",
        "--y-true",
        t.to_str().unwrap(),
        "--y-pred",
        p.to_str().unwrap(),
        "--markdown",
        "toy",
    ]);
    assert!(String::from_utf8_lossy(&out.stdout).contains("| toy | 0.75 | 0.83 | 0.75 | 0.75 | 0.73 |"));
}
