use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

const CONFIG: &str = r#"
seed = 3
[model]
dim = 16
enc_layers = 1
dec_layers = 1
[train]
batch_size = 10
learning_rate = 0.1
momentum = 0.9
clip_norm = 1.0
max_epochs = 2
[synth]
n_products = 8
n_pairs = 40
n_reviews = 6
test_products = 2
validation_pairs = 4
[decoding]
beam_width = 3
"#;

fn answergen(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_answergen"))
        .current_dir(dir)
        .args(["--config", "run.toml"])
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> Vec<Value> {
    let out = answergen(dir, args);
    let stderr = String::from_utf8_lossy(&out.stderr).to_string();
    assert!(out.status.success(), "{args:?} failed: {stderr}");
    stderr.lines().filter_map(|l| serde_json::from_str(l).ok()).collect()
}

fn error_line(out: &Output) -> Value {
    assert_eq!(out.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&out.stderr);
    serde_json::from_str(stderr.lines().last().expect("error line")).expect("json error")
}

fn workspace(extra: &str) -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("run.toml"), format!("{CONFIG}{extra}")).unwrap();
    dir
}

fn prepared(extra: &str) -> tempfile::TempDir {
    let dir = workspace(extra);
    ok(dir.path(), &["synth"]);
    ok(dir.path(), &["prepare"]);
    ok(dir.path(), &["snippets"]);
    dir
}

fn jsonl(path: &Path) -> Vec<Value> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

#[test]
fn full_pipeline_on_synthetic_corpus() {
    let dir = prepared("");
    let d = dir.path();
    let logs = ok(d, &["train"]);
    assert!(logs.iter().any(|v| v["event"] == "train_done"));
    assert_eq!(jsonl(&d.join("work/train_log.jsonl")).len(), 2);
    assert!(d.join("work/checkpoint.json").exists());

    ok(d, &["generate"]);
    let answers = jsonl(&d.join("work/answers.jsonl"));
    assert!(!answers.is_empty());
    for a in &answers {
        assert!(a["pair_id"].is_string());
        assert!(a["answer_tokens"].is_array());
    }

    ok(d, &["evaluate"]);
    let report: Value = serde_json::from_str(&fs::read_to_string(d.join("work/report.json")).unwrap()).unwrap();
    assert_eq!(report["scored"].as_u64().unwrap() + report["errors"].as_u64().unwrap(), answers.len() as u64);
    let es = report["es"].as_f64().unwrap();
    assert!((-1.0..=1.0).contains(&es));
}

#[test]
fn beam_one_writes_one_answer_per_pair() {
    let dir = prepared("");
    let d = dir.path();
    ok(d, &["train"]);
    ok(d, &["generate"]);
    let wide = jsonl(&d.join("work/answers.jsonl"));
    ok(d, &["--beam", "1", "generate"]);
    let narrow = jsonl(&d.join("work/answers.jsonl"));
    assert_eq!(wide.len(), narrow.len());
    let ids = |v: &[Value]| v.iter().map(|a| a["pair_id"].clone()).collect::<Vec<_>>();
    assert_eq!(ids(&wide), ids(&narrow));
}

#[test]
fn reference_answers_score_perfect_similarity() {
    let dir = prepared("");
    let d = dir.path();
    let excluded: Vec<String> = jsonl(&d.join("work/snippets.jsonl"))
        .into_iter()
        .filter(|s| s["excluded"] == true)
        .map(|s| s["pair_id"].as_str().unwrap().to_string())
        .collect();
    let refs: Vec<String> = jsonl(&d.join("work/dataset.jsonl"))
        .into_iter()
        .filter(|r| r["kind"] == "pair" && r["split"] == "test")
        .filter(|r| !excluded.contains(&r["pair_id"].as_str().unwrap().to_string()))
        .map(|r| {
            let words: Vec<Value> = r["answer"].as_array().unwrap().iter().map(|t| t["word"].clone()).collect();
            serde_json::json!({"pair_id": r["pair_id"], "answer_tokens": words}).to_string()
        })
        .collect();
    assert!(!refs.is_empty());
    fs::write(d.join("refs.jsonl"), refs.join("\n") + "\n").unwrap();
    ok(d, &["evaluate", "--answers", "refs.jsonl"]);
    let report: Value = serde_json::from_str(&fs::read_to_string(d.join("work/report.json")).unwrap()).unwrap();
    assert_eq!(report["errors"], 0);
    assert!((report["es"].as_f64().unwrap() - 1.0).abs() < 1e-9);
}

#[test]
fn prepare_is_idempotent() {
    let dir = workspace("");
    let d = dir.path();
    ok(d, &["synth"]);
    ok(d, &["prepare"]);
    let first: Vec<Vec<u8>> = ["dataset.jsonl", "vocab.json", "word_table.txt"]
        .iter()
        .map(|f| fs::read(d.join("work").join(f)).unwrap())
        .collect();
    ok(d, &["prepare"]);
    for (f, before) in ["dataset.jsonl", "vocab.json", "word_table.txt"].iter().zip(first) {
        assert_eq!(fs::read(d.join("work").join(f)).unwrap(), before, "{f} changed");
    }
}

#[test]
fn pi_override_is_echoed() {
    let dir = workspace("[retrieval]\npi = 0.5\n");
    let d = dir.path();
    ok(d, &["synth"]);
    ok(d, &["prepare"]);
    let logs = ok(d, &["snippets"]);
    let ev = logs.iter().find(|v| v["event"] == "snippets").unwrap();
    assert_eq!(ev["pi"], 0.5);
    assert_eq!(ev["pi_source"], "override");
}

#[test]
fn corrupt_corpus_line_is_reported() {
    let dir = workspace("");
    let d = dir.path();
    ok(d, &["synth"]);
    let text = fs::read_to_string(d.join("corpus.jsonl")).unwrap();
    let mut lines: Vec<&str> = text.lines().collect();
    lines[4] = "{\"kind\": \"qa\", \"question\": ";
    fs::write(d.join("corpus.jsonl"), lines.join("\n")).unwrap();
    let err = error_line(&answergen(d, &["prepare"]));
    assert_eq!(err["error"], "format");
    assert_eq!(err["line"], 5);
}

#[test]
fn missing_input_fails_before_work() {
    let dir = workspace("");
    let err = error_line(&answergen(dir.path(), &["train"]));
    assert_eq!(err["error"], "io");
    assert!(err["message"].as_str().unwrap().contains("missing input"));
    assert!(!dir.path().join("work").exists());
}

#[test]
fn bad_config_is_a_config_error() {
    let dir = workspace("[train]\nmomentum = 1.5\n");
    let err = error_line(&answergen(dir.path(), &["selftest"]));
    assert_eq!(err["error"], "config");
}

#[test]
fn selftest_exits_zero() {
    let dir = workspace("");
    let logs = ok(dir.path(), &["selftest"]);
    assert!(logs.len() >= 8);
    assert!(logs.iter().all(|c| c["passed"] == true));
}
