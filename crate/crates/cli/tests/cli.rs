use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_sparqlcopy"));
    c.env("RUST_LOG", "warn").env_remove("SPARQLCOPY_ENDPOINT");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn ok(args: &[&str]) {
    let out = run(args);
    assert!(out.status.success(), "{args:?}\n{}", String::from_utf8_lossy(&out.stderr));
}

fn lines(path: &Path) -> Vec<Value> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

fn p(dir: &TempDir, name: &str) -> String {
    dir.path().join(name).to_str().unwrap().to_string()
}

/// A small synthetic corpus with enriched test entries and tag-within
/// annotations for every split.
fn prepared() -> TempDir {
    let d = tempfile::tempdir().unwrap();
    let root = p(&d, "");
    ok(&[
        "synth", "--out", &root, "--seed", "3", "--train-per-template", "4",
        "--validation-per-template", "1", "--test-per-template", "1",
    ]);
    let endpoint = format!("fixture:{}", p(&d, "kb.ttl"));
    ok(&["enrich", "--input", &p(&d, "test.jsonl"), "--out", &p(&d, "test.enriched.jsonl"), "--endpoint", &endpoint]);
    for split in ["train", "validation", "test"] {
        ok(&[
            "annotate", "--input", &p(&d, &format!("{split}.jsonl")), "--scheme", "tag-within",
            "--templates", &p(&d, "templates.json"), "--labels", &p(&d, "labels.json"),
            "--out", &p(&d, &format!("{split}.ann.jsonl")),
        ]);
    }
    ok(&["vocab", "--train", &p(&d, "train.ann.jsonl"), "--scheme", "tag-within", "--out", &p(&d, "vocab.json")]);
    d
}

fn train_args<'a>(d: &'a TempDir, out: &'a str, seeds: &'a str, vocab: &'a str, train: &'a str, val: &'a str) -> Vec<&'a str> {
    let _ = d;
    vec![
        "train", "--dataset", "synthetic", "--scheme", "tag-within", "--seeds", seeds,
        "--train", train, "--validation", val, "--vocab", vocab,
        "--epochs", "4", "--hidden", "12", "--batch-size", "8", "--out", out,
    ]
}

#[test]
fn pipeline_runs_end_to_end() {
    let d = prepared();
    let (train, val, vocab, runs) = (p(&d, "train.ann.jsonl"), p(&d, "validation.ann.jsonl"), p(&d, "vocab.json"), p(&d, "runs"));
    ok(&train_args(&d, &runs, "1", &vocab, &train, &val));
    let seed = format!("{runs}/seed-1");
    ok(&["generate", "--model", &seed, "--input", &p(&d, "test.ann.jsonl"), "--out", &p(&d, "pred.jsonl")]);
    let preds = lines(&d.path().join("pred.jsonl"));
    assert_eq!(preds.len(), lines(&d.path().join("test.ann.jsonl")).len());
    let endpoint = format!("fixture:{}", p(&d, "kb.ttl"));
    ok(&[
        "evaluate", "--predictions", &p(&d, "pred.jsonl"), "--entries", &p(&d, "test.enriched.jsonl"),
        "--out", &p(&d, "report.json"), "--seed", "1", "--endpoint", &endpoint,
    ]);
    let report: Value = serde_json::from_str(&fs::read_to_string(d.path().join("report.json")).unwrap()).unwrap();
    let acc = report["accuracy"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&acc));
    assert_eq!(report["complete"], Value::Bool(true));
    ok(&["analyze", "--predictions", &p(&d, "pred.jsonl"), "--entries", &p(&d, "test.enriched.jsonl"), "--out", &p(&d, "analysis")]);
    ok(&[
        "report", "--reports", &p(&d, "report.json"), "--matrix", &p(&d, "analysis/matrix.json"),
        "--label", "toy", "--out", &p(&d, "tables"),
    ]);
    for f in ["results.md", "results.csv", "errors.md", "errors.csv", "aggregate.json"] {
        assert!(d.path().join("tables").join(f).exists(), "{f}");
    }
}

#[test]
fn raw_annotation_keeps_the_question() {
    let d = prepared();
    ok(&["annotate", "--input", &p(&d, "test.jsonl"), "--scheme", "raw", "--out", &p(&d, "raw.jsonl")]);
    let entries = lines(&d.path().join("test.jsonl"));
    let raw = lines(&d.path().join("raw.jsonl"));
    assert_eq!(entries.len(), raw.len());
    for (e, r) in entries.iter().zip(&raw) {
        let tokens: Vec<&str> = r["question"]["tokens"].as_array().unwrap().iter().map(|t| t.as_str().unwrap()).collect();
        assert_eq!(tokens.join(" "), e["question"].as_str().unwrap());
        assert!(r["question"]["kb_spans"].as_array().unwrap().is_empty());
    }
}

#[test]
fn tag_end_output_is_reproducible() {
    let d = prepared();
    let go = |name: &str, seed: &str| {
        ok(&[
            "annotate", "--input", &p(&d, "train.jsonl"), "--scheme", "tag-end", "--labels", &p(&d, "labels.json"),
            "--seed", seed, "--out", &p(&d, name),
        ]);
        fs::read(d.path().join(name)).unwrap()
    };
    let a = go("a.jsonl", "5");
    assert_eq!(a, go("b.jsonl", "5"));
    assert_ne!(a, go("c.jsonl", "6"));
}

#[test]
fn training_writes_per_seed_manifests_and_resumes() {
    let d = prepared();
    let (train, val, vocab) = (p(&d, "train.ann.jsonl"), p(&d, "validation.ann.jsonl"), p(&d, "vocab.json"));
    let full = p(&d, "full");
    ok(&train_args(&d, &full, "1,2,3", &vocab, &train, &val));
    for s in 1..=3 {
        let m: Value = serde_json::from_str(&fs::read_to_string(d.path().join(format!("full/seed-{s}/manifest.json"))).unwrap()).unwrap();
        assert_eq!(m["seed"], s);
    }

    // interrupted after two epochs, then resumed
    let split = p(&d, "split");
    let mut args = train_args(&d, &split, "1", &vocab, &train, &val);
    args.extend(["--stop-after", "2"]);
    ok(&args);
    assert!(d.path().join("split/seed-1/checkpoint.json").exists());
    assert!(!d.path().join("split/seed-1/model.json").exists());
    ok(&train_args(&d, &split, "1", &vocab, &train, &val));
    for f in ["model.json", "train_log.json"] {
        assert_eq!(
            fs::read(d.path().join("full/seed-1").join(f)).unwrap(),
            fs::read(d.path().join("split/seed-1").join(f)).unwrap(),
            "{f}"
        );
    }

    // an up-to-date seed is not retrained
    let model = d.path().join("full/seed-2/model.json");
    let before = fs::metadata(&model).unwrap().modified().unwrap();
    ok(&train_args(&d, &full, "2", &vocab, &train, &val));
    assert_eq!(fs::metadata(&model).unwrap().modified().unwrap(), before);
}

#[test]
fn empty_predictions_are_rejected() {
    let d = prepared();
    fs::write(d.path().join("empty.jsonl"), "").unwrap();
    let endpoint = format!("fixture:{}", p(&d, "kb.ttl"));
    let out = run(&[
        "evaluate", "--predictions", &p(&d, "empty.jsonl"), "--entries", &p(&d, "test.enriched.jsonl"),
        "--out", &p(&d, "report.json"), "--endpoint", &endpoint,
    ]);
    assert!(!out.status.success());
    assert!(!d.path().join("report.json").exists());
}

#[test]
fn perfect_predictions_give_a_zero_matrix() {
    let d = prepared();
    let preds: Vec<String> = lines(&d.path().join("test.ann.jsonl"))
        .iter()
        .map(|e| {
            serde_json::json!({
                "id": e["id"],
                "tokens": e["query"],
                "query": "",
                "truncated": false,
            })
            .to_string()
        })
        .collect();
    fs::write(d.path().join("gold.jsonl"), preds.join("\n") + "\n").unwrap();
    ok(&["analyze", "--predictions", &p(&d, "gold.jsonl"), "--entries", &p(&d, "test.jsonl"), "--out", &p(&d, "analysis")]);
    let m: Value = serde_json::from_str(&fs::read_to_string(d.path().join("analysis/matrix.json")).unwrap()).unwrap();
    let all_zero = |v: &Value| v.as_array().unwrap().iter().flat_map(|x| x.as_array().cloned().unwrap_or_else(|| vec![x.clone()])).all(|x| x == 0);
    assert!(all_zero(&m["counts"]));
    assert!(all_zero(&m["insertions"]));
    assert!(all_zero(&m["deletions"]));
    assert_eq!(m["pairs"], lines(&d.path().join("test.jsonl")).len());
}

#[test]
fn pretrained_backends_are_unsupported() {
    let d = prepared();
    let (train, val, vocab, out) = (p(&d, "train.ann.jsonl"), p(&d, "validation.ann.jsonl"), p(&d, "vocab.json"), p(&d, "bart"));
    let mut args = train_args(&d, &out, "1", &vocab, &train, &val);
    args.extend(["--model", "bart"]);
    let res = run(&args);
    assert!(!res.status.success());
    assert!(String::from_utf8_lossy(&res.stderr).to_lowercase().contains("bart"));
}
