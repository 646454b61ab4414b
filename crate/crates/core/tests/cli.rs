mod common;

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use common::{signal_dataset, toks};
use ratfid::ingest::write_simple_jsonl;
use ratfid::{Dataset, Example, Granularity, LabelSpace, Mask};

fn ratfid(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ratfid")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = ratfid(args);
    assert!(
        out.status.success(),
        "ratfid {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn adapter() -> String {
    let script = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/data/keyword_adapter.py");
    format!("exec:python3 {}", script.display())
}

fn write(dir: &Path, name: &str, ds: &Dataset) -> String {
    let path = dir.join(name);
    write_simple_jsonl(ds, &path).unwrap();
    path.display().to_string()
}

/// Two examples with closed-form metrics under the keyword model.
fn toy() -> Dataset {
    let examples = vec![
        Example::new("a", toks("good movie"), "pos", Mask::from_ints(&[1, 0]).unwrap()),
        Example::new("b", toks("good good film"), "pos", Mask::from_ints(&[1, 0, 0]).unwrap()),
    ];
    Dataset::new("toy", LabelSpace::new(["neg", "pos"]).unwrap(), examples, Granularity::Token).unwrap()
}

fn json(s: &str) -> serde_json::Value {
    serde_json::from_str(s).unwrap()
}

#[test]
fn evaluate_with_exec_adapter() {
    let dir = tempfile::tempdir().unwrap();
    let data = write(dir.path(), "toy.jsonl", &toy());
    let out = ok(&["evaluate", "--dataset", &data, "--predictor", &adapter(), "--group-by", "dataset", "--out-format", "json"]);
    let v = json(&out);
    let row = v.as_array().unwrap().iter().find(|r| r["metric"] == "suff").unwrap();
    assert_eq!(row["n"], 2);
    // example a: rationale keeps the whole signal; example b keeps half
    let s = |x: f64| 1.0 / (1.0 + (-x).exp());
    let suff_b = 1.0 - (s(2.0) - s(1.0));
    let mean = row["mean"].as_f64().unwrap();
    assert!((mean - (1.0 + suff_b) / 2.0).abs() < 1e-6, "{mean}");
}

#[test]
fn plan_fill_score_matches_evaluate() {
    let dir = tempfile::tempdir().unwrap();
    let data = write(dir.path(), "signal.jsonl", &signal_dataset(60, 0, 40, 0.2, 5));
    let model = dir.path().join("model.json").display().to_string();
    let live = ok(&["evaluate", "--dataset", &data, "--save-model", &model, "--out-format", "csv"]);

    let requests = dir.path().join("requests.jsonl").display().to_string();
    let cache = dir.path().join("cache.jsonl").display().to_string();
    let builtin = format!("builtin:{model}");
    ok(&["plan", "--dataset", &data, "--out", &requests, "--fill-with", &builtin, "--cache-out", &cache]);
    assert!(std::fs::read_to_string(&requests).unwrap().lines().count() > 0);
    let scored = ok(&["score", "--dataset", &data, "--cache", &cache, "--out-format", "csv"]);
    assert_eq!(scored, live);

    // a cache missing entries is reported, not silently skipped
    let text = std::fs::read_to_string(&cache).unwrap();
    let truncated: String = text.lines().skip(1).map(|l| format!("{l}\n")).collect();
    std::fs::write(&cache, truncated).unwrap();
    let out = ratfid(&["score", "--dataset", &data, "--cache", &cache]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing"));
}

#[test]
fn curves_csv_and_json() {
    let dir = tempfile::tempdir().unwrap();
    let data = write(dir.path(), "signal.jsonl", &signal_dataset(60, 0, 30, 0.2, 6));
    let csv = ok(&["curves", "--dataset", &data, "--rates", "0,0.5,1", "--trials", "3", "--out-format", "csv"]);
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), "rate,metric,mean,std,n");
    assert_eq!(lines.count(), 6);

    let path = dir.path().join("curve.json");
    ok(&["curves", "--dataset", &data, "--rates", "0:1:0.25", "--trials", "2", "--out", path.to_str().unwrap()]);
    let v = json(&std::fs::read_to_string(&path).unwrap());
    // one row per rate and metric
    assert_eq!(v.as_array().unwrap().len(), 10);
}

#[test]
fn regimes_builtin() {
    let dir = tempfile::tempdir().unwrap();
    let data = write(dir.path(), "signal.jsonl", &signal_dataset(60, 20, 40, 0.2, 7));
    let out = ok(&["regimes", "--dataset", &data, "--out-format", "json"]);
    let v = json(&out);
    for regime in ["no-rationale", "eval-rationale", "train-eval-rationale"] {
        let row = v
            .as_array()
            .unwrap()
            .iter()
            .find(|r| r["regime"] == regime && r["class"] == "all")
            .unwrap();
        assert_eq!(row["n"], 40);
        let acc = row["accuracy"].as_f64().unwrap();
        assert!((0.0..=1.0).contains(&acc), "{regime}: {acc}");
    }
}

#[test]
fn records_reaggregate_identically() {
    let dir = tempfile::tempdir().unwrap();
    let data = write(dir.path(), "signal.jsonl", &signal_dataset(60, 0, 40, 0.2, 8));
    let records = dir.path().join("records.jsonl").display().to_string();
    let direct = ok(&["evaluate", "--dataset", &data, "--records", &records, "--group-by", "gold-class", "--out-format", "json"]);
    let again = ok(&["report", "--records", &records, "--name", "signal", "--group-by", "gold-class", "--out-format", "json"]);
    assert_eq!(json(&direct), json(&again));
}

#[test]
fn ingest_sst_then_evaluate() {
    let dir = tempfile::tempdir().unwrap();
    let trees = dir.path().join("trees.txt");
    std::fs::write(
        &trees,
        "(4 (2 the) (4 (4 great) (2 film)))\n(0 (2 a) (0 (0 dull) (2 plot)))\n(3 (2 it) (3 (3 works) (2 well)))\n",
    )
    .unwrap();
    let out = dir.path().join("sst.jsonl").display().to_string();
    ok(&["ingest-sst", "--dataset", trees.to_str().unwrap(), "--out", &out]);
    let text = std::fs::read_to_string(&out).unwrap();
    assert!(text.lines().count() >= 2);
    let report = ok(&["evaluate", "--dataset", &out, "--split", "all", "--group-by", "dataset", "--out-format", "json"]);
    assert_eq!(json(&report)[0]["n"], 3);
    assert_eq!(json(&report)[0]["metric"], "suff");
}

#[test]
fn bad_input_fails_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.jsonl");
    std::fs::write(&bad, "{\"id\":\"x\",\"tokens\":[\"a\"],\"label\":\"pos\",\"rationale\":[1,1]}\n").unwrap();
    let out = ratfid(&["evaluate", "--dataset", bad.to_str().unwrap(), "--labels", "neg,pos"]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("line 1"), "{err}");

    let out = ratfid(&["evaluate", "--dataset", "/nonexistent/data.jsonl"]);
    assert!(!out.status.success());
}
