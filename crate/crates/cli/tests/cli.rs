use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn oscar(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_oscar")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = oscar(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn lines(path: &Path) -> Vec<Value> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

#[test]
fn sample_align_decode_chain() {
    let dir = tempfile::tempdir().unwrap();
    let p = |n: &str| dir.path().join(n).to_string_lossy().into_owned();
    ok(&["synth-bench", "--out", &p("ds"), "--videos", "1", "--sigma", "0"]);

    let ann: Value = serde_json::from_str(&std::fs::read_to_string(p("ds/videos/synth-000.json")).unwrap()).unwrap();
    std::fs::write(p("recipe.json"), ann["recipe"].to_string()).unwrap();

    ok(&["sample", "--manifest", &p("ds/frames/synth-000"), "--annotations", &p("ds/videos/synth-000.json"), "--k", "3", "--out", &p("frames.json")]);
    let sampled: Vec<Value> = serde_json::from_str(&std::fs::read_to_string(p("frames.json")).unwrap()).unwrap();
    assert_eq!(sampled.len(), 8);
    assert!(sampled.iter().all(|s| s["frames"].as_array().unwrap().len() == 3));

    ok(&["align", "--frames", &p("frames.json"), "--recipe", &p("recipe.json"), "--synthetic", &p("ds/synthetic.json"), "--out", &p("scores.jsonl")]);
    let scores = lines(Path::new(&p("scores.jsonl")));
    assert_eq!(scores.len(), 24);
    assert_eq!(scores[0]["channel"], "fused");

    ok(&["decode", "--scores", &p("scores.jsonl"), "--out", &p("offline.jsonl")]);
    let predicted: Vec<u64> = lines(Path::new(&p("offline.jsonl"))).iter().map(|r| r["predicted"].as_u64().unwrap()).collect();
    // The sharpest neighbour may sit across a segment border, so the truth
    // is the step planted in each chosen frame.
    let truth: Vec<u64> = sampled
        .iter()
        .flat_map(|s| s["frames"].as_array().unwrap().clone())
        .map(|f| f["frame"]["image"].as_str().unwrap().split('/').nth(3).unwrap().parse().unwrap())
        .collect();
    assert_eq!(predicted, truth);

    std::fs::write(p("tracker.json"), r#"{"max_jump": 3, "advance_margin": 0.02, "confirm_count": 2}"#).unwrap();
    ok(&["decode", "--scores", &p("scores.jsonl"), "--mode", "online", "--config", &p("tracker.json"), "--out", &p("online.jsonl")]);
    let log = lines(Path::new(&p("online.jsonl")));
    assert_eq!(log.len(), 24);
    assert_eq!(log.last().unwrap()["state_after"]["current"], 8);
}

#[test]
fn single_condition_prints_summary_without_table() {
    let dir = tempfile::tempdir().unwrap();
    let p = |n: &str| dir.path().join(n).to_string_lossy().into_owned();
    ok(&["synth-bench", "--out", &p("ds"), "--videos", "2"]);
    let out = ok(&["evaluate", "--dataset", &p("ds"), "--condition", "oscar", "--report", &p("r.json"), "--score-log", &p("log.jsonl")]);
    assert!(out.starts_with("oscar: "), "{out}");
    let report: Value = serde_json::from_str(&std::fs::read_to_string(p("r.json")).unwrap()).unwrap();
    assert!(report.get("table").is_none());
    // 2 videos x 8 segments x 3 trials x 5 frames, baseline and status channels.
    assert_eq!(lines(Path::new(&p("log.jsonl"))).len(), 2 * 8 * 3 * 5 * 2);
}

#[test]
fn bad_inputs_fail_cleanly() {
    let out = oscar(&["evaluate", "--dataset", "/nonexistent", "--report", "/tmp/x.json"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("/nonexistent"));

    let dir = tempfile::tempdir().unwrap();
    let recipe = dir.path().join("r.txt");
    std::fs::write(&recipe, "1. Boil water.\n2. Add pasta.\n").unwrap();
    let out = oscar(&["align", "--frames", "f.json", "--recipe", &recipe.to_string_lossy(), "--backend", "ftp://x", "--out", "o"]);
    assert!(!out.status.success());
    let out = oscar(&["decode", "--scores", "s", "--mode", "sideways", "--out", "o"]);
    assert!(!out.status.success());
}
