mod support;

use std::fs;
use std::path::Path;

use entpair::cli::StatsSummary;
use entpair::manifest::write_decisions;
use entpair_core::stats::summarize_group;
use support::{entpair, table2_decisions, REFERENCE_TRIALS};

fn ok(args: &[&str], cwd: &Path) {
    let o = entpair(args, cwd);
    assert!(o.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&o.stderr));
}

fn small_synth(cwd: &Path, out: &str) {
    ok(&["synth", "--out", out, "--seed", "3", "--subjects", "300", "--oracle-draws", "100000"], cwd);
}

fn csv_rows(path: &Path) -> Vec<Vec<String>> {
    let mut r = csv::Reader::from_path(path).unwrap();
    r.records().map(|x| x.unwrap().iter().map(String::from).collect()).collect()
}

#[test]
fn synth_then_ten_trials() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&["synth", "--out", "run", "--seed", "7", "--subjects", "2000", "--signal", "3"], d);
    ok(
        &["trials", "--out", "run", "--seed", "7", "--trials", "10", "--epochs", "2", "--conv-width", "4", "--head-width", "16"],
        d,
    );
    let rows = csv_rows(&d.join("run/trials.csv"));
    assert_eq!(rows.len(), 11);
    assert_eq!(rows[10][0], "summary");
    for r in &rows[..10] {
        let acc: f64 = r[2].parse().unwrap();
        assert!((0.0..=100.0).contains(&acc));
    }
    for i in 1..=10 {
        assert!(d.join(format!("run/trial_{i:02}.csv")).exists());
    }
}

#[test]
fn missing_manifest_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = entpair(&["train", "--out", "nowhere"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("manifest"), "{err}");
    assert!(err.contains("Usage"), "{err}");
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(entpair(&["synth", "--bogus"], dir.path()).status.code(), Some(2));
}

#[test]
fn reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    for out in ["a", "b"] {
        small_synth(d, out);
        ok(&["split", "--out", out, "--seed", "3"], d);
        ok(&["train", "--out", out, "--seed", "3", "--epochs", "2", "--conv-width", "2", "--head-width", "4"], d);
    }
    for f in ["manifest.csv", "features/syn00000.fptn", "split_train.csv", "split_test.csv", "trial.csv", "model.bundle"] {
        assert_eq!(fs::read(d.join("a").join(f)).unwrap(), fs::read(d.join("b").join(f)).unwrap(), "{f}");
    }
}

#[test]
fn replay_reproduces_a_run() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    small_synth(d, "r");
    ok(&["train", "--out", "r", "--seed", "5", "--epochs", "2", "--conv-width", "2", "--head-width", "4"], d);
    let trial = fs::read(d.join("r/trial.csv")).unwrap();
    let bundle = fs::read(d.join("r/model.bundle")).unwrap();
    fs::remove_file(d.join("r/trial.csv")).unwrap();
    ok(&["replay", "r/train.config.json"], d);
    assert_eq!(fs::read(d.join("r/trial.csv")).unwrap(), trial);
    assert_eq!(fs::read(d.join("r/model.bundle")).unwrap(), bundle);
}

#[test]
fn corrupt_feature_file_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    small_synth(d, "c");
    fs::write(d.join("c/features/syn00001.fptn"), b"FPTX garbage").unwrap();
    let o = entpair(&["pair", "--out", "c"], d);
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn single_label_manifest_is_infeasible() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    small_synth(d, "i");
    let m = d.join("i/manifest.csv");
    fs::write(&m, fs::read_to_string(&m).unwrap().replace(",NON,", ",ENT,")).unwrap();
    let o = entpair(&["pair", "--out", "i"], d);
    assert_eq!(o.status.code(), Some(4), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn stats_and_report_on_fixture() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write_decisions(&d.join("decisions.csv"), &table2_decisions()).unwrap();
    let accs = REFERENCE_TRIALS.map(|v| v.to_string()).join(",");
    ok(&["stats", "--out", ".", "--decisions", "decisions.csv", "--model-accuracies", &accs], d);
    ok(&["report", "--out", "."], d);
    let summary: StatsSummary = serde_json::from_slice(&fs::read(d.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary.respondents, 783);
    assert_eq!(summary.recognized_dropped, 126);
    assert!(summary.excluded.is_empty());
    let rows = csv_rows(&d.join("table2.csv"));
    let groups: Vec<&str> = rows.iter().map(|r| r[0].as_str()).collect();
    assert_eq!(groups, ["ai_model", "human_experts", "entrepreneur", "educator", "researcher", "vc_angel", "trained"]);
    for r in &rows[1..] {
        let t: f64 = r[5].parse().unwrap();
        assert!(t > 0.0, "{r:?}");
    }
    let svg = fs::read_to_string(d.join("fig7.svg")).unwrap();
    assert!(svg.contains("class=\"chance\""));
}

#[test]
fn model_only_summary_gives_one_row() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let summary = StatsSummary {
        groups: vec![summarize_group("ai_model", &REFERENCE_TRIALS, None).unwrap()],
        respondents: 0,
        excluded: Vec::new(),
        recognized_dropped: 0,
        retained_decisions: 0,
    };
    fs::write(d.join("summary.json"), serde_json::to_vec(&summary).unwrap()).unwrap();
    ok(&["report", "--out", "."], d);
    let rows = csv_rows(&d.join("table2.csv"));
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0][..5], ["ai_model", "10", "", "79.51", "0.78"]);
}
