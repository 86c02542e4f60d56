use std::path::Path;
use std::process::{Command, Output};

use batchbandit::engine::{create_experiment, FileStore, Store};
use batchbandit::{AllocationPolicy, ExperimentConfig, Reward};
use serde_json::Value;

fn bb(store: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_batchbandit"))
        .arg("--store")
        .arg(store)
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).unwrap_or_else(|e| panic!("{e}: {}", String::from_utf8_lossy(&out.stdout)))
}

#[test]
fn status_of_fresh_experiment() {
    let dir = tempfile::tempdir().unwrap();
    let out = bb(dir.path(), &["create", "--experiment", "w1", "--arms", "4", "--seed", "5"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let out = bb(dir.path(), &["status", "--experiment", "w1"]);
    assert_eq!(out.status.code(), Some(0));
    let v = json(&out);
    assert_eq!(v["batch_index"], 0);
    assert_eq!(v["seed"], 5);
    for p in v["posteriors"].as_array().unwrap() {
        assert_eq!((p["alpha"].as_f64(), p["beta"].as_f64()), (Some(1.0), Some(1.0)));
    }
}

#[test]
fn generated_seed_is_stored() {
    let dir = tempfile::tempdir().unwrap();
    let out = bb(dir.path(), &["create", "--experiment", "w1", "--arms", "3"]);
    assert!(out.status.success());
    let seed = json(&out)["seed"].as_u64().unwrap();
    let snap = std::fs::read_to_string(dir.path().join("w1.json")).unwrap();
    assert!(snap.contains(&format!("\"seed\": {seed}")));
}

/// A stored experiment whose posteriors are exactly [(2,1), (1,2)].
fn two_one_one_two(store: &Path) {
    let fs = FileStore::open(store).unwrap();
    for seed in 0.. {
        let cfg = ExperimentConfig::with_arms("pa", 2, AllocationPolicy::Uniform);
        let mut s = create_experiment(cfg, seed).unwrap();
        let recs = s.open_batch(&["a".into(), "b".into()]).unwrap();
        if recs[0].arm.get() == 1 && recs[1].arm.get() == 2 {
            s.record_rewards(&[("a".into(), Reward::SUCCESS), ("b".into(), Reward::FAILURE)]).unwrap();
            fs.create(&s).unwrap();
            return;
        }
    }
}

#[test]
fn prob_optimal_of_stored_posteriors() {
    let dir = tempfile::tempdir().unwrap();
    two_one_one_two(dir.path());
    let out = bb(dir.path(), &["prob-optimal", "--experiment", "pa", "--draws", "1000000", "--seed", "8"]);
    assert!(out.status.success());
    let v = json(&out);
    let p: Vec<f64> = serde_json::from_value(v["probs"].clone()).unwrap();
    assert!((p[0] - 5.0 / 6.0).abs() <= 0.003 && (p[1] - 1.0 / 6.0).abs() <= 0.003, "{p:?}");

    let out = bb(dir.path(), &["prob-optimal", "--posteriors", "2,1;1,2", "--draws", "1000000", "--seed", "8"]);
    assert_eq!(json(&out)["probs"], v["probs"]);
}

#[test]
fn open_batch_while_pending_conflicts_without_change() {
    let dir = tempfile::tempdir().unwrap();
    bb(dir.path(), &["create", "--experiment", "e", "--arms", "4", "--seed", "1"]);
    assert!(bb(dir.path(), &["open-batch", "--experiment", "e", "--ids", "a,b,c"]).status.success());
    let before = std::fs::read(dir.path().join("e.json")).unwrap();
    let out = bb(dir.path(), &["open-batch", "--experiment", "e", "--ids", "d"]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(json(&out)["status"], "conflict");
    assert_eq!(std::fs::read(dir.path().join("e.json")).unwrap(), before);
}

#[test]
fn record_rejects_unknown_participant() {
    let dir = tempfile::tempdir().unwrap();
    bb(dir.path(), &["create", "--experiment", "e", "--arms", "2", "--seed", "1"]);
    bb(dir.path(), &["open-batch", "--experiment", "e", "--ids", "a,b"]);
    let csv = dir.path().join("r.csv");
    std::fs::write(&csv, "participant_id,clicked\na,1\nzzz,0\n").unwrap();
    let out = bb(dir.path(), &["record", "--experiment", "e", "--rewards", csv.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(json(&out)["error"]["code"], "unknown_participant");

    std::fs::write(&csv, "participant_id,clicked\na,1\nb,2\n").unwrap();
    let out = bb(dir.path(), &["record", "--experiment", "e", "--rewards", csv.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));

    std::fs::write(&csv, "participant_id,clicked\na,1\n").unwrap();
    let out = bb(dir.path(), &["record", "--experiment", "e", "--rewards", csv.to_str().unwrap()]);
    assert!(out.status.success());
    assert_eq!(json(&out)["closed_batch"], 1);
}

#[test]
fn usage_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(bb(dir.path(), &["frobnicate"]).status.code(), Some(2));
    assert_eq!(bb(dir.path(), &["open-batch", "--ids", "a"]).status.code(), Some(2));
    assert_eq!(bb(dir.path(), &["create", "--experiment", "x", "--arms", "4", "--policy", "greedy"]).status.code(), Some(2));
    // Parsed fine but rejected by the engine.
    assert_eq!(bb(dir.path(), &["create", "--experiment", "x", "--arms", "1"]).status.code(), Some(1));
    assert_eq!(bb(dir.path(), &["status", "--experiment", "missing"]).status.code(), Some(1));
}

#[test]
fn replay_table_highlights() {
    let dir = tempfile::tempdir().unwrap();
    let out = bb(dir.path(), &["replay-table"]);
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("**0.659**") && text.contains("**0.926**"));
    let out = bb(dir.path(), &["replay-table", "--style", "latex"]);
    assert!(String::from_utf8(out.stdout).unwrap().contains("\\textbf{0.659}"));
}

#[test]
fn simulate_campaign_and_analyze() {
    let dir = tempfile::tempdir().unwrap();
    let traj = dir.path().join("t.csv");
    let out = bb(
        dir.path(),
        &["simulate", "--probs", "0.1,0.1,0.1,0.3", "--policy", "ts", "--seed", "4", "--draws", "10000", "--out", traj.to_str().unwrap()],
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(std::fs::read_to_string(&traj).unwrap().lines().count(), 1 + 16);

    let rows = dir.path().join("c.csv");
    let out = bb(
        dir.path(),
        &["campaign", "--probs", "0.2,0.2,0.3", "--replications", "20", "--seed", "3", "--draws", "2000", "--out", rows.to_str().unwrap()],
    );
    assert!(out.status.success());
    let v = json(&out);
    assert_eq!(v["policies"].as_array().unwrap().len(), 3);
    assert!(dir.path().join("c.summary.csv").exists());

    // Two uniform weeks, then a participant-effects regression across them.
    for (w, seed) in [("w1", "9"), ("w2", "10")] {
        bb(dir.path(), &["create", "--experiment", w, "--arms", "3", "--policy", "uniform", "--batches", "1", "--seed", seed]);
        let ids: Vec<String> = (0..60).map(|i| format!("s{i}")).collect();
        bb(dir.path(), &["open-batch", "--experiment", w, "--ids", &ids.join(",")]);
        let csv = dir.path().join("r.csv");
        let body: String = (0..60).filter(|i| i % 4 == 0).map(|i| format!("s{i},1\n")).collect();
        std::fs::write(&csv, format!("participant_id,clicked\n{body}")).unwrap();
        assert!(bb(dir.path(), &["record", "--experiment", w, "--rewards", csv.to_str().unwrap()]).status.success());
    }
    let out = bb(dir.path(), &["analyze", "--experiment", "w1", "--experiment", "w2", "--week-effects", "--participant-effects"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stdout));
    let v = json(&out);
    assert_eq!(v["absorbed_groups"], 60);
    assert!(v["coefficients"]["intercept"].is_null());
    let out = bb(dir.path(), &["analyze", "--experiment", "w1", "--format", "text"]);
    assert!(String::from_utf8(out.stdout).unwrap().contains("intercept"));
}

#[test]
fn export_formats() {
    let dir = tempfile::tempdir().unwrap();
    bb(dir.path(), &["create", "--experiment", "e", "--arms", "2", "--seed", "1", "--batches", "1"]);
    bb(dir.path(), &["open-batch", "--experiment", "e", "--ids", "a,b"]);
    let out = bb(dir.path(), &["export", "--experiment", "e", "--what", "records"]);
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.starts_with("participant_id,batch,arm,label,source,clicked\n"));
    assert!(text.lines().nth(1).unwrap().ends_with(','));

    let out = bb(dir.path(), &["export", "--experiment", "e"]);
    assert_eq!(out.stdout, std::fs::read(dir.path().join("e.json")).unwrap());
}
