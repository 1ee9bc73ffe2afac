use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn bin(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_social-sandbox"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("spawn")
}

fn ok(args: &[&str]) -> String {
    let out = bin(args);
    assert!(
        out.status.success(),
        "{args:?} failed:\n{}\n{}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn write_config(dir: &Path) -> PathBuf {
    let path = dir.join("run.toml");
    fs::write(
        &path,
        "seed = 6\nrounds = 4\nagents = 20\nobjective = \"cross_view\"\ncheckpoint_every = 2\n",
    )
    .unwrap();
    path
}

#[test]
fn run_replay_and_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let out = dir.path().join("out");
    let stdout = ok(&["run", "--config", s(&cfg), "--out", s(&out)]);
    assert!(stdout.contains("finished round 4"), "{stdout}");
    let log = out.join("events.jsonl");
    let run_csv = fs::read_to_string(out.join("metrics.csv")).unwrap();
    assert_eq!(run_csv.lines().count(), 5);
    assert!(run_csv.starts_with("round,stance_mean,"));

    let summary: Value = serde_json::from_str(&ok(&["replay", "--log", s(&log)])).unwrap();
    assert_eq!(summary["round"], 4);
    assert_eq!(summary["users"], 20);
    assert_eq!(summary["mismatched_rounds"], serde_json::json!([]));

    let csv = dir.path().join("m.csv");
    ok(&["metrics", "--log", s(&log), "--out", s(&csv)]);
    assert_eq!(fs::read_to_string(&csv).unwrap(), run_csv);

    // A finished directory resumes to the same place without new events.
    let before = fs::read_to_string(&log).unwrap();
    ok(&["run", "--config", s(&cfg), "--out", s(&out), "--resume"]);
    assert_eq!(fs::read_to_string(&log).unwrap(), before);
}

#[test]
fn replay_rejects_a_doctored_metric() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let out = dir.path().join("out");
    ok(&["run", "--config", s(&cfg), "--out", s(&out)]);
    let log = out.join("events.jsonl");
    let text = fs::read_to_string(&log).unwrap();
    let doctored: Vec<String> = text
        .lines()
        .map(|l| {
            let mut v: Value = serde_json::from_str(l).unwrap();
            if v["kind"] == "metric" && v["round"] == 2 {
                v["payload"]["interactions"] = Value::from(100_000);
            }
            v.to_string()
        })
        .collect();
    fs::write(&log, doctored.join("\n")).unwrap();
    let res = bin(&["replay", "--log", s(&log)]);
    assert!(!res.status.success());
    assert!(String::from_utf8_lossy(&res.stderr).contains("[2]"));
}

#[test]
fn bad_config_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, "seed = 1\nalpha = 1.5\n").unwrap();
    let res = bin(&["run", "--config", s(&cfg), "--out", s(&dir.path().join("o"))]);
    assert!(!res.status.success());
    assert!(String::from_utf8_lossy(&res.stderr).contains("alpha"));
}

#[test]
fn ingest_and_exports() {
    let dir = tempfile::tempdir().unwrap();
    let meta = fixtures().join("metadata");
    let tuples = fixtures().join("tuples.jsonl");
    let pop = dir.path().join("pop.json");
    let stdout = ok(&["ingest", "--meta", s(&meta), "--out", s(&pop)]);
    assert!(stdout.contains("5 files, 5 users, 7 edges, 27 history posts, 1 skipped, 1 dangling"), "{stdout}");
    let v: Value = serde_json::from_slice(&fs::read(&pop).unwrap()).unwrap();
    assert_eq!(v["profiles"].as_array().unwrap().len(), 5);

    let sft = dir.path().join("sft.jsonl");
    ok(&["export-sft", "--meta", s(&meta), "--tuples", s(&tuples), "--out", s(&sft)]);
    let text = fs::read_to_string(&sft).unwrap();
    assert_eq!(text.lines().count(), 8);
    assert_eq!(serde_json::from_str::<Value>(text.lines().next().unwrap()).unwrap()["schema"], "sft");
    let manifest: Value = serde_json::from_slice(&fs::read(dir.path().join("sft.manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["records"], 7);
    assert_eq!(manifest["skipped"], 1);

    let dpo = dir.path().join("dpo.jsonl");
    ok(&["export-dpo", "--meta", s(&meta), "--tuples", s(&tuples), "--out", s(&dpo)]);
    let text = fs::read_to_string(&dpo).unwrap();
    for line in text.lines().skip(1) {
        let r: Value = serde_json::from_str(line).unwrap();
        assert_eq!(r["rejected"].as_array().unwrap().len(), 3);
    }
    let manifest: Value = serde_json::from_slice(&fs::read(dir.path().join("dpo.manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["dpo_negatives"], 3);
    assert_eq!(manifest["similarity_threshold"], 0.8);
}

#[test]
fn verify_abm_reports_consensus() {
    let v: Value = serde_json::from_str(&ok(&["verify-abm", "--nodes", "30", "--seed", "2", "--p", "0.2"])).unwrap();
    assert_eq!(v["converged"], true);
    assert!(v["error"].as_f64().unwrap() < 1e-6);
}

#[test]
fn bench_bandit_small() {
    let stdout = ok(&["bench-bandit", "--seeds", "2", "--rounds", "50"]);
    assert!(stdout.contains("seed   0:"), "{stdout}");
    assert!(stdout.contains("mean: ee"));
}
