use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_quadslam")).args(args).output().expect("binary runs")
}

fn text(bytes: &[u8]) -> String {
    String::from_utf8_lossy(bytes).into_owned()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn json(p: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(p).unwrap()).unwrap()
}

#[test]
fn help_documents_defaults() {
    let out = run(&["simulate", "--help"]);
    assert!(out.status.success());
    let help = text(&out.stdout);
    for needle in ["--n-landmarks", "--focal-mm", "--bbox-sigma", "--odo-sigma", "--relpos-sigma", "default"] {
        assert!(help.contains(needle), "missing {needle}");
    }
    let help = text(&run(&["evaluate", "--help"]).stdout);
    for needle in ["--n-trials", "--base-seed", "--jobs", "--max-iterations", "--factor-bbox-sigma"] {
        assert!(help.contains(needle), "missing {needle}");
    }
}

#[test]
fn simulate_is_deterministic_and_writes_a_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.json");
    let b = dir.path().join("nested/b.json");
    let out = run(&["simulate", "--seed", "3", "-o", path(&a)]);
    assert!(out.status.success(), "{}", text(&out.stderr));
    assert!(text(&out.stdout).contains("landmarks: 10"));
    assert!(run(&["simulate", "--seed", "3", "-o", path(&b)]).status.success());
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());

    let manifest = json(&dir.path().join("a.manifest.json"));
    assert_eq!(manifest["seeds"], serde_json::json!([3]));
    assert_eq!(manifest["config"]["world"]["seed"], 3);
    let kinds: Vec<&str> = manifest["artifacts"].as_array().unwrap().iter().map(|x| x["kind"].as_str().unwrap()).collect();
    assert!(kinds.contains(&"dataset") && kinds.contains(&"manifest"));

    // a rerun from the manifest reproduces the dataset
    let c = dir.path().join("c.json");
    let m = dir.path().join("a.manifest.json");
    assert!(run(&["simulate", "--config", path(&m), "-o", path(&c)]).status.success());
    assert_eq!(fs::read(&a).unwrap(), fs::read(&c).unwrap());
}

#[test]
fn noise_free_solve_recovers_ground_truth() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data.json");
    let sim = run(&[
        "simulate", "--seed", "1", "--bbox-sigma", "0", "--odo-sigma", "0", "--relpos-sigma", "0", "-o", path(&data),
    ]);
    assert!(sim.status.success(), "{}", text(&sim.stderr));
    let results = dir.path().join("out/results.json");
    let svg = dir.path().join("out/plot.svg");
    let out = run(&["solve", "-d", path(&data), "--mode", "with-relpos", "-o", path(&results), "--svg", path(&svg)]);
    assert!(out.status.success(), "{}", text(&out.stderr));
    let r = json(&results);
    assert!(r["result"]["rmse_pos_slam"].as_f64().unwrap() < 1e-6, "{}", r["result"]);
    assert!(r["result"]["rmse_lm"].as_f64().unwrap() < 1e-6, "{}", r["result"]);
    assert_eq!(r["quadrics"].as_array().unwrap().len(), 10);
    assert_eq!(r["poses"].as_array().unwrap().len(), 261);
    assert_eq!(fs::read_to_string(&svg).unwrap().matches("<polyline").count(), 3);
    assert!(dir.path().join("out/results.manifest.json").exists());
}

#[test]
fn evaluate_writes_outputs_and_reruns_from_its_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let first = dir.path().join("first");
    let out = run(&["evaluate", "-o", path(&first), "--n-trials", "2", "--base-seed", "30", "--jobs", "1"]);
    assert!(out.status.success(), "{}", text(&out.stderr));
    let csv = fs::read_to_string(first.join("results.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 5);
    assert!(lines[0].starts_with("seed,mode,rmse_pos_init,rmse_pos_slam"));
    assert!(lines[1].starts_with("30,monocular,") && lines[4].starts_with("31,with-relpos,"));
    let table = fs::read_to_string(first.join("summary.txt")).unwrap();
    assert!(table.contains("failures: 0"));
    let manifest = json(&first.join("manifest.json"));
    assert_eq!(manifest["seeds"], serde_json::json!([30, 31]));
    assert_eq!(json(&first.join("summary.json"))["summaries"].as_array().unwrap().len(), 2);

    let second = dir.path().join("second");
    let m = first.join("manifest.json");
    let out = run(&["evaluate", "--config", path(&m), "-o", path(&second), "--jobs", "2"]);
    assert!(out.status.success(), "{}", text(&out.stderr));
    assert_eq!(csv, fs::read_to_string(second.join("results.csv")).unwrap());
}

#[test]
fn invalid_values_exit_with_usage_status() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["simulate", "--n-landmarks", "0", "-o", path(&dir.path().join("x.json"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(text(&out.stderr).contains("n-landmarks"), "{}", text(&out.stderr));

    let out = run(&["evaluate", "-o", path(dir.path()), "--factor-bbox-sigma", "-1"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(text(&out.stderr).contains("factor-bbox-sigma"), "{}", text(&out.stderr));

    let out = run(&["simulate", "--no-such-flag"]);
    assert_eq!(out.status.code(), Some(2));

    let bad = dir.path().join("bad.json");
    fs::write(&bad, "{\"schema\": \"quadslam-dataset\"}").unwrap();
    let out = run(&["solve", "-d", path(&bad), "-o", path(&dir.path().join("r.json"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(text(&out.stderr).contains("bad.json"));
}
