use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_minaction"));
    c.env_remove("MINACTION_SEED");
    c
}

fn run(dir: &Path, args: &[&str]) -> Output {
    bin().current_dir(dir).args(args).output().unwrap()
}

fn ok(dir: &Path, args: &[&str]) -> Output {
    let out = run(dir, args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn json(path: &Path) -> Value {
    serde_json::from_slice(&fs::read(path).unwrap()).unwrap()
}

#[test]
fn usage_errors_exit_two_and_write_nothing() {
    let dir = tempfile::tempdir().unwrap();
    for args in [
        vec!["generate", "--bogus", "--out", "x.json"],
        vec!["frobnicate"],
        vec!["train", "--preset", "nope", "--out", "r"],
        vec!["sweep", "--seeds", "9..1"],
    ] {
        assert_eq!(run(dir.path(), &args).status.code(), Some(2), "{args:?}");
    }
    fs::write(dir.path().join("bad.json"), r#"{"generator": {"n_orbit": 3}}"#).unwrap();
    let out = run(dir.path(), &["generate", "--config", "bad.json", "--out", "d.json"]);
    assert_eq!(out.status.code(), Some(2));
    let names: Vec<_> = fs::read_dir(dir.path()).unwrap().map(|e| e.unwrap().file_name()).collect();
    assert_eq!(names, vec!["bad.json"]);
}

#[test]
fn domain_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(dir.path(), &["validate", "--model", "missing.json", "--data", "missing.json"]);
    assert_eq!(out.status.code(), Some(2));
    let out = run(dir.path(), &["noise-table", "--samples", "10"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(!out.stderr.is_empty());
}

#[test]
fn noise_table_matches_reference_values() {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["noise-table", "--out", "noise.csv"]);
    let mut rdr = csv::Reader::from_path(dir.path().join("noise.csv")).unwrap();
    let expected = [(1, 15.7), (5, 0.63), (10, 0.16), (20, 0.039)];
    let rows: Vec<csv::StringRecord> = rdr.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 4);
    for (row, (s, sigma)) in rows.iter().zip(expected) {
        assert_eq!(row[0].parse::<usize>().unwrap(), s);
        let emp: f64 = row[4].parse().unwrap();
        assert!((emp / sigma - 1.0).abs() < 0.05, "s={s}: {emp}");
    }
}

#[test]
fn generate_is_reproducible_and_seeded_by_precedence() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["generate", "--n-orbits", "4", "--seed", "3", "--out", "a.json"]);
    ok(d, &["generate", "--n-orbits", "4", "--seed", "3", "--out", "b.json"]);
    assert_eq!(fs::read(d.join("a.json")).unwrap(), fs::read(d.join("b.json")).unwrap());

    let a = json(&d.join("a.json"));
    assert_eq!(a["seed"], 3);
    assert_eq!(a["run_config"]["seed"], 3);
    assert_eq!(a["orbits"].as_array().unwrap().len(), 4);
    assert!(a["orbits"][0]["noisy_positions"].is_array());

    fs::write(d.join("cfg.json"), serde_json::to_vec(&a["run_config"]).unwrap()).unwrap();
    ok(d, &["generate", "--config", "cfg.json", "--out", "c.json"]);
    assert_eq!(fs::read(d.join("a.json")).unwrap(), fs::read(d.join("c.json")).unwrap());

    let env = bin().current_dir(d).env("MINACTION_SEED", "5").args(["generate", "--config", "cfg.json", "--out", "e.json"]).output().unwrap();
    assert!(env.status.success());
    assert_eq!(json(&d.join("e.json"))["seed"], 5);
    let flag = bin()
        .current_dir(d)
        .env("MINACTION_SEED", "5")
        .args(["generate", "--config", "cfg.json", "--seed", "6", "--out", "f.json"])
        .output()
        .unwrap();
    assert!(flag.status.success());
    assert_eq!(json(&d.join("f.json"))["seed"], 6);

    ok(d, &["generate", "--system", "hooke", "--n-orbits", "4", "--out", "h.json"]);
    let h = json(&d.join("h.json"));
    assert_eq!(h["config"]["generator"]["system"], "hooke");
    assert_eq!(h["run_config"]["preset"], "hooke-default");
}

#[test]
fn train_then_validate_recovers_kepler_exponent() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["generate", "--seed", "0", "--out", "data.json"]);
    ok(d, &["train", "--data", "data.json", "--preset", "biased-init", "--seed", "0", "--out", "run0", "-q"]);
    for f in ["model.json", "trainlog.csv", "milestones.json"] {
        assert!(d.join("run0").join(f).exists(), "{f}");
    }
    let log = fs::read_to_string(d.join("run0/trainlog.csv")).unwrap();
    assert_eq!(log.lines().count(), 201);
    ok(d, &["validate", "--model", "run0/model.json", "--data", "data.json"]);
    let v = json(&d.join("run0/validate.json"));
    assert_eq!(v["basis"], "r^-2");
    let p = v["p"].as_f64().unwrap();
    assert!((2.95..=3.05).contains(&p), "{p}");
    assert!(v["theta_opt"].as_f64().is_some() && v["sigma_H"].as_f64().is_some() && v["C"].as_f64().is_some());
    assert_eq!(v["run_config"]["preset"], "biased-init");

    let m = json(&d.join("run0/milestones.json"));
    fs::write(d.join("cfg.json"), serde_json::to_vec(&m["run_config"]).unwrap()).unwrap();
    ok(d, &["train", "--data", "data.json", "--config", "cfg.json", "--epochs", "55", "--out", "r1", "-q"]);
    ok(d, &["train", "--data", "data.json", "--config", "cfg.json", "--epochs", "55", "--out", "r2", "-q"]);
    for f in ["model.json", "trainlog.csv", "milestones.json"] {
        assert_eq!(fs::read(d.join("r1").join(f)).unwrap(), fs::read(d.join("r2").join(f)).unwrap(), "{f}");
    }
}

#[test]
fn sweep_select_sindy_and_report() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["generate", "--seed", "0", "--n-orbits", "8", "--out", "data.json"]);
    ok(d, &["sweep", "--data", "data.json", "--preset", "biased-init", "--seeds", "0,1", "--epochs", "80", "--jobs", "2", "--out", "sw"]);
    let s = json(&d.join("sw/sweep.json"));
    assert_eq!(s["seeds"], serde_json::json!([0, 1]));
    assert_eq!(s["result"]["seeds"].as_array().unwrap().len(), 2);
    assert_eq!(s["result"]["candidates"].as_array().unwrap().len(), 5);
    assert!(d.join("sw/seed_1/model.json").exists());

    ok(d, &["select", "--sweep", "sw/sweep.json"]);
    let sel = json(&d.join("sw/select.json"));
    assert!(sel["verdict"]["basis"].is_string());
    assert!(sel["run_config"].is_object());

    ok(d, &["sindy", "--data", "data.json", "--seeds", "0..2", "--out", "sw/sindy.json"]);
    let sy = json(&d.join("sw/sindy.json"));
    assert_eq!(sy["rows"].as_array().unwrap().len(), 3);
    assert_eq!(sy["target_basis"], "r^-2");

    ok(d, &["report", "--dir", "sw"]);
    let md = fs::read_to_string(d.join("sw/report.md")).unwrap();
    assert!(md.contains("| seed |") && md.contains("Sparse regression"));
    let loss = fs::read_to_string(d.join("sw/loss_curves.csv")).unwrap();
    assert_eq!(loss.lines().count(), 1 + 2 * 80);
    let gates = fs::read_to_string(d.join("sw/gate_evolution.csv")).unwrap();
    assert!(gates.starts_with("seed,epoch,tau,selectivity,c_gate,gate[r^-2]"));
    assert_eq!(fs::read_to_string(d.join("sw/phase.csv")).unwrap().lines().count(), 81);
}

#[test]
fn gradcheck_passes_on_generated_data() {
    let dir = tempfile::tempdir().unwrap();
    let out = ok(dir.path(), &["gradcheck", "--seeds", "0", "--points", "2", "--out", "g.json"]);
    assert!(String::from_utf8_lossy(&out.stdout).contains("ok"));
    let g = json(&dir.path().join("g.json"));
    assert_eq!(g["passed"], true);
    assert!(g["max_rel_error"].as_f64().unwrap() < 1e-4);
}
