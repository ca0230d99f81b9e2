use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn flfl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_flfl")).args(args).output().expect("binary runs")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn synth(dir: &Path, kind: &str) -> (PathBuf, PathBuf) {
    let m = dir.join("m.csv");
    let c = dir.join("c.csv");
    let out = flfl(&["synth", "--kind", kind, "--out-matrix", s(&m), "--out-coords", s(&c), "--sensors", "16", "--slots", "20"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    (m, c)
}

#[test]
fn train_prints_summary_and_writes_factors() {
    let dir = tempfile::tempdir().unwrap();
    let (m, c) = synth(dir.path(), "low-rank");
    let f = dir.path().join("f.json");
    let out = flfl(&[
        "train", "--matrix", s(&m), "--coords", s(&c), "--rank", "3", "--lambda", "0.001", "--max-rounds", "50",
        "--out-factors", s(&f),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let summary: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(summary["rounds"], 50);
    assert!(summary["test_rmse"].as_f64().unwrap().is_finite());
    let factors: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&f).unwrap()).unwrap();
    assert_eq!(factors["p"].as_array().unwrap().len(), 16);
    assert_eq!(factors["q"].as_array().unwrap().len(), 20);
    assert_eq!(factors["q"][0].as_array().unwrap().len(), 3);
}

#[test]
fn flags_override_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let (m, c) = synth(dir.path(), "low-rank");
    let cfg = dir.path().join("run.cfg");
    std::fs::write(&cfg, format!("# comment\nmatrix = {}\ncoords = {}\nrank = 2\nmax-rounds = 7\n", s(&m), s(&c))).unwrap();
    let f = dir.path().join("f.json");
    let out = flfl(&["train", "--config", s(&cfg), "--max-rounds", "3", "--out-factors", s(&f)]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let summary: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(summary["rounds"], 3);
    let factors: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&f).unwrap()).unwrap();
    assert_eq!(factors["p"][0].as_array().unwrap().len(), 2);
}

#[test]
fn unknown_config_key_is_an_input_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.cfg");
    std::fs::write(&cfg, "rnak = 3\n").unwrap();
    let out = flfl(&["train", "--config", s(&cfg)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("rnak"));
}

#[test]
fn missing_input_file_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let nope = dir.path().join("nope.csv");
    let out = flfl(&["train", "--matrix", s(&nope), "--coords", s(&nope)]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn invalid_hyperparameter_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let (m, c) = synth(dir.path(), "low-rank");
    let out = flfl(&["train", "--matrix", s(&m), "--coords", s(&c), "--rank", "0"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn divergence_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let (m, c) = synth(dir.path(), "smooth");
    let out = flfl(&["train", "--matrix", s(&m), "--coords", s(&c), "--eta", "50"]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn sweep_without_timing_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let (m, c) = synth(dir.path(), "smooth");
    let run = |name: &str| {
        let report = dir.path().join(name);
        let out = flfl(&[
            "sweep", "--matrix", s(&m), "--coords", s(&c), "--rates", "0.3,0.8", "--repeats", "2", "--max-rounds",
            "40", "--normalize", "zscore", "--report", s(&report), "--no-timing",
        ]);
        assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
        std::fs::read_to_string(report).unwrap()
    };
    let a = run("a.csv");
    assert_eq!(a, run("b.csv"));
    assert_eq!(a.lines().count(), 5);
    assert!(a.starts_with("rate,model,mean_rmse,std_rmse,rounds,seconds"));
}

#[test]
fn graph_emits_laplacians() {
    let dir = tempfile::tempdir().unwrap();
    let (_, c) = synth(dir.path(), "smooth");
    let out = flfl(&["graph", "--coords", s(&c), "--regions", "2", "--topk", "2"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let graphs: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let graphs = graphs.as_array().unwrap();
    assert_eq!(graphs.len(), 2);
    let members: usize = graphs.iter().map(|g| g["members"].as_array().unwrap().len()).sum();
    assert_eq!(members, 16);
    for g in graphs {
        for row in g["lap"].as_array().unwrap() {
            let sum: f64 = row.as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).sum();
            assert!(sum.abs() < 1e-9);
        }
    }
}
