mod common;

use std::path::Path;
use std::process::{Command, Output};

fn chernlab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_chernlab")).args(args).env_remove("CHERNLAB_OUT").output().unwrap()
}

fn write_config(dir: &Path, body: &str) -> String {
    let p = dir.join("cfg.toml");
    std::fs::write(&p, body).unwrap();
    p.to_str().unwrap().to_string()
}

const TORUS: &str = "seed = 3\ntarget = \"fs_product\"\ndomain.kind = \"torus\"\ndomain.n = 16\n\
map.kind = \"constant\"\nmap.value = [0.5, 0.0, 0.2, 0.1]\n";

#[test]
fn missing_key_exits_1_and_names_it() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "seed = 1\ndomain.kind = \"torus\"\ndomain.n = 8\n");
    let o = chernlab(&["solve", "--config", &cfg, "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("`target`"));
}

#[test]
fn unknown_key_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &format!("{TORUS}flow.dtt = 0.1\n"));
    let o = chernlab(&["solve", "--config", &cfg, "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("flow.dtt"));
}

#[test]
fn unknown_suite_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), TORUS);
    let o = chernlab(&["verify", "curvature", "--config", &cfg, "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("curvature"));
}

#[test]
fn usage_error_exits_1() {
    assert_eq!(chernlab(&["solve"]).status.code(), Some(1));
    assert_eq!(chernlab(&["frobnicate"]).status.code(), Some(1));
}

#[test]
fn solve_then_snapshot_info() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let cfg = write_config(dir.path(), TORUS);
    let o = chernlab(&["solve", "--config", &cfg, "--out", out.to_str().unwrap(), "--seed", "9"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["results.json", "solution.snap", "tables/solve_history.csv"] {
        assert!(out.join(f).exists(), "{f}");
    }
    let results: serde_json::Value = serde_json::from_slice(&std::fs::read(out.join("results.json")).unwrap()).unwrap();
    assert_eq!(results["seed"], 9);
    assert_eq!(results["command"], "solve");

    let info = chernlab(&["snapshot-info", out.join("solution.snap").to_str().unwrap()]);
    assert!(info.status.success());
    let header: serde_json::Value = serde_json::from_slice(&info.stdout).unwrap();
    assert_eq!(header["points"], 256);
}

#[test]
fn snapshot_info_on_garbage_fails() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("bad.snap");
    std::fs::write(&p, b"not a snapshot").unwrap();
    let o = chernlab(&["snapshot-info", p.to_str().unwrap()]);
    assert!(!o.status.success());
}

#[test]
fn out_dir_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("env_out");
    let cfg = write_config(dir.path(), TORUS);
    let o = Command::new(env!("CARGO_BIN_EXE_chernlab"))
        .args(["solve", "--config", &cfg])
        .env("CHERNLAB_OUT", &out)
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(out.join("results.json").exists());
}

#[test]
fn fixed_seed_gives_identical_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "seed = 5\ntarget = \"hopf\"\ndomain.kind = \"disk\"\ndomain.n = 32\n\
         map.kind = \"random_trig\"\nmap.base = [1.0, 0.5, 0.5, 0.0]\nmap.amplitude = 0.1\nmap.modes = 2\n\
         flow.dt = 0.2\nflow.tol = 1e-8\nflow.max_steps = 50\n",
    );
    let mut runs = vec![];
    for name in ["a", "b"] {
        let out = dir.path().join(name);
        let o = chernlab(&["solve", "--config", &cfg, "--out", out.to_str().unwrap()]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        let mut results: serde_json::Value = serde_json::from_slice(&std::fs::read(out.join("results.json")).unwrap()).unwrap();
        results.as_object_mut().unwrap().remove("timestamp");
        runs.push((
            results,
            std::fs::read(out.join("solution.snap")).unwrap(),
            std::fs::read(out.join("tables/solve_history.csv")).unwrap(),
        ));
    }
    assert_eq!(runs[0], runs[1]);
}
