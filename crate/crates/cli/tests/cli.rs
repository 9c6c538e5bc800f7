use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

const SCALAR_GBS: &str = r#"{"alphabet":["a"],"dim":1,"weights":{"a":1.0},"A":{"a":[[0.5]]},"K":{"a":[[1.0]]},"C":[[1.0]],"D":[[1.0]],"Q":{"a":[[1.0]]}}"#;

const SCALED_GBS: &str = r#"{"alphabet":["a"],"dim":1,"weights":{"a":1.0},"A":{"a":[[0.5]]},"K":{"a":[[2.0]]},"C":[[0.5]],"D":[[1.0]],"Q":{"a":[[1.0]]}}"#;

const UNSTABLE_GBS: &str = r#"{"alphabet":["a"],"dim":1,"weights":{"a":1.0},"A":{"a":[[1.2]]},"K":{"a":[[1.0]]},"C":[[1.0]],"D":[[1.0]],"Q":{"a":[[1.0]]}}"#;

const TWO_MODE: &str = r#"{"states":2,"P":[[0.9,0.1],[0.2,0.8]],"dims":[1,1],
 "M":{"1,1":[[0.5]],"1,2":[[-0.4]],"2,1":[[0.3]],"2,2":[[0.6]]},
 "B":{"1,1":[[1.0]],"1,2":[[0.5]],"2,1":[[0.7]],"2,2":[[1.0]]},
 "C":{"1":[[1.0]],"2":[[-0.8]]},"D":{"1":[[1.0]],"2":[[0.6]]},"Q":{"1":[[0.6666666666666666]],"2":[[0.3333333333333333]]}}"#;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_jmls-realize"));
    c.env_remove("JMLS_REALIZE_THREADS");
    c
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

fn run(args: &[&str], dir: &Path) -> Output {
    bin().current_dir(dir).args(args).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn read_json(p: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

#[test]
fn simulate_writes_rows_and_reports_radius() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "g.json", SCALAR_GBS);
    let o = run(&["simulate", "--model", "g.json", "-T", "1000", "--out", "y.csv"], dir.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(dir.path().join("y.csv")).unwrap();
    assert_eq!(text.lines().count(), 1001);
    assert!(String::from_utf8_lossy(&o.stderr).contains("spectral radius 0.25"));
}

#[test]
fn malformed_json_exits_2_with_position() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "bad.json", "{\"alphabet\": [\"a\",\n  }");
    let o = run(&["simulate", "--model", "bad.json", "-T", "10"], dir.path());
    assert_eq!(code(&o), 2);
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("line 2") && err.contains("column"), "{err}");
}

#[test]
fn unstable_model_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "u.json", UNSTABLE_GBS);
    let o = run(&["simulate", "--model", "u.json", "-T", "10"], dir.path());
    assert_eq!(code(&o), 3);
}

#[test]
fn stability_check_holds_and_fails() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "g.json", SCALAR_GBS);
    write(dir.path(), "u.json", UNSTABLE_GBS);
    let o = run(&["check", "--model", "g.json", "--stability", "--json"], dir.path());
    assert_eq!(code(&o), 0);
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["spectral_radius"], 0.25);
    assert_eq!(v["holds"], true);
    let o = run(&["check", "--model", "u.json", "--stability"], dir.path());
    assert_eq!(code(&o), 1);
}

#[test]
fn minimality_of_gjmls() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "h.json", TWO_MODE);
    let o = run(&["check", "--model", "h.json", "--minimality", "--json"], dir.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["reachable"], true);
    assert_eq!(v["observable"], true);
}

#[test]
fn identify_scalar_from_simulation() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "g.json", SCALAR_GBS);
    let o = run(&["--seed", "11", "simulate", "--model", "g.json", "-T", "100000", "--out", "y.csv"], dir.path());
    assert_eq!(code(&o), 0);
    let o = run(&["identify", "--data", "y.csv", "-n", "1", "-N", "3", "--out", "w.json", "--diagnostics", "d.json"], dir.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let w = read_json(&dir.path().join("w.json"));
    let a = w["A"]["a"][0][0].as_f64().unwrap();
    assert!((a - 0.5).abs() < 0.1, "A = {a}");
    let d = read_json(&dir.path().join("d.json"));
    assert!(d["hankel_singular_values"].as_array().unwrap().len() >= 2);
    assert!(d["sample_counts"].is_object());
}

#[test]
fn oversized_dimension_on_exact_data_exits_4() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "g.json", SCALAR_GBS);
    let o = run(&["estimate-cov", "--model", "g.json", "--lambda-len", "12", "--tee-len", "3", "--out", "t.json"], dir.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let o = run(&["identify", "--exact-cov", "t.json", "-n", "5", "-N", "3"], dir.path());
    assert_eq!(code(&o), 4);
    assert!(String::from_utf8_lossy(&o.stderr).contains("RankDeficient"));
}

#[test]
fn exact_covariance_identify_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "g.json", SCALAR_GBS);
    run(&["estimate-cov", "--model", "g.json", "--lambda-len", "4", "--tee-len", "6", "--out", "t.json"], dir.path());
    let a = run(&["identify", "--exact-cov", "t.json", "-n", "1", "-N", "6", "--quiet"], dir.path());
    let b = run(&["identify", "--exact-cov", "t.json", "-n", "1", "-N", "6", "--quiet"], dir.path());
    assert_eq!(code(&a), 0);
    assert_eq!(a.stdout, b.stdout);
    let v: Value = serde_json::from_slice(&a.stdout).unwrap();
    assert!((v["A"]["a"][0][0].as_f64().unwrap() - 0.5).abs() < 1e-12);
}

#[test]
fn simulation_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "h.json", TWO_MODE);
    let a = run(&["--seed", "5", "simulate", "--model", "h.json", "-T", "500"], dir.path());
    let b = run(&["--seed", "5", "simulate", "--model", "h.json", "-T", "500"], dir.path());
    let c = run(&["--seed", "6", "simulate", "--model", "h.json", "-T", "500"], dir.path());
    assert_eq!(code(&a), 0);
    assert_eq!(a.stdout, b.stdout);
    assert_ne!(a.stdout, c.stdout);
    assert!(String::from_utf8_lossy(&a.stdout).starts_with("t,y_1,theta\n"));
}

#[test]
fn compare_finds_change_of_basis() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "g.json", SCALAR_GBS);
    write(dir.path(), "s.json", SCALED_GBS);
    let o = run(&["compare", "g.json", "s.json", "--json"], dir.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    let t = v["T"][0][0][0].as_f64().unwrap();
    assert!((t - 2.0).abs() < 1e-9, "T = {t}");
    write(dir.path(), "u.json", &SCALAR_GBS.replace("[[0.5]]", "[[0.4]]"));
    assert_eq!(code(&run(&["compare", "g.json", "u.json"], dir.path())), 1);
}

#[test]
fn convert_roundtrip_preserves_covariances() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "h.json", TWO_MODE);
    let o = run(&["convert", "--model", "h.json", "--to-gbs", "--out", "g.json", "--json"], dir.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let v: Value = serde_json::from_slice(&o.stderr).unwrap();
    assert!(v["covariance_difference"].as_f64().unwrap() < 1e-9);
    let o = run(&["convert", "--model", "g.json", "--to-gjmls", "--out", "back.json", "--json"], dir.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let v: Value = serde_json::from_slice(&o.stderr).unwrap();
    assert!(v["covariance_difference"].as_f64().unwrap() < 1e-9);
    let o = run(&["compare", "h.json", "back.json"], dir.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stdout));
}

#[test]
fn thread_cap_does_not_change_output() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "h.json", TWO_MODE);
    run(&["simulate", "--model", "h.json", "-T", "3000", "--out", "y.csv"], dir.path());
    let args = ["estimate-cov", "--data", "y.csv", "--lambda-len", "4", "--tee-len", "2", "--quiet"];
    let par = run(&args, dir.path());
    let ser = bin().current_dir(dir.path()).env("JMLS_REALIZE_THREADS", "0").args(args).output().unwrap();
    assert_eq!(code(&par), 0);
    assert_eq!(par.stdout, ser.stdout);
}
