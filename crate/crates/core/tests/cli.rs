//! Exit codes and output files of the `mazt` binary.

use std::path::Path;
use std::process::Command;

fn run(kind: &str, config: &str, dir: &Path) -> (i32, String) {
    let cfg = dir.join("scenario.toml");
    std::fs::write(&cfg, config).unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_mazt"))
        .arg(kind)
        .arg("--config")
        .arg(&cfg)
        .arg("--threads")
        .arg("2")
        .arg("--out")
        .arg(dir.join("out"))
        .output()
        .unwrap();
    (out.status.code().unwrap(), String::from_utf8_lossy(&out.stderr).into_owned())
}

#[test]
fn passing_envelope_exits_zero_and_writes_summary() {
    let dir = tempfile::tempdir().unwrap();
    let (code, stderr) = run("envelope", "n = 32\nbackground = \"1+2*cos(2*pi*x)\"\n", dir.path());
    assert_eq!(code, 0, "{stderr}");
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("out/summary.json")).unwrap()).unwrap();
    assert_eq!(summary["all_pass"], true);
    assert_eq!(summary["n"], 32);
    assert!(dir.path().join("out/u_theta.field").exists());
}

#[test]
fn malformed_config_exits_four_with_location() {
    let dir = tempfile::tempdir().unwrap();
    let (code, stderr) = run("envelope", "n = 32\nbackground = \n", dir.path());
    assert_eq!(code, 4);
    assert!(stderr.contains("line 2"), "{stderr}");
}

#[test]
fn invalid_values_exit_four() {
    let dir = tempfile::tempdir().unwrap();
    // unknown key
    let (code, _) = run("envelope", "n = 32\nbackground = \"1\"\ncolour = 3\n", dir.path());
    assert_eq!(code, 4);
    // beta must exceed one
    let (code, stderr) = run("solve", "n = 32\nbackground = \"1\"\nbeta = [0.5]\n", dir.path());
    assert_eq!(code, 4);
    assert!(stderr.contains("beta"), "{stderr}");
    // geodesic without a divisor
    let (code, stderr) = run("geodesic", "n = 16\nbackground = \"1\"\nc = 0.5\nbeta = [16]\n", dir.path());
    assert_eq!(code, 4);
    assert!(stderr.contains("divisor"), "{stderr}");
}

#[test]
fn solver_failure_exits_three() {
    let dir = tempfile::tempdir().unwrap();
    // total mass zero: the class is not Kahler
    let (code, stderr) = run("envelope", "n = 16\nbackground = \"cos(2*pi*x)\"\n", dir.path());
    assert_eq!(code, 3, "{stderr}");
}
