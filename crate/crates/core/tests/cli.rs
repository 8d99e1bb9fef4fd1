//! The `modlock` binary: outputs, provenance headers and exit codes.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn run(dir: &Path, config: Option<&str>, args: &[&str]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_modlock"));
    if let Some(text) = config {
        let path = dir.join("run.cfg");
        fs::write(&path, text).unwrap();
        cmd.arg("--config").arg(path);
    }
    cmd.arg("--out").arg(dir.join("out")).args(args);
    cmd.env_remove("MODLOCK_LOG").output().unwrap()
}

fn json(dir: &Path, name: &str) -> Value {
    serde_json::from_str(&fs::read_to_string(dir.join("out").join(name)).unwrap()).unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

#[test]
fn orbit_writes_sampled_cycle_and_multipliers() {
    let dir = TempDir::new().unwrap();
    let out = run(dir.path(), None, &["orbit"]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let csv = fs::read_to_string(dir.path().join("out/orbit.csv")).unwrap();
    let mut lines = csv.lines().filter(|l| !l.starts_with('#'));
    assert_eq!(lines.next(), Some("psi,x,r,p_x,p_r"));
    assert_eq!(lines.count(), 512);
    assert!(csv.starts_with("# modlock "));
    assert!(csv.lines().next().unwrap().contains("manifest_hash="));
    let o = json(dir.path(), "orbit.json");
    assert_eq!(o["hyperbolic"], Value::Bool(true));
    assert!((o["T"].as_f64().unwrap() - 4.549864610715).abs() < 1e-8);
    let m = json(dir.path(), "orbit.manifest.json");
    assert_eq!(m["command"], "orbit");
    assert_eq!(m["manifest_hash"], o["manifest_hash"]);
}

#[test]
fn gfun_reports_range_and_singular_points() {
    let dir = TempDir::new().unwrap();
    let out = run(dir.path(), None, &["gfun"]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let g = json(dir.path(), "gfun.json");
    assert!((g["G_minus"].as_f64().unwrap() + 1.958275).abs() < 1e-5);
    assert!((g["G_plus"].as_f64().unwrap() - 0.148797).abs() < 1e-5);
    assert_eq!(g["singular_points"].as_array().unwrap().len(), 2);
}

#[test]
fn outputs_are_reproducible() {
    let dir = TempDir::new().unwrap();
    let cfg = "model.family = vdp_laser\ncontrol.gamma = 4\n";
    assert_eq!(run(dir.path(), Some(cfg), &["--seed", "7", "gfun"]).status.code(), Some(0));
    let first = fs::read(dir.path().join("out/gfun.csv")).unwrap();
    assert_eq!(run(dir.path(), Some(cfg), &["--seed", "7", "gfun"]).status.code(), Some(0));
    assert_eq!(first, fs::read(dir.path().join("out/gfun.csv")).unwrap());
    assert_eq!(run(dir.path(), Some(cfg), &["--seed", "8", "gfun"]).status.code(), Some(0));
    assert_ne!(first, fs::read(dir.path().join("out/gfun.csv")).unwrap());
}

#[test]
fn region_section_has_curves_and_lines() {
    let dir = TempDir::new().unwrap();
    let out = run(dir.path(), None, &["region", "--n-points", "50"]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let csv = fs::read_to_string(dir.path().join("out/region.csv")).unwrap();
    assert!(csv.lines().filter(|l| !l.starts_with('#')).count() > 100);
}

#[test]
fn malformed_config_exits_2_naming_the_key() {
    let dir = TempDir::new().unwrap();
    let out = run(dir.path(), Some("model.family = vdp_laser\ncontrol.alpha = fast\n"), &["orbit"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("control.alpha"), "{}", stderr(&out));
    let out = run(dir.path(), Some("model.family = vdp_laser\nsweep.n_bta = 3\n"), &["orbit"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("sweep.n_bta"));
}

#[test]
fn bad_arguments_exit_2() {
    let dir = TempDir::new().unwrap();
    assert_eq!(run(dir.path(), None, &["spin"]).status.code(), Some(2));
    assert_eq!(run(dir.path(), None, &["--jobs", "x", "orbit"]).status.code(), Some(2));
}

#[test]
fn missing_cycle_exits_3() {
    let dir = TempDir::new().unwrap();
    let out = run(dir.path(), Some("model.family = vdp_laser\nmodel.eta = -0.5\n"), &["orbit"]);
    assert_eq!(out.status.code(), Some(3), "{}", stderr(&out));
}

#[test]
fn degenerate_singular_points_exit_4() {
    let dir = TempDir::new().unwrap();
    let out = run(dir.path(), Some("model.family = vdp_laser\nregion.nondeg_tol = 100\n"), &["gfun"]);
    assert_eq!(out.status.code(), Some(4), "{}", stderr(&out));
}

#[test]
fn strong_forcing_refused_by_validate_exits_4() {
    let dir = TempDir::new().unwrap();
    let out = run(dir.path(), Some("model.family = vdp_laser\ncontrol.gamma = 40\n"), &["validate", "--no-boundary"]);
    assert_eq!(out.status.code(), Some(4), "{}", stderr(&out));
}

#[test]
fn failed_integration_exits_5() {
    let dir = TempDir::new().unwrap();
    let cfg = "model.family = vdp_laser\nnumeric.sim_rtol = 1e-300\nnumeric.sim_atol = 1e-300\n";
    let out = run(dir.path(), Some(cfg), &["simulate"]);
    assert_eq!(out.status.code(), Some(5), "{}", stderr(&out));
}

#[test]
fn log_level_follows_the_environment() {
    let dir = TempDir::new().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_modlock"))
        .arg("--out")
        .arg(dir.path())
        .arg("orbit")
        .env("MODLOCK_LOG", "debug")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
    assert!(stderr(&out).contains("DEBUG") || stderr(&out).contains("INFO"), "{}", stderr(&out));
}
