use std::path::Path;
use std::process::{Command, Output};

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_shrinkerlab")).args(args).output().unwrap()
}

fn write_config(dir: &Path, body: &str) -> String {
    let path = dir.join("run.toml");
    let out = dir.join("out").display().to_string().replace('\\', "/");
    std::fs::write(&path, format!("{body}\n[output]\ndir = \"{out}\"\n")).unwrap();
    path.display().to_string()
}

#[test]
fn check_exit_status_follows_strict_failures() {
    let dir = tempfile::tempdir().unwrap();
    let ok = write_config(dir.path(), "[[models]]\nkind = \"cylinder\"\nn = 3\nk = 2\n");
    let out = run(&["--config", &ok, "check", "geometry"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stdout));
    assert!(dir.path().join("out/report.json").exists());

    // an unattainable identity tolerance turns round-off into strict failures
    let bad = write_config(dir.path(), "[[models]]\nkind = \"cylinder\"\nn = 3\nk = 2\n[tolerances]\nidentity = 1e-300\n");
    let out = run(&["--config", &bad, "check", "geometry"]);
    assert_eq!(out.status.code(), Some(1), "{}", String::from_utf8_lossy(&out.stdout));
    assert!(String::from_utf8_lossy(&out.stdout).contains("FAIL"));
}

#[test]
fn config_errors_are_reported() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "suites = [\"volumes\"]");
    let out = run(&["--config", &cfg, "check", "all"]);
    assert_eq!(out.status.code(), Some(2));
    let msg = String::from_utf8_lossy(&out.stderr);
    assert!(msg.contains("volumes") && msg.contains("collapsing"), "{msg}");

    let cfg = write_config(dir.path(), "seed = 1\nseeds = 2");
    let out = run(&["--config", &cfg, "catalog"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 2"));
}

#[test]
fn point_queries() {
    let out = run(&["heat-kernel", "--model", "gaussian:3", "--x", "0,1", "--t", "0.5", "--y", "0,0", "--s", "-0.5"]);
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let exact = (4.0 * std::f64::consts::PI).powf(-1.5) * (-0.25f64).exp();
    assert!((v["value"].as_f64().unwrap() / exact - 1.0).abs() < 1e-10);

    let dir = tempfile::tempdir().unwrap();
    let trace = dir.path().join("path.csv");
    let out = run(&[
        "reduced-distance", "--model", "cylinder:4:2", "--x", "1.0,0.5", "--t", "0.5", "--y", "0,0", "--s", "-0.5",
        "--trace", trace.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).starts_with("l = "));
    assert!(std::fs::read_to_string(&trace).unwrap().lines().count() > 10);

    let out = run(&["catalog"]);
    assert_eq!(String::from_utf8_lossy(&out.stdout).lines().count(), 9);
}
