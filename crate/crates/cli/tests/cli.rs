//! End-to-end checks of the `oscar` binary.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use oscar_core::config::ExperimentConfig;
use oscar_core::io::{RunManifest, MANIFEST_NAME};

fn oscar(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_oscar")).args(args).output().expect("spawn oscar")
}

fn write_config(dir: &Path, body: &str) -> String {
    let path = dir.join("run.cfg");
    fs::write(&path, body).unwrap();
    path.to_str().unwrap().to_owned()
}

#[test]
fn profile_writes_critical_points() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("profile.json");
    let res = oscar(&["profile", "--n", "128", "--out", out.to_str().unwrap()]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let value: serde_json::Value = serde_json::from_slice(&fs::read(&out).unwrap()).unwrap();
    let text = value.to_string();
    assert!(text.contains("critical"), "{text}");
}

#[test]
fn bench_without_sweeps_writes_complete_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "[profile]\nfamily = \"kolmogorov\"\nperiod = 8.0\n\n[grid]\nn = 64\n");
    let run = dir.path().join("run");
    let res = oscar(&["bench", "--config", &cfg, "--out", run.to_str().unwrap()]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let manifest = RunManifest::read(&run.join(MANIFEST_NAME)).unwrap();
    assert!(manifest.complete);
    assert!(manifest.error.is_none());
    assert!(manifest.artifacts.is_empty());
    assert_eq!(manifest.grid.n, 64);
}

#[test]
fn missing_period_is_reported_by_field() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "[profile]\nfamily = \"kolmogorov\"\n\n[grid]\nn = 64\n");
    let res = oscar(&["bench", "--config", &cfg, "--out", dir.path().join("run").to_str().unwrap()]);
    assert_eq!(res.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&res.stderr);
    assert!(stderr.contains("profile.period"), "{stderr}");
}

#[test]
fn evolve_both_routes_agree() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("evolve");
    let res = oscar(&[
        "evolve", "--n", "128", "--route", "both", "--nu", "1e-3", "--t", "0:0.5:2", "--out",
        run.to_str().unwrap(),
    ]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let manifest: serde_json::Value = serde_json::from_slice(&fs::read(run.join(MANIFEST_NAME)).unwrap()).unwrap();
    let diff = manifest["route_difference"].as_f64().expect("difference recorded");
    assert!(diff < 1e-4, "routes differ by {diff}");
    assert!(run.join("omega_direct.bin").exists());
    assert!(run.join("omega_contour.bin").exists());
}

#[test]
fn shipped_bench_config_parses() {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/bench_kolmogorov.cfg");
    let cfg = ExperimentConfig::from_path(&path).unwrap();
    assert_eq!(cfg.evolution.routes.len(), 2);
    assert_eq!(cfg.depletion.nu.len(), 4);
    assert_eq!(cfg.rates.window, [5.0, 50.0]);
}
