use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn wncs(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_wncs"))
        .args(args)
        .env_remove("WNCS_RESULTS_DIR")
        .output()
        .expect("binary runs")
}

fn write(dir: &Path, name: &str, body: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, body).unwrap();
    p.to_str().unwrap().to_string()
}

fn json(out: &Output) -> serde_json::Value {
    serde_json::from_slice(&out.stdout).expect("stdout is json")
}

#[test]
fn unknown_field_is_config_error() {
    let d = tempfile::tempdir().unwrap();
    let cfg = write(d.path(), "bad.toml", "[env]\nbogus = 1\n");
    let out = wncs(&["run", &cfg, "--dry-run"]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("bogus") && err.contains("line 2"), "{err}");
}

#[test]
fn dry_run_prints_resolved_preset() {
    let d = tempfile::tempdir().unwrap();
    let cfg = write(d.path(), "c.toml", "[scenario]\npreset = \"desk2\"\n[train]\nseeds = 3\n");
    let out = wncs(&["run", &cfg, "--dry-run"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let v: toml::Value = toml::from_str(&text).unwrap();
    assert_eq!(v["network"]["n_nodes"].as_integer(), Some(2));
    assert_eq!(v["train"]["seeds"].as_integer(), Some(3));
    assert!(!d.path().join("results").exists());
}

#[test]
fn solve_matches_oracle_on_small_instance() {
    let d = tempfile::tempdir().unwrap();
    let cfg = write(d.path(), "c.toml", "[scenario]\npreset = \"desk2\"\n[network]\nn_nodes = 3\n");
    let solve = wncs(&["solve", &cfg]);
    let oracle = wncs(&["oracle", &cfg]);
    assert!(solve.status.success() && oracle.status.success());
    let (s, o) = (json(&solve), json(&oracle));
    let ps = s["total_power_w"].as_f64().unwrap();
    let po = o["total_power_w"].as_f64().unwrap();
    assert!(ps >= po * (1.0 - 1e-9) && ps <= po * 1.02, "solve {ps} oracle {po}");
    assert_eq!(s["allocation"]["nodes"].as_array().unwrap().len(), 3);
    assert!(s["total_utilization"].as_f64().unwrap() <= s["util_bound"].as_f64().unwrap());
}

#[test]
fn oracle_rejects_large_instance() {
    let d = tempfile::tempdir().unwrap();
    let cfg = write(d.path(), "c.toml", "[scenario]\npreset = \"desk\"\n");
    let out = wncs(&["oracle", &cfg]);
    assert!(!out.status.success());
    assert!(!String::from_utf8_lossy(&out.stderr).is_empty());
}

#[test]
fn plotdata_on_missing_dir_fails() {
    let d = tempfile::tempdir().unwrap();
    let missing = d.path().join("none");
    let out = wncs(&["plotdata", missing.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
}
