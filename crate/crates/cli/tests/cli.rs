mod support;

use std::fs;
use std::process::Command;

use support::{run, run_ok, tree, BIN};
use tempfile::tempdir;

#[test]
fn scenegen_is_reproducible() {
    let (a, b) = (tempdir().unwrap(), tempdir().unwrap());
    let args = ["scenegen", "--count", "3", "--seed", "11", "--height", "16", "--out", "s"];
    let ra = run_ok(a.path(), &args);
    let rb = run_ok(b.path(), &args);
    assert_eq!(ra, rb);
    let ta = tree(a.path());
    assert_eq!(ta.len(), 7, "{:?}", ta.keys());
    assert_eq!(ta, tree(b.path()));
}

#[test]
fn faed_of_identical_stats_is_zero() {
    let dir = tempdir().unwrap();
    let d = dir.path();
    run_ok(d, &["scenegen", "--count", "3", "--height", "32", "--out", "s"]);
    run_ok(d, &["faed-train", "--manifest", "s/manifest.toml", "--steps", "2", "--batch", "2", "--out", "ae.bin"]);
    run_ok(d, &["faed-stats", "--weights", "ae.bin", "--manifest", "s/manifest.toml", "--out", "a.toml"]);
    let report: toml::Table = run_ok(d, &["faed", "--stats-a", "a.toml", "--stats-b", "a.toml"]).parse().unwrap();
    let distance = report["result"]["distance"].as_float().unwrap();
    assert!(distance.abs() < 1e-6, "{distance}");
    assert_eq!(report["command"].as_str(), Some("faed"));
    assert_eq!(report["threads"].as_integer(), Some(1));
}

#[test]
fn usage_errors_exit_with_one() {
    let dir = tempdir().unwrap();
    for args in [
        &["no-such-command"][..],
        &["scenegen", "--count", "many", "--out", "x"],
        &["scenegen"],
        &["corrupt", "--manifest", "m.toml", "--kind", "fog", "--level", "1", "--target", "rgb", "--out", "x"],
        &["scenegen", "--count", "1", "--height", "0", "--out", "x"],
    ] {
        let out = run(dir.path(), args);
        assert_eq!(out.status.code(), Some(1), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    }
}

#[test]
fn runtime_errors_exit_with_two() {
    let dir = tempdir().unwrap();
    let out = run(dir.path(), &["layoutdepth", "--manifest", "missing.toml", "--out", "x"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing.toml"));
    fs::write(dir.path().join("bad.toml"), "not = [valid").unwrap();
    let out = run(dir.path(), &["faed", "--stats-a", "bad.toml", "--stats-b", "bad.toml"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn help_exits_cleanly() {
    let out = Command::new(BIN).arg("--help").output().unwrap();
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8_lossy(&out.stdout);
    for cmd in ["scenegen", "maskgen", "layoutdepth", "corrupt", "faed-train", "faed-stats", "metrics", "bips-train", "bips-infer", "verify-faed"] {
        assert!(text.contains(cmd), "{cmd} missing from help");
    }
}

#[test]
fn thread_count_comes_from_the_environment() {
    let dir = tempdir().unwrap();
    let go = |threads: &str| {
        Command::new(BIN)
            .current_dir(dir.path())
            .env("PANORAD_THREADS", threads)
            .args(["maskgen", "--out", "m"])
            .output()
            .unwrap()
    };
    let out = go("2");
    assert!(out.status.success());
    let report: toml::Table = String::from_utf8(out.stdout).unwrap().parse().unwrap();
    assert_eq!(report["threads"].as_integer(), Some(2));
    assert_eq!(go("0").status.code(), Some(1));
    assert_eq!(go("lots").status.code(), Some(1));
}

#[test]
fn manifest_with_no_entries_is_rejected() {
    let dir = tempdir().unwrap();
    fs::write(dir.path().join("empty.toml"), "entries = []\n").unwrap();
    let out = run(dir.path(), &["faed-train", "--manifest", "empty.toml", "--out", "ae.bin"]);
    assert_ne!(out.status.code(), Some(0));
}
