#![allow(dead_code)]

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

pub const BIN: &str = env!("CARGO_BIN_EXE_panorad");

/// Runs the binary single-threaded inside `dir`.
pub fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(BIN)
        .current_dir(dir)
        .env_remove("PANORAD_THREADS")
        .env_remove("RUST_LOG")
        .arg("--threads")
        .arg("1")
        .args(args)
        .output()
        .expect("spawn panorad")
}

/// Like [`run`] but panics on a non-zero exit and returns stdout.
pub fn run_ok(dir: &Path, args: &[&str]) -> String {
    let out = run(dir, args);
    assert!(
        out.status.success(),
        "panorad {args:?} exited with {:?}\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).expect("utf-8 report")
}

/// Every file below `root`, keyed by relative path.
pub fn tree(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<PathBuf, Vec<u8>>) {
        let mut entries: Vec<_> = fs::read_dir(dir).unwrap().map(|e| e.unwrap().path()).collect();
        entries.sort();
        for path in entries {
            if path.is_dir() {
                walk(root, &path, out);
            } else {
                out.insert(path.strip_prefix(root).unwrap().to_path_buf(), fs::read(&path).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(root, root, &mut out);
    out
}

/// Small end-to-end run touching every subcommand. Returns the reports in
/// order.
pub fn pipeline(dir: &Path) -> Vec<(String, String)> {
    let steps: [&[&str]; 14] = [
        &["scenegen", "--count", "4", "--seed", "3", "--height", "32", "--out", "scenes"],
        &["scenegen", "--count", "2", "--seed", "9", "--height", "32", "--empty", "--out", "rooms"],
        &["maskgen", "--seed", "5", "--height", "32", "--out", "mask"],
        &["layoutdepth", "--manifest", "scenes/manifest.toml", "--out", "layout"],
        &[
            "corrupt", "--manifest", "scenes/manifest.toml", "--kind", "swirl", "--level", "2", "--target", "rgb",
            "--seed", "1", "--out", "corrupted",
        ],
        &["faed-train", "--manifest", "scenes/manifest.toml", "--steps", "6", "--batch", "2", "--out", "ae.bin"],
        &["faed-stats", "--weights", "ae.bin", "--manifest", "scenes/manifest.toml", "--out", "a.toml"],
        &["faed-stats", "--weights", "ae.bin", "--manifest", "corrupted/manifest.toml", "--out", "b.toml"],
        &["faed", "--stats-a", "a.toml", "--stats-b", "b.toml"],
        &[
            "bips-train", "--manifest", "scenes/manifest.toml", "--steps", "4", "--seed", "2", "--out", "g.bin",
            "--losses", "losses.toml",
        ],
        &["bips-infer", "--weights", "g.bin", "--manifest", "rooms/manifest.toml", "--seed", "4", "--out", "inferred"],
        &["metrics", "--pred", "inferred/manifest.toml", "--gt", "rooms/manifest.toml"],
        &["metrics", "--pred", "corrupted/manifest.toml", "--gt", "scenes/manifest.toml", "--which", "psnr,ssim"],
        &[
            "verify-faed", "--scenes", "6", "--height", "32", "--steps", "4", "--batch", "2", "--weights", "vf.bin",
        ],
    ];
    steps
        .iter()
        .map(|args| (args.join(" "), run_ok(dir, args)))
        .collect()
}
