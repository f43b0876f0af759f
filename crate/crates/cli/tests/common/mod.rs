//! Helpers shared by the CLI test targets: run the binary, build a synthetic
//! fixture once per test binary.
#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

pub const BIN: &str = env!("CARGO_BIN_EXE_lear");

pub fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

pub fn lear(dir: &Path, args: &[&str]) -> Output {
    Command::new(BIN)
        .args(args)
        .current_dir(dir)
        .env_remove("LEAR_THREADS")
        .env_remove("LEAR_OUTPUT_DIR")
        .output()
        .expect("binary runs")
}

/// Runs the binary and panics with its stderr unless it exits 0.
pub fn lear_ok(dir: &Path, args: &[&str]) -> String {
    let out = lear(dir, args);
    assert!(
        out.status.success(),
        "lear {args:?} failed ({:?}):\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

/// A fresh scratch directory under cargo's per-target temp dir.
pub fn scratch(name: &str) -> PathBuf {
    let dir = Path::new(env!("CARGO_TARGET_TMPDIR")).join(name);
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

/// Synthetic splits, a 200-tree ranker, and exit classifiers at 50/100/200.
pub struct Workspace {
    pub dir: PathBuf,
}

impl Workspace {
    pub fn path(&self, name: &str) -> String {
        self.dir.join(name).display().to_string()
    }
}

pub fn workspace(tag: &str) -> &'static Workspace {
    static WS: OnceLock<Workspace> = OnceLock::new();
    WS.get_or_init(|| {
        let dir = scratch(&format!("workspace-{tag}"));
        lear_ok(&dir, &["synth", "--prefix", "d", "--queries", "160", "--seed", "3"]);
        lear_ok(
            &dir,
            &[
                "train-ranker",
                "--train",
                "d.train.txt",
                "--trees",
                "200",
                "--max-leaves",
                "16",
                "--out",
                "ranker.json",
            ],
        );
        for s in ["50", "100", "200"] {
            lear_ok(
                &dir,
                &[
                    "train-exit",
                    "--model",
                    "ranker.json",
                    "--train",
                    "d.valid.txt",
                    "--valid",
                    "d.tune.txt",
                    "--sentinel",
                    s,
                    "--out",
                    &format!("exit{s}.json"),
                ],
            );
        }
        Workspace { dir }
    })
}

pub struct CsvRow {
    pub strategy: String,
    pub sentinel: usize,
    pub threshold: f64,
    pub ndcg: f64,
    pub delta_pct: f64,
    pub speedup: f64,
}

pub fn parse_csv(text: &str) -> Vec<CsvRow> {
    let mut lines = text.lines();
    assert_eq!(
        lines.next(),
        Some("strategy,sentinel,threshold,ndcg,delta_pct,speedup,ks_mu,ks_sigma")
    );
    lines
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            assert_eq!(f.len(), 8, "{l}");
            for v in &f[3..] {
                assert!(v.parse::<f64>().unwrap().is_finite(), "{l}");
            }
            CsvRow {
                strategy: f[0].to_string(),
                sentinel: f[1].parse().unwrap(),
                threshold: f[2].parse().unwrap(),
                ndcg: f[3].parse().unwrap(),
                delta_pct: f[4].parse().unwrap(),
                speedup: f[5].parse().unwrap(),
            }
        })
        .collect()
}
