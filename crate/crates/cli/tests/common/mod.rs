//! Drives the `secrisk` binary over the fixture files.

#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::Command;

pub const BIN: &str = env!("CARGO_BIN_EXE_secrisk");
pub const MODES: [&str; 2] = ["full", "paper-compat"];
/// Set to rewrite the golden files from the current output.
pub const UPDATE_ENV: &str = "SECRISK_UPDATE_GOLDENS";

pub fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/at").join(name)
}

pub fn golden_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden")
}

#[derive(Debug)]
pub struct Run {
    pub code: i32,
    pub stdout: String,
    pub stderr: String,
}

impl Run {
    pub fn ok(self) -> Self {
        assert_eq!(self.code, 0, "stderr: {}", self.stderr);
        self
    }
}

/// Runs the binary with a clean environment for the store variable.
pub fn secrisk<S: AsRef<std::ffi::OsStr>>(args: &[S]) -> Run {
    let out = Command::new(BIN).args(args).env_remove("SECRISK_STORE").output().expect("binary runs");
    Run {
        code: out.status.code().unwrap_or(-1),
        stdout: String::from_utf8(out.stdout).expect("utf-8 stdout"),
        stderr: String::from_utf8(out.stderr).expect("utf-8 stderr"),
    }
}

pub fn path_str(p: &Path) -> String {
    p.to_str().expect("utf-8 path").to_string()
}

/// Reports from one scripted pass over the six phases.
#[derive(Debug, Clone, PartialEq)]
pub struct Phases {
    pub check: String,
    pub lookup: String,
    pub delphi: String,
    pub assess: String,
    pub treat: String,
    pub monitor: String,
}

impl Phases {
    /// Golden file stem and report for each phase that has a golden.
    pub fn goldens(&self) -> [(&'static str, &str); 4] {
        [("delphi", &self.delphi), ("assess", &self.assess), ("treat", &self.treat), ("monitor", &self.monitor)]
    }
}

/// Context, identification, estimation, evaluation, treatment, monitoring.
pub fn run_phases(mode: &str, format: &str) -> Phases {
    let dir = tempfile::tempdir().unwrap();
    let store = dir.path().join("store");
    let est = dir.path().join("estimated");
    let before = dir.path().join("before.json");
    let common = ["--mode", mode, "--format", format];
    let with = |args: &[String]| -> Run {
        let mut all: Vec<String> = args.to_vec();
        all.extend(common.iter().map(|s| s.to_string()));
        all.extend(["--store".to_string(), path_str(&store)]);
        secrisk(&all).ok()
    };
    let s = |x: &str| x.to_string();
    let f = |n: &str| path_str(&fixture(n));

    let check = with(&[
        s("check"),
        s("--profile"),
        f("profile.json"),
        s("--risks"),
        f("risks.json"),
        s("--matrix"),
        f("impact.csv"),
        s("--catalog"),
        f("catalog.json"),
    ]);
    let lookup = with(&[
        s("lookup"),
        s("--catalog"),
        f("knowledge-base.json"),
        s("--tag"),
        s("account hijacking"),
        s("--tag"),
        s("malicious VM"),
    ]);
    let delphi = with(&[
        s("delphi"),
        s("--session"),
        f("session.json"),
        f("round1.csv"),
        s("--emit"),
        path_str(&est),
        s("--profile"),
        f("profile.json"),
        s("--risks"),
        f("risks.json"),
    ]);
    let e = |n: &str| path_str(&est.join(n));
    let assess = with(&[
        s("assess"),
        s("--profile"),
        e("profile.json"),
        s("--risks"),
        e("risks.json"),
        s("--matrix"),
        e("impact.csv"),
        s("--snapshot-out"),
        path_str(&before),
    ]);
    let before_id = snapshot_id(&before);
    let treat = secrisk(
        &[
            &["treat", "--snapshot", &before_id, "--catalog", &f("catalog.json"), "--reductions", &f("reductions.csv")]
                [..],
            &["--plan", "c1,c2,c3", "--store", &path_str(&store)],
            &common,
        ]
        .concat(),
    )
    .ok();
    let after_id = treat.stderr.split_whitespace().nth(1).expect("snapshot line").to_string();
    let monitor = with(&[s("monitor"), before_id, after_id]);
    Phases {
        check: check.stdout,
        lookup: lookup.stdout,
        delphi: delphi.stdout,
        assess: assess.stdout,
        treat: treat.stdout,
        monitor: monitor.stdout,
    }
}

pub fn snapshot_id(path: &Path) -> String {
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap();
    v["id"].as_str().unwrap().to_string()
}

pub fn golden_path(stem: &str, mode: &str, format: &str) -> PathBuf {
    let ext = if format == "text" { "txt" } else { format };
    golden_dir().join(format!("{stem}.{mode}.{ext}"))
}

/// Compares against the checked-in golden, or rewrites it when asked.
pub fn check_golden(stem: &str, mode: &str, format: &str, actual: &str) -> Result<(), String> {
    let path = golden_path(stem, mode, format);
    if std::env::var_os(UPDATE_ENV).is_some() {
        std::fs::create_dir_all(golden_dir()).map_err(|e| e.to_string())?;
        std::fs::write(&path, actual).map_err(|e| e.to_string())?;
        return Ok(());
    }
    let expected = std::fs::read_to_string(&path).map_err(|e| format!("{}: {e}", path.display()))?;
    if expected == actual {
        Ok(())
    } else {
        Err(format!("{} differs:\n--- expected\n{expected}\n--- actual\n{actual}", path.display()))
    }
}
