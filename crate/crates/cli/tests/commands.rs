mod common;

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpStream;
use std::path::Path;
use std::process::{Command, Stdio};
use std::time::Duration;

use common::{fixture, path_str, secrisk, Run};
use serde_json::Value;

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    path_str(&p)
}

fn session(dir: &Path, max_rounds: u32) -> String {
    let doc = serde_json::json!({
        "format": "secrisk.delphi-session/1",
        "session_id": "s",
        "moderator": "mod",
        "roster": ["a", "b", "c"],
        "quantities": ["likelihood:r1", "likelihood:r2"],
        "max_rounds": max_rounds
    });
    write(dir, "session.json", &doc.to_string())
}

const SPLIT: &str = "participant,likelihood:r1,likelihood:r2\na,0.1,0.5\nb,0.5,0.5\nc,0.9,0.5\n";
const AGREED: &str = "participant,likelihood:r1,likelihood:r2\na,0.5,0.5\nb,0.5,0.5\nc,0.52,0.5\n";

fn delphi(dir: &Path, max_rounds: u32, rounds: &[&str], extra: &[&str]) -> Run {
    let mut args = vec!["delphi".to_string(), "--session".into(), session(dir, max_rounds)];
    for (i, r) in rounds.iter().enumerate() {
        args.push(write(dir, &format!("round{}.csv", i + 1), r));
    }
    args.extend(extra.iter().map(|s| s.to_string()));
    secrisk(&args)
}

#[test]
fn fixture_round_reaches_consensus_and_reproduces_the_inputs() {
    let dir = tempfile::tempdir().unwrap();
    let est = dir.path().join("est");
    let run = secrisk(&[
        "delphi",
        "--session",
        &path_str(&fixture("session.json")),
        &path_str(&fixture("round1.csv")),
        "--emit",
        &path_str(&est),
        "--profile",
        &path_str(&fixture("profile.json")),
        "--risks",
        &path_str(&fixture("risks.json")),
    ])
    .ok();
    assert!(run.stdout.contains("consensus: reached (29 of 29 quantities)"));
    assert!(!run.stdout.contains("expert-"), "participant ids leaked:\n{}", run.stdout);

    let estimates: Value = serde_json::from_str(&std::fs::read_to_string(est.join("estimates.json")).unwrap()).unwrap();
    assert_eq!(estimates["rounds"], 1);
    assert_eq!(estimates["forced"], false);
    let round1 = std::fs::read_to_string(fixture("round1.csv")).unwrap();
    let mut lines = round1.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let first: Vec<&str> = lines.next().unwrap().split(',').collect();
    for (q, v) in header[1..].iter().zip(&first[1..]) {
        assert_eq!(estimates["values"][q].as_f64().unwrap(), v.parse::<f64>().unwrap(), "{q}");
    }
    let emitted = std::fs::read_to_string(est.join("impact.csv")).unwrap();
    assert_eq!(emitted, std::fs::read_to_string(fixture("impact.csv")).unwrap());
}

#[test]
fn rounds_that_never_converge_deadlock() {
    let dir = tempfile::tempdir().unwrap();
    let run = delphi(dir.path(), 2, &[SPLIT, SPLIT], &[]);
    assert_eq!(run.code, 4, "{}", run.stderr);
    assert!(run.stdout.contains("Session s deadlocked after 2 rounds"));
    assert!(run.stdout.contains("likelihood:r1"));

    let forced = delphi(dir.path(), 2, &[SPLIT, SPLIT], &["--force", "deadline"]).ok();
    assert!(forced.stdout.contains("FORCED"));
}

#[test]
fn consensus_in_a_later_round_finalizes() {
    let dir = tempfile::tempdir().unwrap();
    let run = delphi(dir.path(), 3, &[SPLIT, AGREED], &[]).ok();
    assert!(run.stdout.contains("Delphi round 2"));
    assert!(run.stdout.contains("rounds: 2"));
}

#[test]
fn rounds_left_without_consensus_is_unresolved() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(delphi(dir.path(), 3, &[SPLIT], &[]).code, 6);
}

#[test]
fn incomplete_round_names_the_participant() {
    let dir = tempfile::tempdir().unwrap();
    let run = delphi(dir.path(), 3, &["participant,likelihood:r1,likelihood:r2\na,0.5,0.5\nb,0.5,0.5\n"], &[]);
    assert_eq!(run.code, 3);
    assert!(run.stderr.contains("c for likelihood:r1"), "{}", run.stderr);
}

#[test]
fn unknown_participants_and_extra_rounds_are_invalid() {
    let dir = tempfile::tempdir().unwrap();
    let stranger = "participant,likelihood:r1,likelihood:r2\nzed,0.5,0.5\n";
    let run = delphi(dir.path(), 3, &[stranger], &[]);
    assert_eq!(run.code, 3);
    assert!(run.stderr.contains("zed"));
    let run = delphi(dir.path(), 3, &[AGREED, AGREED], &[]);
    assert_eq!(run.code, 3);
    assert!(run.stderr.contains("already reached in round 1"), "{}", run.stderr);
}

fn assess(dir: &Path, matrix: &str, extra: &[&str]) -> Run {
    let mut args = vec![
        "assess".to_string(),
        "--profile".into(),
        path_str(&fixture("profile.json")),
        "--risks".into(),
        path_str(&fixture("risks.json")),
        "--matrix".into(),
        write(dir, "impact.csv", matrix),
        "--format".into(),
        "csv".into(),
    ];
    args.extend(extra.iter().map(|s| s.to_string()));
    secrisk(&args)
}

#[test]
fn zero_matrix_gives_zero_levels() {
    let dir = tempfile::tempdir().unwrap();
    let zeros = "risk,o1,o2,o3,o4\nr1,0,0,0,0\nr2,0,0,0,0\nr3,0,0,0,0\nr4,0,0,0,0\nr5,0,0,0,0\n";
    let run = assess(dir.path(), zeros, &[]).ok();
    assert!(run.stdout.contains("GRL,0.00000,"), "{}", run.stdout);
    assert!(run.stdout.contains("requires treatment: none"));
}

#[test]
fn zero_tolerance_flags_every_positive_level() {
    let dir = tempfile::tempdir().unwrap();
    let matrix = std::fs::read_to_string(fixture("impact.csv")).unwrap();
    let run = assess(dir.path(), &matrix, &["--alpha-override", "0"]).ok();
    assert!(run.stdout.contains("requires treatment: r1, r2, r3, r4, r5"), "{}", run.stdout);
}

#[test]
fn validation_and_storage_failures_have_their_own_codes() {
    let dir = tempfile::tempdir().unwrap();
    let run = assess(dir.path(), "risk,o1,o2,o3,o4\nr1,0.5,0.5,0.5,2\n", &[]);
    assert_eq!(run.code, 3, "{}", run.stderr);
    let missing = secrisk(&["assess", "--profile", "/nonexistent/p.json", "--risks", "/nonexistent/r.json"]);
    assert_eq!(missing.code, 7, "{}", missing.stderr);
    let usage = secrisk(&["assess", "--profile"]);
    assert_eq!(usage.code, 2);
}

/// Records the fixture assessment in a store and returns the snapshot id.
fn assessed(store: &Path) -> String {
    let run = secrisk(&[
        "assess",
        "--profile",
        &path_str(&fixture("profile.json")),
        "--risks",
        &path_str(&fixture("risks.json")),
        "--matrix",
        &path_str(&fixture("impact.csv")),
        "--store",
        &path_str(store),
    ])
    .ok();
    run.stderr.split_whitespace().nth(1).unwrap().to_string()
}

fn treat(store: &Path, snapshot: &str, choice: &[&str]) -> Run {
    let mut args = vec!["treat", "--store", store.to_str().unwrap(), "--snapshot", snapshot, "--reductions"];
    let reductions = path_str(&fixture("reductions.csv"));
    let catalog = path_str(&fixture("catalog.json"));
    args.extend([reductions.as_str(), "--catalog", catalog.as_str(), "--format", "csv"]);
    args.extend(choice);
    secrisk(&args)
}

#[test]
fn treatment_outcomes() {
    let dir = tempfile::tempdir().unwrap();
    let id = assessed(dir.path());

    let exact = treat(dir.path(), &id, &["--optimize", "exact"]).ok();
    assert!(exact.stdout.contains("# plan: c1, c3"), "{}", exact.stdout);
    let greedy = treat(dir.path(), &id, &["--optimize", "greedy"]).ok();
    assert!(greedy.stdout.contains("# feasible: yes"));

    let partial = treat(dir.path(), &id, &["--plan", "c1"]);
    assert_eq!(partial.code, 5);
    assert!(partial.stdout.contains("# feasible: no"));

    let unknown = treat(dir.path(), &id, &["--plan", "c1,c9"]);
    assert_eq!(unknown.code, 3);
    assert!(unknown.stderr.contains("c9"));

    let missing = treat(dir.path(), "snap-0000000000000000", &["--plan", "c1"]);
    assert_eq!(missing.code, 3, "{}", missing.stderr);
}

#[test]
fn store_comes_from_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    let id = assessed(dir.path());
    let out = Command::new(common::BIN)
        .args(["monitor", &id, &id, "--format", "csv"])
        .env("SECRISK_STORE", dir.path())
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8(out.stdout).unwrap().contains("GRL,1.29750,1.29750,0.00000,"));
    let help = secrisk(&["--help"]).ok();
    assert!(help.stdout.contains("SECRISK_STORE"));
    assert!(help.stdout.contains("Exit status:"));
}

#[test]
fn tampered_snapshots_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let snap = dir.path().join("snap.json");
    secrisk(&[
        "assess",
        "--profile",
        &path_str(&fixture("profile.json")),
        "--risks",
        &path_str(&fixture("risks.json")),
        "--matrix",
        &path_str(&fixture("impact.csv")),
        "--snapshot-out",
        &path_str(&snap),
        "--timestamp",
        "2024-01-01T00:00:00Z",
    ])
    .ok();
    let text = std::fs::read_to_string(&snap).unwrap();
    assert!(text.contains("2024-01-01T00:00:00Z"));
    let mut doc: Value = serde_json::from_str(&text).unwrap();
    doc["results"]["grl"] = serde_json::json!(1.3);
    std::fs::write(&snap, doc.to_string()).unwrap();
    let run = secrisk(&["monitor", &path_str(&snap), &path_str(&snap)]);
    assert_eq!(run.code, 3, "{}", run.stderr);
    assert!(run.stderr.contains("does not reproduce"));
    let bad_time = secrisk(&["assess", "--profile", "p", "--risks", "r", "--timestamp", "yesterday"]);
    assert_ne!(bad_time.code, 0);
}

fn get(addr: &str, path: &str) -> String {
    let mut stream = TcpStream::connect(addr).unwrap();
    write!(stream, "GET {path} HTTP/1.1\r\nHost: {addr}\r\nConnection: close\r\n\r\n").unwrap();
    let mut reply = String::new();
    stream.read_to_string(&mut reply).unwrap();
    reply
}

#[cfg(unix)]
#[test]
fn serve_answers_holds_the_store_and_stops_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let store = path_str(dir.path());
    let mut child = Command::new(common::BIN)
        .args(["serve", "--store", &store, "--bind", "127.0.0.1:0", "--token", "t:viewer:v"])
        .env("RUST_LOG", "info")
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    let pid = child.id().to_string();
    std::thread::spawn(move || {
        std::thread::sleep(Duration::from_secs(30));
        let _ = Command::new("kill").args(["-KILL", &pid]).status();
    });
    let mut lines = BufReader::new(child.stderr.take().unwrap()).lines();
    let addr = loop {
        let line = lines.next().expect("server logs before exiting").unwrap();
        if let Some(rest) = line.split("addr=").nth(1) {
            break rest.split_whitespace().next().unwrap().to_string();
        }
    };
    let health = get(&addr, "/v1/health");
    assert!(health.starts_with("HTTP/1.1 200"), "{health}");

    let second = secrisk(&["serve", "--store", &store, "--bind", "127.0.0.1:0"]);
    assert_eq!(second.code, 8);
    assert!(second.stderr.contains("locked"), "{}", second.stderr);

    let killed = Command::new("kill").args(["-TERM", &child.id().to_string()]).status().unwrap();
    assert!(killed.success());
    let mut waited = 0;
    let status = loop {
        if let Some(s) = child.try_wait().unwrap() {
            break s;
        }
        assert!(waited < 100, "server did not stop");
        std::thread::sleep(Duration::from_millis(50));
        waited += 1;
    };
    assert!(status.success());
    assert!(!dir.path().join("store.lock").exists());
}

#[test]
fn serve_refuses_an_unwritable_store() {
    let dir = tempfile::tempdir().unwrap();
    let plain = write(dir.path(), "plain", "x");
    let run = secrisk(&["serve", "--store", &format!("{plain}/store"), "--bind", "127.0.0.1:0"]);
    assert_eq!(run.code, 8);
    assert!(run.stderr.contains("not writable"), "{}", run.stderr);
}
