use std::io::Write;
use std::process::{Command, Output, Stdio};

use formulink::cli::parse_seed_range;
use formulink_core::kb::write_corpus;
use formulink_core::sim::{generate_corpus, SHIPPED_SEED};
use serde_json::Value;

fn formulink(args: &[&str], stdin: &str) -> Output {
    let mut child = Command::new(env!("CARGO_BIN_EXE_formulink"))
        .args(args)
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    child.stdin.take().unwrap().write_all(stdin.as_bytes()).unwrap();
    child.wait_with_output().unwrap()
}

fn text(b: &[u8]) -> String {
    String::from_utf8_lossy(b).into_owned()
}

#[test]
fn usage_errors_exit_two() {
    for args in [
        vec!["sweep", "--bogus"],
        vec!["frobnicate"],
        vec![],
        vec!["ingest", "dir"],
        vec!["compare", "--out", "x", "--seeds", "5..1"],
        vec!["compare", "--out", "x", "--seeds", "a..b"],
    ] {
        let out = formulink(&args, "");
        assert_eq!(out.status.code(), Some(2), "{args:?}: {}", text(&out.stderr));
        assert!(text(&out.stderr).contains("help"), "{args:?}");
    }
    let help = formulink(&["--help"], "");
    assert_eq!(help.status.code(), Some(0));
    assert!(text(&help.stdout).contains("sweep"));
}

#[test]
fn seed_ranges_parse_inclusively() {
    assert_eq!(parse_seed_range("1..5").unwrap(), 1..=5);
    assert_eq!(parse_seed_range("6..=10").unwrap(), 6..=10);
    assert_eq!(parse_seed_range("3").unwrap(), 3..=3);
    assert!(parse_seed_range("4..2").is_err());
    assert!(parse_seed_range("x").is_err());
}

#[test]
fn sweep_writes_fifteen_rows() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("out");
    let out = formulink(&["sweep", "--out", out_dir.to_str().unwrap()], "");
    assert_eq!(out.status.code(), Some(0), "{}", text(&out.stderr));
    let v: Value =
        serde_json::from_str(&std::fs::read_to_string(out_dir.join("sweep.json")).unwrap()).unwrap();
    assert_eq!(v["rows"].as_array().unwrap().len(), 15);
    assert_eq!(v["corpus_seed"], SHIPPED_SEED);
    let csv = std::fs::read_to_string(out_dir.join("sweep.csv")).unwrap();
    assert_eq!(csv.lines().count(), 16);
    assert_eq!(std::fs::read_dir(out_dir.join("traces")).unwrap().count(), 15);
    assert!(text(&out.stdout).contains("ingest_error"));
}

#[test]
fn ingest_reports_oversize_chunks() {
    let dir = tempfile::tempdir().unwrap();
    let (doc, _) = generate_corpus(SHIPPED_SEED);
    write_corpus(dir.path(), &[doc]).unwrap();
    let path = dir.path().to_str().unwrap();

    let bad = formulink(&["ingest", path, "--chunk-size", "5000"], "");
    assert_eq!(bad.status.code(), Some(1));
    let err = text(&bad.stderr);
    assert!(err.contains("EmbedderOversize"), "{err}");
    assert!(err.contains("(chunk "), "message names the chunk: {err}");

    let ok = formulink(&["ingest", path, "--chunk-size", "2000"], "");
    assert_eq!(ok.status.code(), Some(0), "{}", text(&ok.stderr));
    let report: Value = serde_json::from_slice(&ok.stdout).unwrap();
    assert_eq!(report["documents"], 1);
    assert_eq!(report["chunk_size"], 2000);

    let missing = formulink(&["ingest", "/nonexistent/corpus", "--chunk-size", "2000"], "");
    assert_eq!(missing.status.code(), Some(1));
}

#[test]
fn chat_with_designer_defaults_finishes() {
    let out = formulink(&["chat"], "\n\n\n\n\n\n");
    assert_eq!(out.status.code(), Some(0), "{}", text(&out.stderr));
    let s = text(&out.stdout);
    assert_eq!(s.matches("--- round").count(), 4, "{s}");
    assert!(s.contains("BEGIN_FORMULATION"));
    assert!(s.contains("score"));
}

#[test]
fn chat_failure_exits_one() {
    let out = formulink(&["chat", "--k", "10", "--chunk-size", "3000"], &"\n".repeat(12));
    assert_eq!(out.status.code(), Some(1), "{}", text(&out.stdout));
    assert!(text(&out.stdout).contains("session failed"));
}

#[test]
fn chat_rejects_unserved_profile() {
    let out = formulink(&["chat", "--profile", "remote-model"], "");
    assert_eq!(out.status.code(), Some(1));
    assert!(text(&out.stderr).contains("remote_http"));
}

#[test]
fn short_compare_exit_code_follows_verdict() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("cmp");
    let out = formulink(
        &[
            "compare",
            "--seeds",
            "1..1",
            "--iterations",
            "2",
            "--batch-episodes",
            "64",
            "--out",
            out_dir.to_str().unwrap(),
        ],
        "",
    );
    let report: Value =
        serde_json::from_str(&std::fs::read_to_string(out_dir.join("comparison.json")).unwrap())
            .unwrap();
    let holds = report["verdict"]["holds"].as_bool().unwrap();
    assert_eq!(out.status.code(), Some(if holds { 0 } else { 1 }));
    assert_eq!(
        std::fs::read_to_string(out_dir.join("comparison.csv")).unwrap().lines().count(),
        4
    );
    assert_eq!(
        std::fs::read_to_string(out_dir.join("curves.csv")).unwrap().lines().count(),
        7
    );
}

#[test]
fn serve_with_bad_config_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let missing = formulink(&["serve", "--config", "/nonexistent.conf"], "");
    assert_eq!(missing.status.code(), Some(1));
    let conf = dir.path().join("bad.conf");
    std::fs::write(&conf, "k = 0\n").unwrap();
    let bad = formulink(&["serve", "--config", conf.to_str().unwrap()], "");
    assert_eq!(bad.status.code(), Some(1));
    assert!(text(&bad.stderr).contains("`k`"));
}
