//! The `col` binary: subcommands, output and exit codes.

use std::io::Write;
use std::path::Path;
use std::process::{Command, Output, Stdio};

use col_core::fixtures::{case_study, CASE_STUDY_SCRIPT, CASE_STUDY_SEED};
use col_core::{load_kb, to_document_string};

fn col(kb: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_col")).arg("--kb").arg(kb).args(args).output().unwrap()
}

fn col_with_stdin(kb: &Path, args: &[&str], stdin: &str) -> Output {
    let mut child = Command::new(env!("CARGO_BIN_EXE_col"))
        .arg("--kb")
        .arg(kb)
        .args(args)
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    child.stdin.take().unwrap().write_all(stdin.as_bytes()).unwrap();
    child.wait_with_output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

/// A knowledge base taught the full case study through `init` and `teach`.
fn taught(dir: &Path) -> std::path::PathBuf {
    let kb = dir.join("kb.json");
    let seed = dir.join("seed.json");
    let script = dir.join("glasses.col");
    std::fs::write(&seed, CASE_STUDY_SEED).unwrap();
    std::fs::write(&script, CASE_STUDY_SCRIPT).unwrap();
    assert!(col(&kb, &["init", "--seed", seed.to_str().unwrap()]).status.success());
    let out = col(&kb, &["teach", script.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    kb
}

#[test]
fn init_then_teach_matches_the_replay() {
    let dir = tempfile::tempdir().unwrap();
    let kb = taught(dir.path());
    let expected = to_document_string(&case_study().kb).unwrap();
    assert_eq!(std::fs::read_to_string(&kb).unwrap(), expected);
}

#[test]
fn init_refuses_to_overwrite() {
    let dir = tempfile::tempdir().unwrap();
    let kb = dir.path().join("kb.json");
    assert_eq!(col(&kb, &["init"]).status.code(), Some(0));
    assert_eq!(col(&kb, &["init"]).status.code(), Some(1));
    assert_eq!(col(&kb, &["init", "--force", "--example", "gas-law"]).status.code(), Some(0));
    assert!(load_kb(&kb).unwrap().frame("Evaporation").is_some());
}

#[test]
fn query_prints_the_derivation() {
    let dir = tempfile::tempdir().unwrap();
    let kb = taught(dir.path());
    let out = col(&kb, &["query", "--fact", "Pain at eyes=Yes", "--goal", "Owns glasses"]);
    assert_eq!(out.status.code(), Some(0));
    let text = stdout(&out);
    assert!(text.starts_with("Owns glasses = Yes (exact)\n  to get Pain at eyes=No\n"), "{text}");
    assert_eq!(text.matches('↩').count(), 2, "{text}");

    let out = col(&kb, &["query", "--fact", "PainAtEyes=Yes", "--goal", "QualityVision", "--json"]);
    let answer: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(answer["value"], "Bad");

    let out = col(&kb, &["query", "--goal", "Colour"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn gas_law_queries_take_numbers() {
    let dir = tempfile::tempdir().unwrap();
    let kb = dir.path().join("kb.json");
    col(&kb, &["init", "--example", "gas-law"]);
    let out = col(&kb, &["query", "--fact", "n=1", "--fact", "T=300", "--fact", "V=0.0224", "--goal", "P", "--json"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let answer: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let p = answer["value"].as_f64().unwrap();
    let oracle = 1.0 * 8.314 * 300.0 / 0.0224;
    assert!(((p - oracle) / oracle).abs() <= 1e-6);
}

#[test]
fn export_dot_and_validate() {
    let dir = tempfile::tempdir().unwrap();
    let kb = taught(dir.path());
    let out = col(&kb, &["export-dot"]);
    assert!(stdout(&out).contains("\"See well\" -> \"Pain at eyes\" [label=\"TO USE\"];"));
    let out = col(&kb, &["validate"]);
    assert_eq!(out.status.code(), Some(0));
    assert!(stdout(&out).starts_with("ok: 4 concepts, 5 features, 3 frames"), "{}", stdout(&out));

    std::fs::write(&kb, "{\"version\": \"col/1\", \"concepts\": [").unwrap();
    let out = col(&kb, &["validate"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("malformed document"));
}

#[test]
fn failing_script_lines_leave_the_document_alone() {
    let dir = tempfile::tempdir().unwrap();
    let kb = taught(dir.path());
    let before = std::fs::read_to_string(&kb).unwrap();
    let bad = dir.path().join("bad.col");
    std::fs::write(&bad, "noun Lenses under Humans\nrule \"TO SEE\" : \"Owns glasses\" = Yes <=> \"Quality vision\" = Bad\n").unwrap();
    let out = col(&kb, &["teach", bad.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 2"));
    assert_eq!(std::fs::read_to_string(&kb).unwrap(), before);
}

#[test]
fn interactive_teaching_reads_stdin() {
    let dir = tempfile::tempdir().unwrap();
    let kb = dir.path().join("kb.json");
    let out = col_with_stdin(&kb, &["teach", "--interactive"], "noun Humans\nnoun Glasses\nyes\n# comment\nverb oops\n");
    assert_eq!(out.status.code(), Some(0));
    let text = stdout(&out);
    assert!(text.contains("new class of the current concept (Humans)?"), "{text}");
    assert!(text.contains("1 statement(s) were not applied"), "{text}");
    assert_eq!(load_kb(&kb).unwrap().concept("Humans").unwrap().class_names(), ["Glasses"]);
}

#[test]
fn usage_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let kb = dir.path().join("kb.json");
    assert_eq!(col(&kb, &["frobnicate"]).status.code(), Some(2));
    assert_eq!(col(&kb, &["query"]).status.code(), Some(2));
    assert_eq!(col(&kb, &["query", "--fact", "novalue", "--goal", "g"]).status.code(), Some(2));
    assert_eq!(col(&kb, &["teach"]).status.code(), Some(2));
    assert_eq!(col(&kb, &["--help"]).status.code(), Some(0));
}

#[test]
fn serve_answers_over_tcp() {
    use std::io::{BufRead, BufReader, Read};
    use std::net::TcpStream;

    let dir = tempfile::tempdir().unwrap();
    let kb = taught(dir.path());
    let mut child = Command::new(env!("CARGO_BIN_EXE_col"))
        .arg("--kb")
        .arg(&kb)
        .args(["serve", "--bind", "127.0.0.1:0"])
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    let mut line = String::new();
    BufReader::new(child.stderr.take().unwrap()).read_line(&mut line).unwrap();
    let addr = line.trim().strip_prefix("listening on ").unwrap_or_else(|| panic!("{line}")).to_string();

    let mut stream = TcpStream::connect(&addr).unwrap();
    write!(stream, "GET /kb/frames/TO%20USE HTTP/1.1\r\nHost: {addr}\r\nConnection: close\r\n\r\n").unwrap();
    let mut response = String::new();
    stream.read_to_string(&mut response).unwrap();
    child.kill().unwrap();
    child.wait().unwrap();
    assert!(response.starts_with("HTTP/1.1 200"), "{response}");
    assert!(response.contains("\"target\":\"Pain at eyes\""), "{response}");

    let taken = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let port = taken.local_addr().unwrap().to_string();
    assert_eq!(col(&kb, &["serve", "--bind", &port]).status.code(), Some(1));
}
