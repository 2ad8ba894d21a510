use std::fs;
use std::path::PathBuf;
use std::process::{Command, Output};

fn hypwalk(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hypwalk")).args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).expect("utf-8")
}

fn scratch(name: &str) -> PathBuf {
    let d = std::env::temp_dir().join(format!("hypwalk-cli-{}-{name}", std::process::id()));
    let _ = fs::remove_dir_all(&d);
    fs::create_dir_all(&d).unwrap();
    d
}

#[test]
fn ball_lists_seventeen_elements() {
    let o = hypwalk(&["ball", "--model", "F2", "--radius", "2"]);
    assert!(o.status.success());
    let s = stdout(&o);
    let body: Vec<&str> = s.lines().filter(|l| !l.starts_with('#')).collect();
    assert_eq!(body.len(), 17);
    assert_eq!(body[0], "e");
    assert!(s.starts_with("# config_hash="));
    assert!(s.lines().next().unwrap().contains("seed=none"));
}

#[test]
fn htsum_json_lines() {
    let o = hypwalk(&["--format", "jsonl", "htsum", "--model", "F2", "--g", "a", "--o", "e", "--p", "b a^5 b", "--T", "4"]);
    assert!(o.status.success());
    let s = stdout(&o);
    let lines: Vec<serde_json::Value> = s.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines.len(), 2);
    assert!(lines[0]["header"]["config_hash"].is_string());
    assert_eq!(lines[1]["cosetRep"], "b");
    assert_eq!(lines[1]["root"], "a");
    assert_eq!(lines[1]["value"], 5);
    assert_eq!(lines[1]["orderIndex"], 0);
}

#[test]
fn htsum_text_reports_sum() {
    let o = hypwalk(&["htsum", "--model", "F2", "--g", "a", "--p", "b a^5 b", "--T", "4"]);
    assert!(stdout(&o).contains("cosets 1 sum 5 certified true"));
}

#[test]
fn partial_record_exits_two() {
    let o = hypwalk(&["htsum", "--model", "Z^2 * Z", "--space", "bass-serre", "--g", "x z", "--p", "x z", "--T", "1"]);
    assert_eq!(o.status.code(), Some(2));
    let err: serde_json::Value = serde_json::from_slice(&o.stderr).unwrap();
    assert_eq!(err["error"], "certification");
}

#[test]
fn check_suite_passes() {
    let o = hypwalk(&["check"]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    assert!(!stdout(&o).contains("[FAIL]"));
}

#[test]
fn unknown_flag_is_a_validation_error() {
    let o = hypwalk(&["ball", "--model", "F2", "--radius", "2", "--bogus"]);
    assert_eq!(o.status.code(), Some(1));
    let err: serde_json::Value = serde_json::from_slice(&o.stderr).unwrap();
    assert_eq!(err["error"], "validation");
}

#[test]
fn help_exits_zero() {
    assert_eq!(hypwalk(&["--help"]).status.code(), Some(0));
}

#[test]
fn unknown_model_is_a_validation_error() {
    assert_eq!(hypwalk(&["ball", "--model", "Q8", "--radius", "1"]).status.code(), Some(1));
}

#[test]
fn missing_seed_is_rejected() {
    assert_eq!(hypwalk(&["simulate", "--model", "F2", "--n", "5"]).status.code(), Some(1));
    assert_eq!(hypwalk(&["progress", "--set", "samples=10"]).status.code(), Some(1));
}

#[test]
fn unknown_config_key_is_rejected() {
    assert_eq!(hypwalk(&["progress", "--seed", "1", "--set", "colour=red"]).status.code(), Some(1));
}

#[test]
fn seeded_runs_are_byte_identical() {
    let args = ["progress", "--seed", "11", "--set", "samples=50", "--set", "n=20,40"];
    let a = hypwalk(&args);
    let b = hypwalk(&args);
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout);
    let t1 = hypwalk(&["--threads", "1", "simulate", "--model", "F2", "--n", "30", "--count", "4", "--seed", "5"]);
    let t2 = hypwalk(&["simulate", "--model", "F2", "--n", "30", "--count", "4", "--seed", "5"]);
    assert_eq!(t1.stdout, t2.stdout);
}

#[test]
fn config_file_matches_set_flags() {
    let dir = scratch("config");
    let path = dir.join("run.conf");
    fs::write(&path, "# small run\nseed = 11\nsamples = 50\nn = 20,40\n").unwrap();
    let from_file = hypwalk(&["progress", "--config", path.to_str().unwrap()]);
    let from_flags = hypwalk(&["progress", "--seed", "11", "--set", "samples=50", "--set", "n=20,40"]);
    assert!(from_file.status.success());
    assert_eq!(from_file.stdout, from_flags.stdout);
}

#[test]
fn out_dir_receives_named_file() {
    let dir = scratch("out");
    let o = hypwalk(&["--format", "csv", "--out", dir.to_str().unwrap(), "ball", "--model", "F2", "--radius", "1"]);
    assert!(o.status.success());
    let csv = fs::read_to_string(dir.join("ball.csv")).unwrap();
    assert_eq!(csv.lines().filter(|l| !l.starts_with('#')).count(), 6);
}

#[test]
fn cone_schedule_is_json() {
    let o = hypwalk(&["--format", "json", "cone", "--skeleton", "figure"]);
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    let omegas: Vec<u64> =
        v["result"]["rounds"].as_array().unwrap().iter().map(|r| r["clique_number"].as_u64().unwrap()).collect();
    assert_eq!(omegas, [4, 3, 2]);
}

#[test]
fn crossratio_needs_four_points() {
    let o = hypwalk(&["crossratio", "--model", "F2", "--point", "(a)", "--point", "a.(b)", "--point", "(b)", "--point", "b.(a)"]);
    assert!(stdout(&o).contains("= 2"));
    let o = hypwalk(&["crossratio", "--model", "F2", "--point", "(a)"]);
    assert_eq!(o.status.code(), Some(1));
}
