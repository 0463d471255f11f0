use std::path::PathBuf;
use std::process::{Command, Output};

fn corpus(name: &str) -> String {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../core/corpus").join(name).to_string_lossy().into_owned()
}

fn spi(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_spi")).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn write(dir: &tempfile::TempDir, name: &str, text: &str) -> String {
    let p = dir.path().join(name);
    std::fs::write(&p, text).unwrap();
    p.to_string_lossy().into_owned()
}

#[test]
fn check_accepts_corpus_files() {
    for f in ["left_right.sapic", "left_right.sv", "counter.sv"] {
        let o = spi(&["check", &corpus(f)]);
        assert_eq!(o.status.code(), Some(0), "{f}: {}", String::from_utf8_lossy(&o.stderr));
    }
}

#[test]
fn syntax_error_is_reported_with_position() {
    let dir = tempfile::tempdir().unwrap();
    let f = write(&dir, "bad.sapic", "out('c', ");
    let o = spi(&["check", &f]);
    assert_eq!(o.status.code(), Some(1));
    let line: serde_json::Value = serde_json::from_str(stdout(&o).trim()).unwrap();
    assert_eq!(line["rule"], "Syntax");
    assert!(line["line"].as_u64().is_some());
}

#[test]
fn missing_file_and_unknown_extension_exit_2() {
    assert_eq!(spi(&["check", "/nonexistent/x.sapic"]).status.code(), Some(2));
    let dir = tempfile::tempdir().unwrap();
    let f = write(&dir, "p.txt", "0");
    assert_eq!(spi(&["check", &f]).status.code(), Some(2));
    assert_eq!(spi(&["check", &f, "--dialect", "sapic"]).status.code(), Some(0));
}

#[test]
fn encode_output_reparses_and_cannot_be_encoded_again() {
    let dir = tempfile::tempdir().unwrap();
    let o = spi(&["encode", &corpus("counter.sv")]);
    assert!(o.status.success());
    let f = write(&dir, "counter.sapic", &stdout(&o));
    assert_eq!(spi(&["check", &f]).status.code(), Some(0));
    assert_eq!(spi(&["encode", &f]).status.code(), Some(2));
}

#[test]
fn verify_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let ok = write(&dir, "ok.sapic", "new a; new b; event Exclusive(a, b); out('c', a)");
    let bad = write(&dir, "bad.sapic", "new a; new b; event Exclusive(a, b); out('c', pair(a, b))");
    assert_eq!(spi(&["verify", &ok, "--prop", "exclusive:Exclusive"]).status.code(), Some(0));
    assert_eq!(spi(&["verify", &bad, "--prop", "exclusive:Exclusive"]).status.code(), Some(1));
    // Nothing to check.
    assert_eq!(spi(&["verify", &ok]).status.code(), Some(2));
    assert_eq!(spi(&["verify", &ok, "--prop", "sometimes:X"]).status.code(), Some(2));
}

#[test]
fn zero_step_bound_holds_truncated() {
    let dir = tempfile::tempdir().unwrap();
    let f = write(&dir, "p.sapic", "event Bad()");
    let o = spi(&["verify", &f, "--prop", "absence:Bad", "--max-steps", "0"]);
    assert_eq!(o.status.code(), Some(0));
    let line: serde_json::Value = serde_json::from_str(stdout(&o).trim()).unwrap();
    assert_eq!(line["verdict"], "holds_within_bounds");
    assert_eq!(line["truncated"], true);
    assert!(String::from_utf8_lossy(&o.stderr).contains("bound"));
}

#[test]
fn secrecy_queries_of_statverif_files() {
    let dir = tempfile::tempdir().unwrap();
    let leak = write(&dir, "leak.sv", "query att: n.\nprocess new n; out(c, n)");
    let safe = write(&dir, "safe.sv", "query att: n.\nprocess new n; new m; out(c, m)");
    assert_eq!(spi(&["verify", &leak]).status.code(), Some(1));
    assert_eq!(spi(&["verify", &safe]).status.code(), Some(0));
}

#[test]
fn witness_and_trace_files_are_written() {
    let dir = tempfile::tempdir().unwrap();
    let w = dir.path().join("w.json");
    let t = dir.path().join("t.jsonl");
    let o = spi(&[
        "verify",
        &corpus("left_right_mutant.sapic"),
        "--witness",
        w.to_str().unwrap(),
        "--trace-out",
        t.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(1));
    let w: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&w).unwrap()).unwrap();
    let steps = std::fs::read_to_string(&t).unwrap().lines().count();
    assert_eq!(w["script"].as_array().unwrap().len(), steps);
}

#[test]
fn diff_exit_codes() {
    assert_eq!(spi(&["diff", &corpus("counter.sv")]).status.code(), Some(0));
    assert_eq!(spi(&["diff", &corpus("counter.sv"), "--mutate", "drop-unlock"]).status.code(), Some(1));
    assert_eq!(spi(&["diff", &corpus("left_right.sapic")]).status.code(), Some(2));
}

const HARNESS: &str = "new s; out('c', s); in('c', x); if x = s then event NotSecret()";

#[test]
fn exec_is_reproducible_and_agrees() {
    let dir = tempfile::tempdir().unwrap();
    let p = write(&dir, "h.sapic", HARNESS);
    let script = write(
        &dir,
        "s.json",
        r#"[{"type":"schedule","proc":0},{"type":"adv_output","proc":0,"channel":null},
            {"type":"adv_input","proc":0,"channel":null,"payload":"x_1"},
            {"type":"schedule","proc":0},{"type":"schedule","proc":0}]"#,
    );
    let run = |seed: &str| spi(&["exec", &p, "--script", &script, "--k", "64", "--seed", seed, "--compare"]);
    let (a, b, c) = (run("1"), run("1"), run("2"));
    assert_eq!(a.status.code(), Some(0), "{}", String::from_utf8_lossy(&a.stderr));
    assert_eq!(a.stdout, b.stdout);
    assert_eq!(a.stderr, b.stderr);
    assert!(stdout(&a).contains("\"agreement\":true"));
    assert!(stdout(&a).contains("NotSecret"));
    assert_eq!(c.status.code(), Some(0));
}

#[test]
fn exec_rejects_disabled_step() {
    let dir = tempfile::tempdir().unwrap();
    let p = write(&dir, "h.sapic", HARNESS);
    let script = write(&dir, "s.json", r#"[{"type":"adv_output","proc":3,"channel":null}]"#);
    assert_eq!(spi(&["exec", &p, "--script", &script]).status.code(), Some(2));
}

#[test]
fn exec_with_raw_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let p = write(&dir, "e.sapic", "in('c', x); event Got(x)");
    let script = write(
        &dir,
        "s.json",
        r#"[{"type":"adv_input","proc":0,"channel":null,"payload":"02abcd"},{"type":"schedule","proc":0}]"#,
    );
    let o = spi(&["exec", &p, "--bytes", "--script", &script, "--hex-dump"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("02abcd"));
}
