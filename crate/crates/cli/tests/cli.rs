use std::path::Path;
use std::process::{Command, Output};

use crmp_core::verify::{DESK_LOCK_COMM, DESK_LOOP};

fn crmp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_crmp")).args(args).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn write(dir: &Path, name: &str, body: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, body).unwrap();
    p.to_str().unwrap().to_string()
}

const DIV0: &str = "program div0
thread 0 {
  block A {
    set r1, 1
    set r2, 0
    div r3, r1, r2
    out r3
    halt
  }
}
";

const BAD: &str = "program bad
thread 0 {
  block A {
    jmp Nowhere
  }
}
";

#[test]
fn help_and_usage_codes() {
    assert_eq!(code(&crmp(&["--help"])), 0);
    assert_eq!(code(&crmp(&["--version"])), 0);
    assert_eq!(code(&crmp(&["frobnicate"])), 1);
    assert_eq!(code(&crmp(&["run"])), 1);
    assert_eq!(code(&crmp(&["run", "/definitely/not/here.ir"])), 1);
    assert_eq!(code(&crmp(&["bench", "gen", "--kind", "ll", "--size", "7"])), 1);
}

#[test]
fn parse_round_trips() {
    let d = tempfile::tempdir().unwrap();
    let f = write(d.path(), "loop.ir", DESK_LOOP);
    let a = crmp(&["parse", &f]);
    assert_eq!(code(&a), 0);
    let g = write(d.path(), "again.ir", &stdout(&a));
    assert_eq!(stdout(&crmp(&["parse", &g])), stdout(&a));
}

#[test]
fn invalid_program_exits_2() {
    let d = tempfile::tempdir().unwrap();
    let f = write(d.path(), "bad.ir", BAD);
    for sub in ["parse", "graphs", "instrument", "run"] {
        assert_eq!(code(&crmp(&[sub, &f])), 2, "{sub}");
    }
}

#[test]
fn trap_exits_3() {
    let d = tempfile::tempdir().unwrap();
    let f = write(d.path(), "div0.ir", DIV0);
    let o = crmp(&["run", &f, "--mode", "none"]);
    assert_eq!(code(&o), 3);
    assert!(stdout(&o).contains("division-by-zero"));
}

#[test]
fn run_prints_golden_output() {
    let d = tempfile::tempdir().unwrap();
    let f = write(d.path(), "lc.ir", DESK_LOCK_COMM);
    for mode in ["none", "crmp", "bcp"] {
        let o = crmp(&["run", &f, "--mode", mode, "--quantum", "3"]);
        assert_eq!(code(&o), 0);
        let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
        assert_eq!(v["outcome"], "completed");
        assert_eq!(v["output"], serde_json::json!([13, 1]), "{mode}");
    }
}

#[test]
fn trace_is_ndjson() {
    let d = tempfile::tempdir().unwrap();
    let f = write(d.path(), "loop.ir", DESK_LOOP);
    let o = crmp(&["run", &f, "--trace"]);
    assert_eq!(code(&o), 0);
    let s = stdout(&o);
    assert!(s.lines().count() > 10);
    for l in s.lines() {
        serde_json::from_str::<serde_json::Value>(l).unwrap();
    }
}

#[test]
fn graphs_emit_dot() {
    let d = tempfile::tempdir().unwrap();
    let f = write(d.path(), "lc.ir", DESK_LOCK_COMM);
    let s = stdout(&crmp(&["graphs", &f]));
    assert!(s.starts_with("digraph"));
}

#[test]
fn instrument_writes_program_and_sidecar() {
    let d = tempfile::tempdir().unwrap();
    let f = write(d.path(), "loop.ir", DESK_LOOP);
    let out = d.path().join("loop.crmp.ir");
    let side = d.path().join("loop.json");
    let o = crmp(&[
        "instrument",
        &f,
        "--mode",
        "crmp",
        "--shadow",
        "all",
        "-o",
        out.to_str().unwrap(),
        "--sidecar",
        side.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0);
    let text = std::fs::read_to_string(&out).unwrap();
    assert!(text.contains("__handler"));
    serde_json::from_str::<serde_json::Value>(&std::fs::read_to_string(&side).unwrap()).unwrap();
}

#[test]
fn inject_reports_outcome() {
    let d = tempfile::tempdir().unwrap();
    let f = write(d.path(), "loop.ir", DESK_LOOP);
    let o = crmp(&["inject", &f, "--fault", "branch_deletion@40", "--quantum", "1"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert!(v["class"].is_string());
    assert_eq!(code(&crmp(&["inject", &f, "--fault", "nonsense"])), 1);
}

#[test]
fn verify_desk_loop_passes() {
    let d = tempfile::tempdir().unwrap();
    let f = write(d.path(), "loop.ir", DESK_LOOP);
    let csv = d.path().join("v.csv");
    let o = crmp(&["verify", "--program", &f, "-o", csv.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(std::fs::read_to_string(&csv).unwrap().lines().count() > 100);
    assert_eq!(code(&crmp(&["verify", "--program", &f, "--bound", "10"])), 1);
}

#[test]
fn campaign_and_report_are_reproducible() {
    let d = tempfile::tempdir().unwrap();
    let run = |dir: &str| {
        let out = d.path().join(dir);
        let o = crmp(&[
            "campaign",
            "--bench",
            "ll",
            "--size",
            "6",
            "--n",
            "30",
            "--inter",
            "5",
            "--seed",
            "4",
            "-o",
            out.to_str().unwrap(),
        ]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        out
    };
    let a = run("a");
    let b = run("b");
    for f in ["linkedlist-crmp.json", "linkedlist-crmp.csv", "linkedlist-bcp.json", "linkedlist-bcp.csv"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
    let rep = d.path().join("rep");
    let o = crmp(&[
        "report",
        a.join("linkedlist-crmp.json").to_str().unwrap(),
        a.join("linkedlist-bcp.json").to_str().unwrap(),
        "--ccc",
        "weighted",
        "-o",
        rep.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("linkedlist"));
    assert!(std::fs::read_dir(&rep).unwrap().count() > 0);
}

#[test]
fn campaign_needs_one_input() {
    let d = tempfile::tempdir().unwrap();
    let o = d.path().to_str().unwrap();
    assert_eq!(code(&crmp(&["campaign", "-o", o])), 1);
}

#[test]
fn bench_gen_is_deterministic() {
    let a = stdout(&crmp(&["bench", "gen", "--kind", "qs", "--size", "12", "--seed", "3"]));
    let b = stdout(&crmp(&["bench", "gen", "--kind", "qs", "--size", "12", "--seed", "3"]));
    assert_eq!(a, b);
    assert!(a.starts_with("program"));
}
