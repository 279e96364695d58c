//! End-to-end runs of the binary against frozen outputs.
//!
//! Every run starts in `tests/` so the relative paths recorded in output
//! headers are stable.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn tests_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests")
}

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_synth-eval"))
        .args(args)
        .current_dir(tests_dir())
        .env_remove("RUST_LOG")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} exited {:?}: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn golden(name: &str) -> String {
    std::fs::read_to_string(tests_dir().join("golden").join(name)).unwrap()
}

const DEMO: &str = "../../core/data/demo.jsonl";

#[test]
fn sketch_matches_golden() {
    assert_eq!(ok(&["sketch", "fixtures/rename.py"]), golden("sketch.txt"));
}

#[test]
fn transform_and_mutate_match_golden() {
    assert_eq!(ok(&["transform", "fixtures/rename.py", "--seed", "3"]), golden("transform.txt"));
    assert_eq!(ok(&["mutate", "fixtures/rename.py", "--seed", "1"]), golden("mutate.txt"));
}

#[test]
fn metrics_csv_matches_golden() {
    assert_eq!(
        ok(&["metrics", "--corpus", DEMO, "--kind", "bleu,chrf,syntax-match"]),
        golden("metrics.csv")
    );
}

#[test]
fn report_table_matches_golden() {
    assert_eq!(
        ok(&["report", "--corpus", DEMO, "--kinds", "original,o2s,s2s", "--metrics", "bleu,ed,codescore-r"]),
        golden("report.txt")
    );
}

#[test]
fn identical_pair_scores_one() {
    let out = ok(&["score", "--ref", "fixtures/rename.py", "--pred", "fixtures/rename.py", "--backend", "hash"]);
    let v: serde_json::Value = serde_json::from_str(&out).unwrap();
    assert_eq!(v["similarity"], 1.0);
    assert_eq!(v["binary"], 1);
    assert_eq!(v["gate_passed"], true);
    assert_eq!(v["header"]["command"], "score");
}

#[test]
fn report_directory_holds_every_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let table = ok(&["report", "--corpus", DEMO, "--kinds", "original,o2s", "--metrics", "bleu", "--out", out]);
    for f in ["report-original.json", "report-o2s.json", "scores-original.csv", "scores-o2s.csv", "summary.csv"] {
        assert!(dir.path().join(f).is_file(), "{f}");
    }
    assert_eq!(std::fs::read_to_string(dir.path().join("table.txt")).unwrap(), table);
    let rep: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("report-o2s.json")).unwrap()).unwrap();
    assert_eq!(rep["report"]["records"], 30);
    assert_eq!(rep["header"]["config"]["seed"], 0);
}

#[test]
fn perturb_writes_one_file_per_seed() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    ok(&["perturb", "--corpus", DEMO, "--kind", "syntax", "--seeds", "0,1", "--out", out]);
    for f in ["syntax-seed0.jsonl", "syntax-seed1.jsonl", "run.json"] {
        assert!(dir.path().join(f).is_file(), "{f}");
    }
    let single = ok(&["perturb", "--corpus", DEMO, "--kind", "syntax", "--seed", "1"]);
    assert_eq!(single, std::fs::read_to_string(dir.path().join("syntax-seed1.jsonl")).unwrap());
}

#[test]
fn config_file_feeds_the_header_and_flags_override_it() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    std::fs::write(&cfg, "seed = 7\n[score]\nthreshold = 0.9\n").unwrap();
    let cfg = cfg.to_str().unwrap();
    let out = ok(&["score", "--config", cfg, "--seed", "8", "--ref", "fixtures/rename.py", "--pred", "fixtures/rename.py"]);
    let v: serde_json::Value = serde_json::from_str(&out).unwrap();
    assert_eq!(v["header"]["config"]["seed"], 8);
    assert_eq!(v["header"]["config"]["score"]["threshold"], 0.9);
}

#[test]
fn input_errors_exit_one_with_clean_stdout() {
    for args in [
        &["sketch", "fixtures/missing.py"][..],
        &["sketch", "fixtures/rename.py", "--lang", "cobol"],
        &["no-such-command"],
        &["score", "--ref", "fixtures/rename.py", "--pred", "fixtures/rename.py", "--backend", "remote"],
        &["perturb", "--corpus", DEMO, "--kind", "o2s", "--seeds", "1,2"],
        &["report", "--corpus", DEMO, "--kinds", "semantic-140"],
    ] {
        let out = run(args);
        assert_eq!(out.status.code(), Some(1), "{args:?}");
        assert!(out.stdout.is_empty(), "{args:?}");
        assert!(!out.stderr.is_empty(), "{args:?}");
    }
}

#[test]
fn unmutable_unit_is_an_input_error() {
    let dir = tempfile::tempdir().unwrap();
    let f = dir.path().join("plain.py");
    std::fs::write(&f, "def f():\n    return g()\n").unwrap();
    assert_eq!(run(&["mutate", f.to_str().unwrap()]).status.code(), Some(1));
}

#[test]
fn failed_gradient_check_exits_two() {
    // A tolerance below any attainable error makes the check fail.
    let out = run(&["grad-check", "--instances", "2", "--tolerance", "1e-30"]);
    assert_eq!(out.status.code(), Some(2));
    let csv = String::from_utf8(out.stdout).unwrap();
    assert!(csv.lines().any(|l| l.starts_with("planted,")));
    assert!(ok(&["grad-check", "--instances", "8"]).contains("\n7,"));
}

#[test]
fn logs_stay_on_stderr() {
    let quiet = ok(&["sketch", "fixtures/rename.py"]);
    let out = run(&["-vv", "sketch", "fixtures/rename.py"]);
    assert!(out.status.success());
    assert_eq!(String::from_utf8(out.stdout).unwrap(), quiet);
    assert!(String::from_utf8_lossy(&out.stderr).contains("resolved run"));
}

#[test]
fn train_writes_checkpoint_log_and_separation() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = dir.path().join("m.ckpt");
    let cfg = dir.path().join("small.toml");
    std::fs::write(&cfg, "[train]\nepochs = 3\nbatch_size = 4\ndim = 8\n").unwrap();
    let out = ok(&[
        "train",
        "--config",
        cfg.to_str().unwrap(),
        "--synthetic",
        "24",
        "--holdout",
        "6",
        "--checkpoint",
        ckpt.to_str().unwrap(),
    ]);
    let v: serde_json::Value = serde_json::from_str(&out).unwrap();
    assert_eq!(v["final_epoch"]["epoch"], 2);
    assert!(v["holdout"]["pairs"].as_u64().unwrap() > 0);
    let log = std::fs::read_to_string(dir.path().join("m.ckpt.log.csv")).unwrap();
    assert_eq!(log.lines().count(), 2 + 3);
    let scored = ok(&[
        "score",
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--ref",
        "fixtures/rename.py",
        "--pred",
        "fixtures/rename.py",
    ]);
    let s: serde_json::Value = serde_json::from_str(&scored).unwrap();
    assert!((s["similarity"].as_f64().unwrap() - 1.0).abs() < 1e-9);
}
