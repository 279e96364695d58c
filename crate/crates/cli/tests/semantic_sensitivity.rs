//! Audit: once the encoder separates variants from mutants on held-out
//! synthetic units, breaking every passing demo prediction with one
//! operator mutation should lower the seed-mean CodeScore-R similarity by
//! at least 0.3.
//!
//! Runs through the binary exactly as a user would.

use std::path::Path;
use std::process::Command;

fn ok(args: &[&str]) -> String {
    let out = Command::new(env!("CARGO_BIN_EXE_synth-eval"))
        .args(args)
        .current_dir(Path::new(env!("CARGO_MANIFEST_DIR")).join("tests"))
        .output()
        .expect("binary runs");
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn full_semantic_perturbation_drops_similarity_by_a_third() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = dir.path().join("enc.ckpt");
    let ckpt = ckpt.to_str().unwrap();
    let trained: serde_json::Value = serde_json::from_str(&ok(&[
        "train",
        "--synthetic",
        "280",
        "--synthetic-seed",
        "2024",
        "--holdout",
        "80",
        "--preset",
        "synthetic",
        "--checkpoint",
        ckpt,
    ]))
    .unwrap();
    let gap = trained["holdout"]["gap"].as_f64().unwrap();
    let ordering = trained["holdout"]["ordering_accuracy"].as_f64().unwrap();
    assert!(gap >= 0.2 && ordering >= 0.9, "encoder below the separation bar: gap {gap}, ordering {ordering}");

    let out = dir.path().join("report");
    ok(&[
        "report",
        "--corpus",
        "../../core/data/demo.jsonl",
        "--kinds",
        "original,semantic-100",
        "--metrics",
        "codescore-r-sim",
        "--field",
        "mean-score",
        "--checkpoint",
        ckpt,
        "--pooling",
        "last-avg",
        "--out",
        out.to_str().unwrap(),
    ]);
    let mean = |kind: &str| json(&out.join(format!("report-{kind}.json")))["report"]["mean"][0]["mean_score"]
        .as_f64()
        .unwrap();
    let (original, mutated) = (mean("original"), mean("semantic-100"));
    let drop = original - mutated;
    assert!(drop >= 0.3, "similarity {original:.4} -> {mutated:.4}, drop {drop:.4}");
}
