use std::path::Path;

use synth_eval::code::Lang;
use synth_eval::corpus::{read_corpus, TestOracle};
use synth_eval::exec::{Executor, SandboxConfig};

fn demo() -> Vec<synth_eval::corpus::CorpusRecord> {
    read_corpus(Path::new(concat!(env!("CARGO_MANIFEST_DIR"), "/data/demo.jsonl"))).unwrap()
}

#[test]
fn demo_covers_both_languages() {
    let recs = demo();
    assert_eq!(recs.len(), 30);
    for lang in [Lang::Python, Lang::Java] {
        assert_eq!(recs.iter().filter(|r| r.lang == lang).count(), 15);
    }
}

#[test]
fn labels_agree_with_execution() {
    let exec = Executor::new(SandboxConfig::default());
    for r in demo() {
        let tests = r.tests.as_deref().unwrap();
        let entry = r.entry.as_deref();
        let reference = exec.run(&r.reference_unit(), tests, entry).unwrap();
        assert!(reference.passed, "{}: reference fails {:?}", r.id, reference.results);
        let pred = exec.run(&r.prediction_unit(), tests, entry).unwrap();
        assert_eq!(u8::from(pred.passed), r.pass1.unwrap(), "{}: {:?}", r.id, pred.results);
    }
}
