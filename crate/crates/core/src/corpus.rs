//! Evaluation records and their line-delimited JSON storage.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::code::{Lang, SourceUnit};
use crate::error::{Error, Result};

/// One executable check on a unit.
///
/// `Io` calls the entry function with `input` as its argument list and
/// compares the result with `expected`; both are literals in the unit's
/// language. `Assertion` is a boolean expression (Python may also give a
/// full `assert` statement) evaluated after the unit is loaded.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TestCase {
    Io { input: String, expected: String },
    Assertion(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusRecord {
    pub id: String,
    pub lang: Lang,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nl: Option<String>,
    pub reference: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prediction: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pass1: Option<u8>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tests: Option<Vec<TestCase>>,
    /// Function the `Io` tests call; defaults to the first top-level function.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub entry: Option<String>,
}

impl CorpusRecord {
    pub fn reference_unit(&self) -> SourceUnit {
        SourceUnit::new(self.lang, self.reference.as_str())
    }

    /// The prediction, or the reference when the record has none.
    pub fn prediction_unit(&self) -> SourceUnit {
        SourceUnit::new(
            self.lang,
            self.prediction.as_deref().unwrap_or(&self.reference),
        )
    }

    pub fn passes(&self) -> bool {
        self.pass1 == Some(1)
    }

    fn validate(&self) -> std::result::Result<(), String> {
        if self.id.is_empty() {
            return Err("empty id".into());
        }
        match self.pass1 {
            None | Some(0) | Some(1) => Ok(()),
            Some(v) => Err(format!("pass1 must be 0 or 1, got {v}")),
        }
    }
}

pub fn parse_corpus(reader: impl BufRead) -> Result<Vec<CorpusRecord>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: CorpusRecord = serde_json::from_str(&line).map_err(|e| Error::Corpus {
            line: i + 1,
            reason: e.to_string(),
        })?;
        rec.validate().map_err(|reason| Error::Corpus { line: i + 1, reason })?;
        out.push(rec);
    }
    Ok(out)
}

pub fn read_corpus(path: &Path) -> Result<Vec<CorpusRecord>> {
    parse_corpus(BufReader::new(File::open(path)?))
}

pub fn write_corpus_to(mut w: impl Write, records: &[CorpusRecord]) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_corpus(path: &Path, records: &[CorpusRecord]) -> Result<()> {
    write_corpus_to(BufWriter::new(File::create(path)?), records)
}

/// Result of one test.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TestResult {
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TestOutcome {
    pub passed: bool,
    pub results: Vec<TestResult>,
}

impl TestOutcome {
    pub fn from_results(results: Vec<TestResult>) -> Self {
        TestOutcome {
            passed: results.iter().all(|r| r.passed),
            results,
        }
    }
}

/// Anything that can run a unit's tests.
pub trait TestOracle: Sync {
    fn run(&self, unit: &SourceUnit, tests: &[TestCase], entry: Option<&str>) -> Result<TestOutcome>;
}
