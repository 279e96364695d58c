//! Operator mutation: replace one binary, comparison or assignment operator
//! with a different operator of the same class.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use rand::seq::{index, SliceRandom};
use serde::{Deserialize, Serialize};

use crate::code::{apply_rewrites, Lang, NodeId, Rewrite, SourceUnit, SyntaxTree};
use crate::corpus::{CorpusRecord, TestOracle};
use crate::error::{Error, Result};
use crate::par;
use crate::rng::{derive_seed, rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OperatorClass {
    Arithmetic,
    Relational,
    Conditional,
    Shift,
    Logical,
    Assignment,
}

impl OperatorClass {
    pub const ALL: [OperatorClass; 6] = [
        OperatorClass::Arithmetic,
        OperatorClass::Relational,
        OperatorClass::Conditional,
        OperatorClass::Shift,
        OperatorClass::Logical,
        OperatorClass::Assignment,
    ];

    /// Operators of this class that exist in `lang`.
    pub fn inventory(self, lang: Lang) -> &'static [&'static str] {
        use OperatorClass::*;
        match (self, lang) {
            (Arithmetic, Lang::Python) => &["+", "-", "*", "/", "**", "%"],
            (Arithmetic, Lang::Java) => &["+", "-", "*", "/", "%"],
            (Relational, _) => &[">", "<", ">=", "<=", "==", "!="],
            (Conditional, Lang::Python) => &[],
            (Conditional, Lang::Java) => &["&&", "||"],
            (Shift, Lang::Python) => &["<<", ">>"],
            (Shift, Lang::Java) => &["<<", ">>", ">>>"],
            (Logical, _) => &["&", "|", "^"],
            (Assignment, Lang::Python) => {
                &["=", "+=", "-=", "*=", "/=", "%=", "**=", "<<=", ">>="]
            }
            (Assignment, Lang::Java) => {
                &["=", "+=", "-=", "*=", "/=", "%=", "<<=", ">>=", ">>>="]
            }
        }
    }

    pub fn of(op: &str, lang: Lang) -> Option<OperatorClass> {
        OperatorClass::ALL
            .into_iter()
            .find(|c| c.inventory(lang).contains(&op))
    }

    pub fn name(self) -> &'static str {
        match self {
            OperatorClass::Arithmetic => "arithmetic",
            OperatorClass::Relational => "relational",
            OperatorClass::Conditional => "conditional",
            OperatorClass::Shift => "shift",
            OperatorClass::Logical => "logical",
            OperatorClass::Assignment => "assignment",
        }
    }
}

impl fmt::Display for OperatorClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for OperatorClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        OperatorClass::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown operator class `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MutationPlan {
    pub ratio: f64,
    pub seed: u64,
    pub classes: BTreeSet<OperatorClass>,
}

impl MutationPlan {
    pub fn new(ratio: f64, seed: u64, classes: impl IntoIterator<Item = OperatorClass>) -> Result<Self> {
        if !(0.0..=1.0).contains(&ratio) {
            return Err(Error::Config(format!("mutation ratio {ratio} outside [0, 1]")));
        }
        Ok(MutationPlan {
            ratio,
            seed,
            classes: classes.into_iter().collect(),
        })
    }

    pub fn all_classes(ratio: f64, seed: u64) -> Result<Self> {
        Self::new(ratio, seed, OperatorClass::ALL)
    }
}

/// Redraws allowed after a mutant survives its tests.
pub const RETRY_BUDGET: usize = 5;

/// An operator token that may be replaced.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OperatorSite {
    pub node: NodeId,
    pub class: OperatorClass,
    pub op: &'static str,
}

/// Every mutable operator in the unit whose class is in `classes`.
pub fn operator_sites(unit: &SourceUnit, classes: &BTreeSet<OperatorClass>) -> Result<Vec<OperatorSite>> {
    let tree = unit.require_valid()?;
    let lang = unit.lang();
    let mut out = Vec::new();
    for id in tree.ids() {
        let n = tree.node(id);
        if n.named || !n.children.is_empty() {
            continue;
        }
        let Some(parent) = n.parent else { continue };
        if !operator_context(tree, parent, lang) {
            continue;
        }
        let Some(class) = OperatorClass::of(n.kind, lang) else {
            continue;
        };
        if !classes.contains(&class) {
            continue;
        }
        if class == OperatorClass::Assignment && !assignment_mutable(tree, parent, lang) {
            continue;
        }
        let op = class
            .inventory(lang)
            .iter()
            .copied()
            .find(|&o| o == n.kind)
            .expect("class found from inventory");
        out.push(OperatorSite { node: id, class, op });
    }
    Ok(out)
}

fn operator_context(tree: &SyntaxTree, parent: NodeId, lang: Lang) -> bool {
    let kind = tree.node(parent).kind;
    match lang {
        Lang::Python => matches!(
            kind,
            "binary_operator" | "comparison_operator" | "augmented_assignment" | "assignment"
        ),
        Lang::Java => matches!(kind, "binary_expression" | "assignment_expression"),
    }
}

/// Python `=` can only become a compound operator for a single target in a
/// plain statement (`a, b = ...`, `x: int = ...` and `a = b = c` would stop
/// parsing).
fn assignment_mutable(tree: &SyntaxTree, assign: NodeId, lang: Lang) -> bool {
    if lang == Lang::Java {
        return true;
    }
    let n = tree.node(assign);
    if n.kind == "augmented_assignment" {
        return true;
    }
    let stmt = n.parent.is_some_and(|p| tree.node(p).kind == "expression_statement");
    let single = tree
        .child_by_field(assign, "left")
        .is_some_and(|l| matches!(tree.node(l).kind, "identifier" | "attribute" | "subscript"));
    let plain = tree.child_by_field(assign, "type").is_none()
        && tree
            .child_by_field(assign, "right")
            .is_some_and(|r| tree.node(r).kind != "assignment");
    stmt && single && plain
}

/// Replace one randomly chosen operator with a different one of its class.
/// `None` when no operator of the requested classes occurs.
pub fn mutate_unit(
    unit: &SourceUnit,
    classes: &BTreeSet<OperatorClass>,
    seed: u64,
) -> Result<Option<SourceUnit>> {
    let mut sites = operator_sites(unit, classes)?;
    if sites.is_empty() {
        return Ok(None);
    }
    let mut r = rng(seed);
    sites.shuffle(&mut r);
    let tree = unit.tree();
    for site in sites {
        let mut replacements: Vec<&str> = site
            .class
            .inventory(unit.lang())
            .iter()
            .copied()
            .filter(|&o| o != site.op)
            .collect();
        replacements.shuffle(&mut r);
        for rep in replacements {
            let rw = Rewrite::new(tree.node(site.node).span.clone(), rep);
            let out = apply_rewrites(unit, &[rw])?;
            if !out.has_error() {
                return Ok(Some(out));
            }
        }
    }
    Ok(None)
}

/// What happened to one record under [`mutate_corpus`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum MutationOutcome {
    /// Not selected.
    Untouched,
    /// Mutant failed a test; label flipped to 0.
    Killed { attempts: usize },
    /// Every drawn mutant passed all tests.
    Equivalent { attempts: usize },
    /// The prediction has no operator of the requested classes.
    NoSite,
}

/// Mutate a seeded sample of `⌈ratio · passing⌉` passing records.
pub fn mutate_corpus(
    records: &[CorpusRecord],
    plan: &MutationPlan,
    oracle: &dyn TestOracle,
) -> Result<Vec<CorpusRecord>> {
    Ok(mutate_corpus_detailed(records, plan, oracle)?.0)
}

pub fn mutate_corpus_detailed(
    records: &[CorpusRecord],
    plan: &MutationPlan,
    oracle: &dyn TestOracle,
) -> Result<(Vec<CorpusRecord>, Vec<MutationOutcome>)> {
    if !(0.0..=1.0).contains(&plan.ratio) {
        return Err(Error::Config(format!("mutation ratio {} outside [0, 1]", plan.ratio)));
    }
    let passing: Vec<usize> = records
        .iter()
        .enumerate()
        .filter(|(_, r)| r.passes())
        .map(|(i, _)| i)
        .collect();
    let k = ((plan.ratio * passing.len() as f64).ceil() as usize).min(passing.len());
    let mut r = rng(derive_seed(plan.seed, &[0x5e1ec7]));
    let mut selected: Vec<usize> = index::sample(&mut r, passing.len(), k)
        .into_iter()
        .map(|j| passing[j])
        .collect();
    selected.sort_unstable();
    for &i in &selected {
        if records[i].tests.as_ref().map_or(true, |t| t.is_empty()) {
            return Err(Error::MissingTests(records[i].id.clone()));
        }
    }

    let results = par::map(&selected, |_, &i| mutate_record(&records[i], i, plan, oracle));
    let mut out = records.to_vec();
    let mut outcomes = vec![MutationOutcome::Untouched; records.len()];
    for (&i, res) in selected.iter().zip(results) {
        let (mutant, outcome) = res?;
        if let Some(text) = mutant {
            out[i].prediction = Some(text);
            out[i].pass1 = Some(0);
        }
        outcomes[i] = outcome;
    }
    Ok((out, outcomes))
}

fn mutate_record(
    rec: &CorpusRecord,
    index: usize,
    plan: &MutationPlan,
    oracle: &dyn TestOracle,
) -> Result<(Option<String>, MutationOutcome)> {
    let unit = rec.prediction_unit();
    let tests = rec.tests.as_deref().unwrap_or_default();
    for attempt in 0..=RETRY_BUDGET {
        let seed = derive_seed(plan.seed, &[index as u64, attempt as u64]);
        let Some(mutant) = mutate_unit(&unit, &plan.classes, seed)? else {
            log::info!("record {}: no mutable operator", rec.id);
            return Ok((None, MutationOutcome::NoSite));
        };
        let outcome = oracle.run(&mutant, tests, rec.entry.as_deref())?;
        if !outcome.passed {
            return Ok((
                Some(mutant.text().to_owned()),
                MutationOutcome::Killed { attempts: attempt + 1 },
            ));
        }
        log::info!(
            "record {}: equivalent-mutant candidate (attempt {}):\n{}",
            rec.id,
            attempt + 1,
            mutant.text()
        );
    }
    Ok((None, MutationOutcome::Equivalent { attempts: RETRY_BUDGET + 1 }))
}

#[cfg(test)]
mod tests {
    use std::collections::HashSet;

    use super::*;
    use crate::code::tokenize;
    use crate::corpus::{TestCase, TestOutcome};

    fn all() -> BTreeSet<OperatorClass> {
        OperatorClass::ALL.into_iter().collect()
    }

    fn only(c: OperatorClass) -> BTreeSet<OperatorClass> {
        [c].into_iter().collect()
    }

    #[test]
    fn inventories_are_filtered_per_language() {
        let py: Vec<&str> = OperatorClass::ALL
            .iter()
            .flat_map(|c| c.inventory(Lang::Python).iter().copied())
            .collect();
        for op in [">>>", "&&", "||", ">>>="] {
            assert!(!py.contains(&op));
        }
        let java: Vec<&str> = OperatorClass::ALL
            .iter()
            .flat_map(|c| c.inventory(Lang::Java).iter().copied())
            .collect();
        assert!(!java.contains(&"**") && !java.contains(&"**="));
        // each operator belongs to exactly one class
        for lang in Lang::ALL {
            let mut seen = HashSet::new();
            for c in OperatorClass::ALL {
                for op in c.inventory(lang) {
                    assert!(seen.insert(*op), "{op} listed twice");
                }
            }
        }
    }

    #[test]
    fn sum_becomes_difference() {
        let u = SourceUnit::new(Lang::Python, "a = a + b");
        let outs: HashSet<String> = (0..40)
            .filter_map(|s| mutate_unit(&u, &only(OperatorClass::Arithmetic), s).unwrap())
            .map(|m| m.text().to_owned())
            .collect();
        assert!(outs.contains("a = a - b"));
        assert_eq!(outs.len(), 5);
    }

    #[test]
    fn no_operator_means_none() {
        let u = SourceUnit::new(Lang::Python, "return 1");
        assert_eq!(mutate_unit(&u, &all(), 3).unwrap(), None);
    }

    #[test]
    fn relational_replacements_are_the_other_five() {
        let u = SourceUnit::new(Lang::Python, "x > y");
        let expected: HashSet<String> = ["x < y", "x >= y", "x <= y", "x == y", "x != y"]
            .into_iter()
            .map(String::from)
            .collect();
        let mut seen = HashSet::new();
        for seed in 0..100 {
            let m = mutate_unit(&u, &only(OperatorClass::Relational), seed).unwrap().unwrap();
            assert!(expected.contains(m.text()), "{}", m.text());
            seen.insert(m.text().to_owned());
        }
        assert_eq!(seen, expected);
    }

    #[test]
    fn mutation_stays_within_class_and_changes_one_token() {
        let u = SourceUnit::new(
            Lang::Java,
            "int f(int a, int b) { int c = a << 2; if (a > b && b != 0) { c += a % b; } return c | 1; }",
        );
        let before = tokenize(&u);
        for seed in 0..50 {
            let m = mutate_unit(&u, &all(), seed).unwrap().unwrap();
            assert!(!m.has_error());
            let after = tokenize(&m);
            assert_eq!(before.len(), after.len());
            let diffs: Vec<(&String, &String)> =
                before.iter().zip(&after).filter(|(a, b)| a != b).collect();
            assert_eq!(diffs.len(), 1);
            let (a, b) = diffs[0];
            assert_eq!(OperatorClass::of(a, Lang::Java), OperatorClass::of(b, Lang::Java));
        }
    }

    #[test]
    fn python_assignment_guards() {
        for src in ["a, b = 1, 2", "x: int = 3", "a = b = 0", "f(k=1)"] {
            let u = SourceUnit::new(Lang::Python, src);
            assert_eq!(
                mutate_unit(&u, &only(OperatorClass::Assignment), 1).unwrap(),
                None,
                "{src}"
            );
        }
        let u = SourceUnit::new(Lang::Python, "total = 0");
        let m = mutate_unit(&u, &only(OperatorClass::Assignment), 1).unwrap().unwrap();
        assert!(!m.has_error());
    }

    #[test]
    fn generic_brackets_are_not_operators() {
        let u = SourceUnit::new(Lang::Java, "List<Integer> xs = new ArrayList<>();");
        assert_eq!(mutate_unit(&u, &all(), 0).unwrap(), None);
    }

    #[test]
    fn mutate_unit_is_deterministic() {
        let u = SourceUnit::new(Lang::Python, "def f(a, b):\n    return a * b + a - b");
        for seed in 0..10 {
            assert_eq!(
                mutate_unit(&u, &all(), seed).unwrap(),
                mutate_unit(&u, &all(), seed).unwrap()
            );
        }
    }

    /// Kills every mutant whose text differs from the stored reference.
    struct DiffOracle(String);

    impl TestOracle for DiffOracle {
        fn run(&self, unit: &SourceUnit, _: &[TestCase], _: Option<&str>) -> Result<TestOutcome> {
            Ok(TestOutcome::from_results(vec![crate::corpus::TestResult {
                passed: unit.text() == self.0,
                detail: String::new(),
            }]))
        }
    }

    /// Never kills anything.
    struct SurvivorOracle;

    impl TestOracle for SurvivorOracle {
        fn run(&self, _: &SourceUnit, _: &[TestCase], _: Option<&str>) -> Result<TestOutcome> {
            Ok(TestOutcome::from_results(Vec::new()))
        }
    }

    fn corpus(n: usize, passing: usize) -> Vec<CorpusRecord> {
        (0..n)
            .map(|i| CorpusRecord {
                id: format!("r{i}"),
                lang: Lang::Python,
                nl: None,
                reference: "def f(a, b):\n    return a + b".into(),
                prediction: Some("def f(a, b):\n    return a + b".into()),
                pass1: Some(u8::from(i < passing)),
                tests: Some(vec![TestCase::Io {
                    input: "2, 3".into(),
                    expected: "5".into(),
                }]),
                entry: None,
            })
            .collect()
    }

    #[test]
    fn corpus_ratio_selects_ceiling_of_passing() {
        let recs = corpus(10, 8);
        let oracle = DiffOracle(recs[0].reference.clone());
        let plan = MutationPlan::all_classes(0.25, 9).unwrap();
        let out = mutate_corpus(&recs, &plan, &oracle).unwrap();
        let changed = out.iter().zip(&recs).filter(|(a, b)| a != b).count();
        assert_eq!(changed, 2);
        assert!(out.iter().zip(&recs).all(|(a, b)| a == b || (b.pass1 == Some(1) && a.pass1 == Some(0))));
        assert_eq!(mutate_corpus(&recs, &plan, &oracle).unwrap(), out);
    }

    #[test]
    fn ratio_zero_and_one() {
        let recs = corpus(6, 4);
        let oracle = DiffOracle(recs[0].reference.clone());
        let zero = MutationPlan::all_classes(0.0, 1).unwrap();
        assert_eq!(mutate_corpus(&recs, &zero, &oracle).unwrap(), recs);
        let one = MutationPlan::all_classes(1.0, 1).unwrap();
        let out = mutate_corpus(&recs, &one, &oracle).unwrap();
        assert!(out.iter().all(|r| r.pass1 == Some(0)));
    }

    #[test]
    fn equivalent_mutants_leave_records_alone() {
        let recs = corpus(3, 3);
        let plan = MutationPlan::all_classes(1.0, 4).unwrap();
        let (out, outcomes) = mutate_corpus_detailed(&recs, &plan, &SurvivorOracle).unwrap();
        assert_eq!(out, recs);
        assert!(outcomes
            .iter()
            .all(|o| *o == MutationOutcome::Equivalent { attempts: RETRY_BUDGET + 1 }));
    }

    #[test]
    fn selected_record_without_tests_is_an_error() {
        let mut recs = corpus(2, 2);
        recs[1].tests = None;
        let plan = MutationPlan::all_classes(1.0, 0).unwrap();
        assert!(matches!(
            mutate_corpus(&recs, &plan, &SurvivorOracle),
            Err(Error::MissingTests(id)) if id == "r1"
        ));
        assert!(MutationPlan::all_classes(1.5, 0).is_err());
    }
}
