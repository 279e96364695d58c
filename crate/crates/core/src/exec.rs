//! Execution oracle: run a unit's tests, each in its own subprocess (or, for
//! Java without a JDK, its own interpreter instance) with a time limit.

use std::sync::OnceLock;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::code::{Lang, SourceUnit, SyntaxTree};
use crate::corpus::{TestCase, TestOracle, TestOutcome, TestResult};
use crate::error::{Error, Result};
use crate::jvm::{self, Fault, Program};
use crate::par;
use crate::sandbox::{self, DEFAULT_TIMEOUT_SECS};

pub const PYTHON_TEMPLATE: &str = include_str!("../data/templates/python_test.py");
pub const PYTHON_IO_CHECK: &str = include_str!("../data/templates/python_io_check.py");
/// No `site` import (most of the start-up cost, and no third-party
/// packages leak in) and no bytecode written next to the unit.
pub const PYTHON_FLAGS: [&str; 2] = ["-S", "-B"];
pub const JAVA_TEMPLATE: &str = include_str!("../data/templates/JavaMain.java");
pub const JAVA_IO_CHECK: &str = include_str!("../data/templates/java_io_check.java");

/// How Java tests run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum JavaRuntime {
    /// The built-in interpreter for the supported subset.
    #[default]
    Interpreter,
    /// A JDK: compile `Main.java` with `javac`, then run `java -cp . Main`.
    External { javac: String, java: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SandboxConfig {
    pub python: String,
    pub java: JavaRuntime,
    /// Wall-clock limit per test.
    pub timeout_secs: f64,
}

impl Default for SandboxConfig {
    fn default() -> Self {
        SandboxConfig {
            python: "python3".into(),
            java: JavaRuntime::Interpreter,
            timeout_secs: DEFAULT_TIMEOUT_SECS,
        }
    }
}

impl SandboxConfig {
    fn timeout(&self) -> Duration {
        Duration::from_secs_f64(self.timeout_secs.max(0.001))
    }
}

fn fill(template: &str, pairs: &[(&str, &str)]) -> String {
    pairs
        .iter()
        .fold(template.to_owned(), |acc, (k, v)| acc.replace(&format!("{{{{{k}}}}}"), v))
}

/// Name of the first function defined at the top level of `unit`, or the
/// first method of a Java class.
pub fn entry_point(unit: &SourceUnit) -> Option<String> {
    let tree = unit.try_tree().ok()?;
    let is_def = |id| match unit.lang() {
        Lang::Python => tree.node(id).kind == "function_definition",
        Lang::Java => tree.node(id).kind == "method_declaration",
    };
    let top = |id| {
        !tree
            .ancestors(id)
            .any(|a| matches!(tree.node(a).kind, "function_definition" | "lambda"))
    };
    tree.ids()
        .find(|&id| is_def(id) && top(id))
        .and_then(|id| tree.child_by_field(id, "name"))
        .map(|n| unit.node_text(n).to_owned())
}

fn python_check(test: &TestCase, entry: &str) -> String {
    match test {
        TestCase::Io { input, expected } => fill(
            PYTHON_IO_CHECK,
            &[("entry", entry), ("input", input), ("expected", expected)],
        ),
        TestCase::Assertion(a) if a.trim_start().starts_with("assert") => a.clone(),
        TestCase::Assertion(a) => format!("assert ({a})"),
    }
}

/// Source of the single-test Python script.
pub fn python_script(test: &TestCase, entry: &str) -> String {
    fill(PYTHON_TEMPLATE, &[("check", &python_check(test, entry))])
}

/// Source of `Main.java` for one test.
pub fn java_main(unit: &SourceUnit, test: &TestCase, entry: &str) -> String {
    let check = match test {
        TestCase::Io { input, expected } => fill(
            JAVA_IO_CHECK,
            &[("entry", entry), ("input", input), ("expected", expected)],
        ),
        TestCase::Assertion(a) => format!("        if (!({a})) {{ System.exit(1); }}\n"),
    };
    let body: String = unit.text().lines().map(|l| format!("    {l}\n")).collect();
    fill(JAVA_TEMPLATE, &[("check", check.trim_end()), ("unit", body.trim_end())])
}

fn last_line(s: &str) -> String {
    s.lines().rev().find(|l| !l.trim().is_empty()).unwrap_or("").trim().to_owned()
}

/// Runs tests with the configured runtimes.
#[derive(Debug, Default)]
pub struct Executor {
    pub config: SandboxConfig,
    python_ok: OnceLock<bool>,
}

impl Executor {
    pub fn new(config: SandboxConfig) -> Self {
        Executor {
            config,
            python_ok: OnceLock::new(),
        }
    }

    fn python_test(&self, unit: &SourceUnit, test: &TestCase, entry: &str) -> Result<TestResult> {
        let script = python_script(test, entry);
        let mut argv = vec![self.config.python.clone()];
        argv.extend(PYTHON_FLAGS.iter().map(|f| f.to_string()));
        argv.push("test.py".into());
        let out = sandbox::run_with_files(&[("unit.py", unit.text()), ("test.py", &script)], &argv, self.config.timeout())?;
        Ok(TestResult {
            passed: out.success(),
            detail: if out.timed_out {
                format!("timed out after {:.1}s", self.config.timeout_secs)
            } else if out.success() {
                "ok".into()
            } else {
                last_line(&out.stderr)
            },
        })
    }

    fn java_external(&self, unit: &SourceUnit, test: &TestCase, entry: &str, javac: &str, java: &str) -> Result<TestResult> {
        let dir = tempfile::tempdir()?;
        std::fs::write(dir.path().join("Main.java"), java_main(unit, test, entry))?;
        let compiled = sandbox::run_in(dir.path(), &[javac.to_owned(), "Main.java".into()], self.config.timeout())?;
        if !compiled.success() {
            return Ok(TestResult {
                passed: false,
                detail: format!("does not compile: {}", last_line(&compiled.stderr)),
            });
        }
        let argv = [java.to_owned(), "-cp".into(), ".".into(), "Main".into()];
        let out = sandbox::run_in(dir.path(), &argv, self.config.timeout())?;
        Ok(TestResult {
            passed: out.success(),
            detail: if out.success() { "ok".into() } else { last_line(&out.stderr) },
        })
    }

    fn java_interpreted(&self, unit: &SourceUnit, test: &TestCase, entry: &str) -> Result<TestResult> {
        let text = unit.text().to_owned();
        let verdict = jvm::on_large_stack(move || -> std::result::Result<(), Fault> {
            let unit = SourceUnit::new(Lang::Java, text);
            let program = Program::load(&unit)?;
            match test {
                TestCase::Io { input, expected } => {
                    let got = program.call_with_source(entry, input)?;
                    let want = program.eval_source(expected)?;
                    if got.deep_eq(&want) {
                        Ok(())
                    } else {
                        Err(Fault::Exception(format!("expected {want}, got {got}")))
                    }
                }
                TestCase::Assertion(a) => match program.eval_source(a)?.to_string().as_str() {
                    "true" => Ok(()),
                    other => Err(Fault::Exception(format!("assertion `{a}` evaluated to {other}"))),
                },
            }
        });
        match verdict {
            Ok(()) => Ok(TestResult { passed: true, detail: "ok".into() }),
            Err(Fault::Unsupported(what)) => Err(Error::RuntimeUnavailable(
                Lang::Java,
                format!("the built-in interpreter does not support {what}"),
            )),
            Err(Fault::Budget) => Ok(TestResult {
                passed: false,
                detail: "step budget exhausted (treated as a timeout)".into(),
            }),
            Err(Fault::Exception(e)) => Ok(TestResult { passed: false, detail: e }),
        }
    }

    fn run_one(&self, unit: &SourceUnit, test: &TestCase, entry: &str) -> Result<TestResult> {
        match (unit.lang(), &self.config.java) {
            (Lang::Python, _) => self.python_test(unit, test, entry),
            (Lang::Java, JavaRuntime::Interpreter) => self.java_interpreted(unit, test, entry),
            (Lang::Java, JavaRuntime::External { javac, java }) => self.java_external(unit, test, entry, javac, java),
        }
    }

    fn check_runtime(&self, lang: Lang) -> Result<()> {
        let ok = match (lang, &self.config.java) {
            (Lang::Python, _) => *self.python_ok.get_or_init(|| sandbox::available(&self.config.python)),
            (Lang::Java, JavaRuntime::Interpreter) => true,
            (Lang::Java, JavaRuntime::External { javac, .. }) => sandbox::available(javac),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::RuntimeUnavailable(lang, "runtime command cannot be started".into()))
        }
    }
}

impl TestOracle for Executor {
    fn run(&self, unit: &SourceUnit, tests: &[TestCase], entry: Option<&str>) -> Result<TestOutcome> {
        self.check_runtime(unit.lang())?;
        if unit.has_error() {
            let fail = TestResult {
                passed: false,
                detail: "unit does not parse".into(),
            };
            return Ok(TestOutcome::from_results(vec![fail; tests.len().max(1)]));
        }
        let entry = match entry.map(str::to_owned).or_else(|| entry_point(unit)) {
            Some(e) => e,
            None if tests.iter().all(|t| matches!(t, TestCase::Assertion(_))) => String::new(),
            None => return Err(Error::Config("unit defines no function to call".into())),
        };
        let results = par::map(tests, |_, t| self.run_one(unit, t, &entry));
        Ok(TestOutcome::from_results(results.into_iter().collect::<Result<_>>()?))
    }
}

/// Run `tests` against `unit` with a fresh executor.
pub fn execute_tests(unit: &SourceUnit, tests: &[TestCase], entry: Option<&str>, config: &SandboxConfig) -> Result<TestOutcome> {
    Executor::new(config.clone()).run(unit, tests, entry)
}

/// Whether a tree is a bare method or class that the interpreter can load.
pub fn interpretable(tree: &SyntaxTree) -> bool {
    tree.ids().any(|id| tree.node(id).kind == "method_declaration")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn io(input: &str, expected: &str) -> TestCase {
        TestCase::Io {
            input: input.into(),
            expected: expected.into(),
        }
    }

    fn run(lang: Lang, code: &str, tests: &[TestCase]) -> TestOutcome {
        execute_tests(&SourceUnit::new(lang, code), tests, None, &SandboxConfig::default()).unwrap()
    }

    #[test]
    fn python_identity_passes() {
        let out = run(Lang::Python, "def ident(x):\n    return x\n", &[io("5", "5"), TestCase::Assertion("ident([1]) == [1]".into())]);
        assert!(out.passed, "{out:?}");
    }

    #[test]
    fn python_failures_are_reported() {
        let raising = run(Lang::Python, "def f(x):\n    raise ValueError('no')\n", &[io("1", "1")]);
        assert!(!raising.passed);
        assert!(raising.results[0].detail.contains("ValueError"));
        let wrong = run(Lang::Python, "def add(a, b):\n    a = a - b\n    return a\n", &[io("2, 3", "5")]);
        assert!(!wrong.passed);
        let cfg = SandboxConfig {
            timeout_secs: 0.5,
            ..SandboxConfig::default()
        };
        let slow = execute_tests(&SourceUnit::new(Lang::Python, "def f():\n    while True:\n        pass\n"), &[io("", "1")], None, &cfg).unwrap();
        assert!(slow.results[0].detail.contains("timed out"));
    }

    #[test]
    fn java_interpreter_runs_tests() {
        let add = "public static int add(int a, int b) {\n    a = a + b;\n    return a;\n}";
        assert!(run(Lang::Java, add, &[io("2, 3", "5"), TestCase::Assertion("add(1, 1) == 2".into())]).passed);
        assert!(!run(Lang::Java, &add.replace("a + b", "a - b"), &[io("2, 3", "5")]).passed);
        let boom = "static int f(int x) { return 1 / (x - x); }";
        let out = run(Lang::Java, boom, &[io("1", "1")]);
        assert!(out.results[0].detail.contains("ArithmeticException"));
    }

    #[test]
    fn unsupported_java_is_an_error_not_a_failure() {
        let unit = SourceUnit::new(Lang::Java, "int f(int x) { switch (x) { default: return 1; } }");
        let err = execute_tests(&unit, &[io("1", "1")], None, &SandboxConfig::default()).unwrap_err();
        assert!(matches!(err, Error::RuntimeUnavailable(Lang::Java, _)));
    }

    #[test]
    fn unparsable_units_fail_every_test() {
        let out = run(Lang::Python, "def f(:\n", &[io("1", "1"), io("2", "2")]);
        assert_eq!(out.results.len(), 2);
        assert!(!out.passed);
    }

    #[test]
    fn entry_is_first_top_level_function() {
        let u = SourceUnit::new(Lang::Python, "def helper(x):\n    def inner():\n        pass\n    return x\n\ndef main(y):\n    return helper(y)\n");
        assert_eq!(entry_point(&u).as_deref(), Some("helper"));
        let j = SourceUnit::new(Lang::Java, "class A { int g() { return 1; } int h() { return g(); } }");
        assert_eq!(entry_point(&j).as_deref(), Some("g"));
    }

    #[test]
    fn java_main_embeds_unit_and_check() {
        let u = SourceUnit::new(Lang::Java, "static int f(int x) {\n    return x;\n}");
        let src = java_main(&u, &io("3", "3"), "f");
        assert!(src.contains("public class Main {\n    static int f(int x) {"));
        assert!(src.contains("Object result = f(3);"));
        assert!(!src.contains("{{"));
        let py = python_script(&TestCase::Assertion("assert f(1) == 1".into()), "f");
        assert!(py.ends_with("from unit import *\n\nassert f(1) == 1\n"));
    }

    #[test]
    fn missing_runtime_is_reported() {
        let cfg = SandboxConfig {
            python: "no-such-python-xyz".into(),
            ..SandboxConfig::default()
        };
        let err = execute_tests(&SourceUnit::new(Lang::Python, "def f():\n    return 1\n"), &[io("", "1")], None, &cfg).unwrap_err();
        assert!(matches!(err, Error::RuntimeUnavailable(Lang::Python, _)));
    }
}
