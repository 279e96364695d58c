//! Seeded generator of small arithmetic functions with loops and
//! conditionals, in Python or Java, for training and held-out checks.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::code::Lang;
use crate::rng::{derive_seed, rng};
use crate::trainer::TrainingRecord;

const FUNCTION_NAMES: [&str; 12] = [
    "compute", "solve", "combine", "accumulate", "blend", "measure", "scan", "fold", "mix",
    "tally", "score", "reduce_all",
];
const PARAMS: [&str; 8] = ["a", "b", "n", "x", "y", "m", "lo", "hi"];
const LOCALS: [&str; 10] = ["total", "acc", "res", "tmp", "val", "cnt", "cur", "best", "diff", "prod"];
const ARITH: [&str; 3] = ["+", "-", "*"];
const BITWISE: [&str; 3] = ["&", "|", "^"];
const COMPARE: [&str; 6] = ["<", "<=", ">", ">=", "==", "!="];

struct Gen {
    r: ChaCha8Rng,
    lang: Lang,
    scope: Vec<String>,
    fresh: usize,
    lines: Vec<String>,
    words: Vec<&'static str>,
}

impl Gen {
    fn indent(&self, depth: usize) -> String {
        "    ".repeat(depth + 1)
    }

    fn line(&mut self, depth: usize, s: String) {
        let pad = self.indent(depth);
        self.lines.push(format!("{pad}{s}"));
    }

    fn end(&self) -> &'static str {
        if self.lang == Lang::Java {
            ";"
        } else {
            ""
        }
    }

    fn atom(&mut self) -> String {
        if self.r.gen_bool(0.75) {
            self.scope.choose(&mut self.r).cloned().unwrap_or_else(|| "1".into())
        } else {
            self.r.gen_range(1..10).to_string()
        }
    }

    fn op(&mut self) -> &'static str {
        if self.r.gen_bool(0.1) {
            BITWISE.choose(&mut self.r).unwrap()
        } else {
            ARITH.choose(&mut self.r).unwrap()
        }
    }

    fn expr(&mut self) -> String {
        let (a, op, b) = (self.atom(), self.op(), self.atom());
        if self.r.gen_bool(0.25) {
            let (op2, c) = (self.op(), self.atom());
            format!("{a} {op} {b} {op2} {c}")
        } else {
            format!("{a} {op} {b}")
        }
    }

    fn cond(&mut self) -> String {
        let a = self.atom();
        let op = COMPARE.choose(&mut self.r).unwrap();
        let b = self.atom();
        format!("{a} {op} {b}")
    }

    fn new_local(&mut self) -> String {
        self.fresh += 1;
        let base = LOCALS.choose(&mut self.r).unwrap();
        let name = format!("{base}{}", self.fresh);
        name
    }

    fn target(&mut self) -> String {
        let locals: Vec<String> = self.scope.iter().filter(|v| !PARAMS.contains(&v.as_str())).cloned().collect();
        locals.choose(&mut self.r).cloned().unwrap_or_else(|| self.scope[0].clone())
    }

    fn assign_new(&mut self, depth: usize) {
        let e = self.expr();
        let v = self.new_local();
        let decl = if self.lang == Lang::Java { "int " } else { "" };
        self.line(depth, format!("{decl}{v} = {e}{}", self.end()));
        self.scope.push(v);
        self.words.push("store");
    }

    fn assign(&mut self, depth: usize) {
        let t = self.target();
        let e = self.expr();
        self.line(depth, format!("{t} = {e}{}", self.end()));
        self.words.push("update");
    }

    fn aug(&mut self, depth: usize) {
        let t = self.target();
        let op = self.op();
        let a = self.atom();
        self.line(depth, format!("{t} {op}= {a}{}", self.end()));
        self.words.push("adjust");
    }

    fn simple(&mut self, depth: usize) {
        if self.r.gen_bool(0.5) {
            self.aug(depth)
        } else {
            self.assign(depth)
        }
    }

    fn loop_var(&mut self) -> String {
        self.fresh += 1;
        format!("{}{}", ["i", "j", "k"].choose(&mut self.r).unwrap(), self.fresh)
    }

    fn bound(&mut self) -> String {
        let params: Vec<String> = self.scope.iter().filter(|v| PARAMS.contains(&v.as_str())).cloned().collect();
        if self.r.gen_bool(0.7) {
            params.choose(&mut self.r).cloned().unwrap_or_else(|| "10".into())
        } else {
            self.r.gen_range(3..12).to_string()
        }
    }

    fn body(&mut self, depth: usize, k: &str) {
        let t = self.target();
        let op = self.op();
        match self.lang {
            Lang::Python => self.line(depth, format!("{t} {op}= {k}")),
            Lang::Java => self.line(depth, format!("{t} {op}= {k};")),
        }
        if self.r.gen_bool(0.4) {
            self.simple(depth);
        }
    }

    fn for_loop(&mut self, depth: usize) {
        let k = self.loop_var();
        let lo = self.r.gen_range(0..3);
        let hi = self.bound();
        match self.lang {
            Lang::Python => {
                if lo == 0 && self.r.gen_bool(0.5) {
                    self.line(depth, format!("for {k} in range({hi}):"));
                } else {
                    self.line(depth, format!("for {k} in range({lo}, {hi}):"));
                }
                self.scope.push(k.clone());
                self.body(depth + 1, &k);
            }
            Lang::Java => {
                self.line(depth, format!("for (int {k} = {lo}; {k} < {hi}; {k}++) {{"));
                self.scope.push(k.clone());
                self.body(depth + 1, &k);
                self.line(depth, "}".into());
            }
        }
        self.scope.retain(|v| v != &k);
        self.words.extend(["loop", "over", "range"]);
    }

    fn while_loop(&mut self, depth: usize) {
        let k = self.loop_var();
        let hi = self.bound();
        match self.lang {
            Lang::Python => {
                self.line(depth, format!("{k} = 0"));
                self.line(depth, format!("while {k} < {hi}:"));
                self.scope.push(k.clone());
                self.body(depth + 1, &k);
                self.line(depth + 1, format!("{k} += 1"));
            }
            Lang::Java => {
                self.line(depth, format!("int {k} = 0;"));
                self.line(depth, format!("while ({k} < {hi}) {{"));
                self.scope.push(k.clone());
                self.body(depth + 1, &k);
                self.line(depth + 1, format!("{k}++;"));
                self.line(depth, "}".into());
            }
        }
        self.scope.retain(|v| v != &k);
        self.words.extend(["repeat", "while", "below"]);
    }

    fn branch(&mut self, depth: usize, with_else: bool) {
        let c = self.cond();
        match self.lang {
            Lang::Python => {
                self.line(depth, format!("if {c}:"));
                self.simple(depth + 1);
                if with_else {
                    self.line(depth, "else:".into());
                    self.simple(depth + 1);
                }
            }
            Lang::Java => {
                self.line(depth, format!("if ({c}) {{"));
                self.simple(depth + 1);
                if with_else {
                    self.line(depth, "} else {".into());
                    self.simple(depth + 1);
                }
                self.line(depth, "}".into());
            }
        }
        self.words.extend(["check", "whether", "condition"]);
    }

    fn statement(&mut self) {
        match self.r.gen_range(0..10) {
            0 | 1 => self.assign_new(0),
            2 => self.assign(0),
            3 => self.aug(0),
            4 | 5 => self.for_loop(0),
            6 => self.while_loop(0),
            7 | 8 => self.branch(0, true),
            _ => self.branch(0, false),
        }
    }
}

/// One generated function.
pub fn synthetic_unit(lang: Lang, seed: u64) -> (String, String) {
    let mut r = rng(seed);
    let name = FUNCTION_NAMES.choose(&mut r).unwrap().to_string();
    let mut params: Vec<&str> = PARAMS.to_vec();
    params.shuffle(&mut r);
    let arity = r.gen_range(1..=3);
    let params: Vec<String> = params[..arity].iter().map(|s| s.to_string()).collect();
    let mut g = Gen {
        r,
        lang,
        scope: params.clone(),
        fresh: 0,
        lines: Vec::new(),
        words: vec!["compute", "a", "value", "from"],
    };
    g.assign_new(0);
    let n = g.r.gen_range(2..=4);
    for _ in 0..n {
        g.statement();
    }
    let ret = if g.r.gen_bool(0.5) {
        g.target()
    } else {
        let t = g.target();
        let op = g.op();
        let a = g.atom();
        format!("{t} {op} {a}")
    };
    g.line(0, format!("return {ret}{}", g.end()));
    g.words.extend(["and", "return", "it"]);
    let code = match lang {
        Lang::Python => format!("def {name}({}):\n{}\n", params.join(", "), g.lines.join("\n")),
        Lang::Java => {
            let ps: Vec<String> = params.iter().map(|p| format!("int {p}")).collect();
            format!(
                "public static int {name}({}) {{\n{}\n}}\n",
                ps.join(", "),
                g.lines.join("\n")
            )
        }
    };
    let mut words = g.words;
    words.dedup();
    (words.join(" "), code)
}

/// `n` generated functions, alternating languages from `langs`.
pub fn synthetic_corpus(n: usize, seed: u64, langs: &[Lang]) -> Vec<TrainingRecord> {
    let langs = if langs.is_empty() { &[Lang::Python][..] } else { langs };
    (0..n)
        .map(|i| {
            let lang = langs[i % langs.len()];
            let (nl, code) = synthetic_unit(lang, derive_seed(seed, &[i as u64]));
            TrainingRecord {
                id: format!("synth-{i}"),
                lang,
                nl,
                code,
            }
        })
        .collect()
}
