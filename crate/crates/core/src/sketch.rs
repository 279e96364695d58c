//! Identifier sketching: user-defined function, parameter and variable names
//! are replaced by canonical placeholders so that naming style cannot move a
//! metric.
//!
//! A name is classified by the syntactic position of its defining
//! occurrences (function-definition name, formal parameter, assignment
//! target, declarator, loop variable). Every occurrence of a classified name
//! is then rewritten, except positions that refer to API surface: attribute
//! and field names, keyword-argument names, qualified method names, imports.

use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::code::{apply_rewrites, Lang, NodeId, Rewrite, SourceUnit, SyntaxTree};
use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IdentifierClass {
    FunctionName,
    Parameter,
    LocalVariable,
    Other,
}

impl IdentifierClass {
    fn priority(self) -> u8 {
        match self {
            IdentifierClass::FunctionName => 3,
            IdentifierClass::Parameter => 2,
            IdentifierClass::LocalVariable => 1,
            IdentifierClass::Other => 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SketchEntry {
    pub original: String,
    pub placeholder: String,
    pub class: IdentifierClass,
}

/// Original name → placeholder, in the order placeholders were assigned.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SketchMap {
    pub entries: Vec<SketchEntry>,
}

impl SketchMap {
    pub fn get(&self, original: &str) -> Option<&str> {
        self.entries
            .iter()
            .find(|e| e.original == original)
            .map(|e| e.placeholder.as_str())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn count(&self, class: IdentifierClass) -> usize {
        self.entries.iter().filter(|e| e.class == class).count()
    }

    fn as_mapping(&self) -> HashMap<&str, &str> {
        self.entries
            .iter()
            .map(|e| (e.original.as_str(), e.placeholder.as_str()))
            .collect()
    }
}

/// A user-defined name with its class and the byte offset of its first
/// defining occurrence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UserIdentifier {
    pub name: String,
    pub class: IdentifierClass,
    pub first_def: usize,
}

/// Replace user identifiers by `f`, `arg_k`, `var_k`.
pub fn sketch(unit: &SourceUnit) -> Result<(SourceUnit, SketchMap)> {
    let idents = user_identifiers(unit)?;
    let mut params = 0usize;
    let mut vars = 0usize;
    let mut entries = Vec::with_capacity(idents.len());
    for id in &idents {
        let placeholder = match id.class {
            IdentifierClass::FunctionName => "f".to_owned(),
            IdentifierClass::Parameter => {
                params += 1;
                format!("arg_{}", params - 1)
            }
            IdentifierClass::LocalVariable => {
                vars += 1;
                format!("var_{}", vars - 1)
            }
            IdentifierClass::Other => continue,
        };
        entries.push(SketchEntry {
            original: id.name.clone(),
            placeholder,
            class: id.class,
        });
    }
    let map = SketchMap { entries };
    let mapping = map.as_mapping();
    let out = rewrite_names(unit, &|name| mapping.get(name).map(|s| s.to_string()))?;
    Ok((out, map))
}

/// Sketch and drop the map.
pub fn sketch_unit(unit: &SourceUnit) -> Result<SourceUnit> {
    sketch(unit).map(|(u, _)| u)
}

/// Consistently rename user identifiers. Names absent from `mapping` are
/// left alone; positions that sketching would not touch are not touched.
pub fn rename_identifiers(
    unit: &SourceUnit,
    mapping: &HashMap<String, String>,
) -> Result<SourceUnit> {
    rewrite_names(unit, &|name| mapping.get(name).cloned())
}

fn rewrite_names(
    unit: &SourceUnit,
    lookup: &dyn Fn(&str) -> Option<String>,
) -> Result<SourceUnit> {
    let tree = unit.require_valid()?;
    let text = unit.text();
    let mut rewrites = Vec::new();
    for id in renamable_occurrences(unit.lang(), tree) {
        let name = tree.text(id, text);
        if let Some(new) = lookup(name) {
            if new != name {
                rewrites.push(Rewrite::new(tree.node(id).span.clone(), new));
            }
        }
    }
    apply_rewrites(unit, &rewrites)
}

/// User-defined names ordered by class priority (function names first),
/// then by first defining occurrence.
pub fn user_identifiers(unit: &SourceUnit) -> Result<Vec<UserIdentifier>> {
    let tree = unit.require_valid()?;
    let text = unit.text();
    let mut by_name: HashMap<&str, UserIdentifier> = HashMap::new();
    for id in tree.ids() {
        if tree.node(id).kind != "identifier" {
            continue;
        }
        let class = classify_definition(unit.lang(), tree, text, id);
        if class == IdentifierClass::Other {
            continue;
        }
        let name = tree.text(id, text);
        let pos = tree.node(id).span.start;
        by_name
            .entry(name)
            .and_modify(|u| {
                if class.priority() > u.class.priority() {
                    u.class = class;
                    u.first_def = pos;
                }
            })
            .or_insert(UserIdentifier {
                name: name.to_owned(),
                class,
                first_def: pos,
            });
    }
    // priority changes can move first_def; recompute it per final class
    let mut firsts: HashMap<&str, usize> = HashMap::new();
    for id in tree.ids() {
        if tree.node(id).kind != "identifier" {
            continue;
        }
        let name = tree.text(id, text);
        if let Some(u) = by_name.get(name) {
            if classify_definition(unit.lang(), tree, text, id) == u.class {
                firsts.entry(name).or_insert(tree.node(id).span.start);
            }
        }
    }
    let mut out: Vec<UserIdentifier> = by_name
        .into_values()
        .map(|mut u| {
            u.first_def = firsts[u.name.as_str()];
            u
        })
        .collect();
    out.sort_by(|a, b| {
        b.class
            .priority()
            .cmp(&a.class.priority())
            .then(a.first_def.cmp(&b.first_def))
            .then(a.name.cmp(&b.name))
    });
    Ok(out)
}

/// Class of the identifier leaf `id` if it is a defining occurrence.
pub fn classify_definition(lang: Lang, tree: &SyntaxTree, text: &str, id: NodeId) -> IdentifierClass {
    match lang {
        Lang::Python => classify_python(tree, text, id),
        Lang::Java => classify_java(tree, id),
    }
}

fn classify_python(tree: &SyntaxTree, text: &str, id: NodeId) -> IdentifierClass {
    let node = tree.node(id);
    let Some(parent) = node.parent else {
        return IdentifierClass::Other;
    };
    let pk = tree.node(parent).kind;
    match (pk, node.field) {
        ("function_definition", Some("name")) => {
            let name = tree.text(id, text);
            let in_class_body = tree
                .parent(parent)
                .and_then(|block| tree.parent(block))
                .is_some_and(|c| tree.node(c).kind == "class_definition");
            if in_class_body || (name.starts_with("__") && name.ends_with("__")) {
                IdentifierClass::Other
            } else {
                IdentifierClass::FunctionName
            }
        }
        ("parameters" | "lambda_parameters", _) => IdentifierClass::Parameter,
        ("default_parameter" | "typed_default_parameter", Some("name")) => {
            IdentifierClass::Parameter
        }
        ("typed_parameter", None) => IdentifierClass::Parameter,
        ("list_splat_pattern" | "dictionary_splat_pattern", _) => {
            let gp = tree.parent(parent).map(|g| tree.node(g).kind);
            match gp {
                Some("parameters" | "lambda_parameters" | "typed_parameter") => {
                    IdentifierClass::Parameter
                }
                _ => python_target(tree, id),
            }
        }
        ("named_expression", Some("name")) => IdentifierClass::LocalVariable,
        _ => python_target(tree, id),
    }
}

/// Python assignment, augmented-assignment, for-loop and comprehension
/// targets, possibly nested in tuple/list patterns.
fn python_target(tree: &SyntaxTree, id: NodeId) -> IdentifierClass {
    let mut cur = id;
    loop {
        let node = tree.node(cur);
        let Some(parent) = node.parent else {
            return IdentifierClass::Other;
        };
        let pk = tree.node(parent).kind;
        match pk {
            "pattern_list" | "tuple_pattern" | "list_pattern" | "list_splat_pattern" => {
                cur = parent;
            }
            "assignment" | "augmented_assignment" | "for_statement" | "for_in_clause"
                if node.field == Some("left") =>
            {
                return IdentifierClass::LocalVariable;
            }
            _ => return IdentifierClass::Other,
        }
    }
}

fn classify_java(tree: &SyntaxTree, id: NodeId) -> IdentifierClass {
    let node = tree.node(id);
    let Some(parent) = node.parent else {
        return IdentifierClass::Other;
    };
    let pk = tree.node(parent).kind;
    match (pk, node.field) {
        ("method_declaration", Some("name")) => IdentifierClass::FunctionName,
        ("formal_parameter", Some("name")) => IdentifierClass::Parameter,
        ("inferred_parameters", _) => IdentifierClass::Parameter,
        ("lambda_expression", Some("parameters")) => IdentifierClass::Parameter,
        ("variable_declarator", Some("name")) => {
            match tree.parent(parent).map(|g| tree.node(g).kind) {
                Some("spread_parameter") => IdentifierClass::Parameter,
                Some("local_variable_declaration") => IdentifierClass::LocalVariable,
                _ => IdentifierClass::Other,
            }
        }
        ("enhanced_for_statement", Some("name"))
        | ("catch_formal_parameter", Some("name"))
        | ("resource", Some("name")) => IdentifierClass::LocalVariable,
        ("assignment_expression", Some("left")) => IdentifierClass::LocalVariable,
        _ => IdentifierClass::Other,
    }
}

/// Identifier leaves that denote a (possibly user-defined) name and may be
/// rewritten.
fn renamable_occurrences(lang: Lang, tree: &SyntaxTree) -> Vec<NodeId> {
    let mut excluded: HashSet<NodeId> = HashSet::new();
    for id in tree.ids() {
        let n = tree.node(id);
        match (lang, n.kind) {
            (Lang::Python, "import_statement" | "import_from_statement" | "future_import_statement")
            | (Lang::Java, "import_declaration" | "package_declaration") => {
                excluded.extend(tree.descendants(id));
            }
            _ => {}
        }
    }
    tree.ids()
        .filter(|&id| tree.node(id).kind == "identifier" && !excluded.contains(&id))
        .filter(|&id| {
            let node = tree.node(id);
            let Some(parent) = node.parent else {
                return true;
            };
            let pk = tree.node(parent).kind;
            match lang {
                Lang::Python => !matches!(
                    (pk, node.field),
                    ("attribute", Some("attribute")) | ("keyword_argument", Some("name"))
                ),
                Lang::Java => match (pk, node.field) {
                    ("field_access", Some("field")) => false,
                    ("method_invocation", Some("name")) => {
                        match tree.child_by_field(parent, "object") {
                            None => true,
                            Some(obj) => tree.node(obj).kind == "this",
                        }
                    }
                    ("labeled_statement" | "break_statement" | "continue_statement", _) => false,
                    _ => true,
                },
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::code::tokenize;

    fn py(s: &str) -> SourceUnit {
        SourceUnit::new(Lang::Python, s)
    }

    fn java(s: &str) -> SourceUnit {
        SourceUnit::new(Lang::Java, s)
    }

    #[test]
    fn figure_one_reference() {
        let (out, map) = sketch(&py("def sum (a , b) :\n    a = a + b\n    return a")).unwrap();
        assert_eq!(
            out.text(),
            "def f (arg_0 , arg_1) :\n    arg_0 = arg_0 + arg_1\n    return arg_0"
        );
        assert_eq!(map.get("sum"), Some("f"));
        assert_eq!(map.get("a"), Some("arg_0"));
        assert_eq!(map.get("b"), Some("arg_1"));
        assert_eq!(map.len(), 3);
    }

    #[test]
    fn no_user_identifiers_is_identity() {
        let (out, map) = sketch(&py("return 1 + 2")).unwrap();
        assert_eq!(out.text(), "return 1 + 2");
        assert!(map.is_empty());
    }

    #[test]
    fn parameters_before_locals() {
        let (out, _) = sketch(&py("def g(x):\n    y = x\n    return y")).unwrap();
        assert_eq!(out.text(), "def f(arg_0):\n    var_0 = arg_0\n    return var_0");
    }

    #[test]
    fn parse_error_is_rejected() {
        assert!(sketch(&py("def f(: return")).is_err());
    }

    #[test]
    fn attributes_keywords_and_builtins_untouched() {
        let src = "import math\ndef area(r, items):\n    total = 0\n    for it in items:\n        total += math.floor(it.size)\n    return sorted([total], key=abs)[0] + len(items) + r";
        let (out, map) = sketch(&py(src)).unwrap();
        assert_eq!(
            out.text(),
            "import math\ndef f(arg_0, arg_1):\n    var_0 = 0\n    for var_1 in arg_1:\n        var_0 += math.floor(var_1.size)\n    return sorted([var_0], key=abs)[0] + len(arg_1) + arg_0"
        );
        assert_eq!(map.count(IdentifierClass::LocalVariable), 2);
    }

    #[test]
    fn recursion_call_sites_follow_function_name() {
        let (out, _) = sketch(&py(
            "def fib(n):\n    if n < 2:\n        return n\n    return fib(n - 1) + fib(n - 2)",
        ))
        .unwrap();
        assert_eq!(
            out.text(),
            "def f(arg_0):\n    if arg_0 < 2:\n        return arg_0\n    return f(arg_0 - 1) + f(arg_0 - 2)"
        );
    }

    #[test]
    fn tuple_targets_and_comprehensions() {
        let (out, _) = sketch(&py(
            "def h(xs):\n    a, b = 0, 1\n    ys = [v * 2 for v in xs]\n    return a + b + sum(ys)",
        ))
        .unwrap();
        assert_eq!(
            out.text(),
            "def f(arg_0):\n    var_0, var_1 = 0, 1\n    var_2 = [var_3 * 2 for var_3 in arg_0]\n    return var_0 + var_1 + sum(var_2)"
        );
    }

    #[test]
    fn default_and_splat_parameters() {
        let (out, _) = sketch(&py("def h(a, b=2, *rest, **kw):\n    return a + b")).unwrap();
        assert_eq!(out.text(), "def f(arg_0, arg_1=2, *arg_2, **arg_3):\n    return arg_0 + arg_1");
    }

    #[test]
    fn methods_keep_their_names() {
        let (out, _) = sketch(&py(
            "class A:\n    def __init__(self, v):\n        self.v = v\n    def get(self):\n        return self.v\n",
        ))
        .unwrap();
        assert_eq!(
            out.text(),
            "class A:\n    def __init__(arg_0, arg_1):\n        arg_0.v = arg_1\n    def get(arg_0):\n        return arg_0.v\n"
        );
    }

    #[test]
    fn java_method() {
        let src = "public int sumTo(int n) {\n    int total = 0;\n    for (int i = 0; i < n; i++) {\n        total += i;\n    }\n    return Math.max(total, helper.size());\n}";
        let (out, _) = sketch(&java(src)).unwrap();
        assert_eq!(
            out.text(),
            "public int f(int arg_0) {\n    int var_0 = 0;\n    for (int var_1 = 0; var_1 < arg_0; var_1++) {\n        var_0 += var_1;\n    }\n    return Math.max(var_0, helper.size());\n}"
        );
    }

    #[test]
    fn java_fields_and_qualified_calls() {
        let src = "int g(int[] arr) { int len = arr.length; return g(arr) + this.g(arr) + len; }";
        let (out, _) = sketch(&java(src)).unwrap();
        assert_eq!(
            out.text(),
            "int f(int[] arg_0) { int var_0 = arg_0.length; return f(arg_0) + this.f(arg_0) + var_0; }"
        );
    }

    #[test]
    fn idempotent_on_examples() {
        for src in [
            "def sum (a , b) :\n    a = a + b\n    return a",
            "def g(x):\n    y = x\n    z = [y for y in range(x)]\n    return y",
            "def h(a, b=2, *rest, **kw):\n    q = a\n    return q + b",
        ] {
            let once = sketch_unit(&py(src)).unwrap();
            let twice = sketch_unit(&once).unwrap();
            assert_eq!(once.text(), twice.text());
        }
    }

    #[test]
    fn rename_then_sketch_is_invariant() {
        let src = "def count_pos(values):\n    n = 0\n    for v in values:\n        if v > 0:\n            n += 1\n    return n";
        let u = py(src);
        let mapping: HashMap<String, String> = [
            ("count_pos", "cntPositive"),
            ("values", "xs"),
            ("n", "acc"),
            ("v", "item"),
        ]
        .into_iter()
        .map(|(a, b)| (a.to_owned(), b.to_owned()))
        .collect();
        let renamed = rename_identifiers(&u, &mapping).unwrap();
        assert!(renamed.text().contains("cntPositive(xs)"));
        assert_eq!(sketch_unit(&renamed).unwrap().text(), sketch_unit(&u).unwrap().text());
    }

    #[test]
    fn sketched_output_reparses_and_token_count_is_stable() {
        let u = py("def g(x):\n    y = x * 2\n    return y");
        let s = sketch_unit(&u).unwrap();
        assert!(!s.has_error());
        assert_eq!(tokenize(&u).len(), tokenize(&s).len());
    }

    #[test]
    fn sketch_map_is_deterministic() {
        let u = py("def g(x, y):\n    a = x\n    b = y\n    return a + b");
        assert_eq!(sketch(&u).unwrap().1, sketch(&u).unwrap().1);
    }
}
