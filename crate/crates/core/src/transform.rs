//! Semantics-preserving syntactic rewrites: loop exchange, expression
//! exchange, branch permutation and condition exchange.
//!
//! Every rule only fires on shapes where equivalence holds without dataflow
//! analysis. The guards are conservative: a loop whose variable is read after
//! the loop, whose bound may change inside the body, or which contains a
//! `continue` is left alone.

use std::collections::HashSet;
use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::code::{
    apply_rewrites, indent_at, same_line, tokenize, Lang, NodeId, Rewrite, SourceUnit, SyntaxTree,
};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransformRule {
    LoopExchange,
    ExpressionExchange,
    PermuteExchange,
    ConditionExchange,
}

impl TransformRule {
    pub const ALL: [TransformRule; 4] = [
        TransformRule::LoopExchange,
        TransformRule::ExpressionExchange,
        TransformRule::PermuteExchange,
        TransformRule::ConditionExchange,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TransformRule::LoopExchange => "loop",
            TransformRule::ExpressionExchange => "expr",
            TransformRule::PermuteExchange => "permute",
            TransformRule::ConditionExchange => "cond",
        }
    }
}

impl fmt::Display for TransformRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TransformRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "loop" | "loop_exchange" => TransformRule::LoopExchange,
            "expr" | "expression" | "expression_exchange" => TransformRule::ExpressionExchange,
            "permute" | "permute_exchange" => TransformRule::PermuteExchange,
            "cond" | "condition" | "condition_exchange" => TransformRule::ConditionExchange,
            other => return Err(Error::Config(format!("unknown transform rule `{other}`"))),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Forward,
    Backward,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TransformSite {
    pub rule: TransformRule,
    pub anchor: Range<usize>,
    pub direction: Direction,
}

struct Candidate {
    site: TransformSite,
    rewrites: Vec<Rewrite>,
}

/// Sites where one of `rules` applies, ordered by anchor start.
pub fn find_sites(unit: &SourceUnit, rules: &[TransformRule]) -> Result<Vec<TransformSite>> {
    Ok(candidates(unit, rules)?.into_iter().map(|c| c.site).collect())
}

/// Apply one site found on this exact unit.
pub fn apply_transform(unit: &SourceUnit, site: &TransformSite) -> Result<SourceUnit> {
    let found = candidates(unit, &[site.rule])?
        .into_iter()
        .find(|c| c.site == *site)
        .ok_or_else(|| Error::StaleSite(site.anchor.clone()))?;
    let out = apply_rewrites(unit, &found.rewrites)?;
    if out.has_error() {
        return Err(Error::ParseErrorInput(unit.lang()));
    }
    Ok(out)
}

/// Apply a uniformly drawn nonempty subset of the applicable sites.
/// `None` when nothing applies (or the unit does not parse).
pub fn sample_variant(unit: &SourceUnit, rules: &[TransformRule], seed: u64) -> Option<SourceUnit> {
    let sites = find_sites(unit, rules).ok()?;
    if sites.is_empty() {
        return None;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let chosen: Vec<&TransformSite> = loop {
        let pick: Vec<&TransformSite> = sites.iter().filter(|_| rng.gen_bool(0.5)).collect();
        if !pick.is_empty() {
            break pick;
        }
    };
    let mut current = unit.clone();
    let mut applied = 0;
    // descending start: outer sites keep their start offset when inner ones change
    for site in chosen.iter().rev() {
        let Ok(cands) = candidates(&current, &[site.rule]) else {
            continue;
        };
        let Some(c) = cands.into_iter().find(|c| {
            c.site.direction == site.direction && c.site.anchor.start == site.anchor.start
        }) else {
            continue;
        };
        match apply_rewrites(&current, &c.rewrites) {
            Ok(next) if !next.has_error() => {
                current = next;
                applied += 1;
            }
            _ => log::warn!("transform at {:?} produced unparsable code; skipped", c.site.anchor),
        }
    }
    if applied == 0 || tokenize(&current) == tokenize(unit) {
        return None;
    }
    Some(current)
}

fn candidates(unit: &SourceUnit, rules: &[TransformRule]) -> Result<Vec<Candidate>> {
    let tree = unit.require_valid()?;
    let cx = Cx {
        lang: unit.lang(),
        tree,
        text: unit.text(),
    };
    let mut out = Vec::new();
    for id in tree.ids() {
        for &rule in &TransformRule::ALL {
            if !rules.contains(&rule) {
                continue;
            }
            let found = match rule {
                TransformRule::LoopExchange => cx.loop_exchange(id),
                TransformRule::ExpressionExchange => cx.expression_exchange(id),
                TransformRule::PermuteExchange => cx.permute_exchange(id),
                TransformRule::ConditionExchange => cx.condition_exchange(id),
            };
            if let Some((direction, rewrites)) = found {
                out.push(Candidate {
                    site: TransformSite {
                        rule,
                        anchor: tree.node(id).span.clone(),
                        direction,
                    },
                    rewrites,
                });
            }
        }
    }
    out.sort_by_key(|c| (c.site.anchor.start, c.site.rule, c.site.anchor.end));
    Ok(out)
}

const PY_PURE_CALLS: &[&str] = &[
    "len", "abs", "min", "max", "int", "float", "str", "bool", "ord", "chr", "sum", "sorted",
    "round", "list", "tuple", "set", "range",
];

const JAVA_PURE_METHODS: &[&str] = &[
    "length", "size", "charAt", "get", "abs", "max", "min", "equals", "isEmpty", "contains",
    "substring", "indexOf", "valueOf", "sqrt", "pow", "floor", "ceil",
];

type Found = Option<(Direction, Vec<Rewrite>)>;

struct Cx<'a> {
    lang: Lang,
    tree: &'a SyntaxTree,
    text: &'a str,
}

impl<'a> Cx<'a> {
    fn kind(&self, id: NodeId) -> &'static str {
        self.tree.node(id).kind
    }

    fn src(&self, id: NodeId) -> &'a str {
        self.tree.text(id, self.text)
    }

    fn span(&self, id: NodeId) -> Range<usize> {
        self.tree.node(id).span.clone()
    }

    fn field(&self, id: NodeId, name: &str) -> Option<NodeId> {
        self.tree.child_by_field(id, name)
    }

    /// Named children that are statements (comments excluded).
    fn statements(&self, block: NodeId) -> Vec<NodeId> {
        self.tree
            .named_children(block)
            .filter(|&c| !matches!(self.kind(c), "comment" | "line_comment" | "block_comment"))
            .collect()
    }

    fn operator_text(&self, id: NodeId) -> Option<&'a str> {
        self.field(id, "operator").map(|o| self.src(o))
    }

    /// Expression that can sit next to a binary operator without parentheses.
    fn is_atomic(&self, id: NodeId) -> bool {
        match self.lang {
            Lang::Python => matches!(
                self.kind(id),
                "identifier" | "integer" | "float" | "string" | "true" | "false" | "none"
                    | "call" | "attribute" | "subscript" | "parenthesized_expression" | "list"
                    | "tuple" | "dictionary" | "set"
            ),
            Lang::Java => matches!(
                self.kind(id),
                "identifier" | "decimal_integer_literal" | "hex_integer_literal"
                    | "decimal_floating_point_literal" | "string_literal" | "character_literal"
                    | "true" | "false" | "null_literal" | "method_invocation" | "field_access"
                    | "array_access" | "parenthesized_expression" | "this"
            ),
        }
    }

    fn maybe_paren(&self, id: NodeId) -> String {
        if self.is_atomic(id) {
            self.src(id).to_owned()
        } else {
            format!("({})", self.src(id))
        }
    }

    /// Inverse of [`Cx::maybe_paren`]: drop one pair of parentheses that
    /// `maybe_paren` would have added.
    fn unparen(&self, id: NodeId) -> String {
        if self.kind(id) == "parenthesized_expression" {
            if let Some(inner) = self.tree.named_children(id).next() {
                if !self.is_atomic(inner) && self.tree.named_children(id).count() == 1 {
                    return self.src(inner).to_owned();
                }
            }
        }
        self.src(id).to_owned()
    }

    /// No assignments, increments or calls beyond a whitelist of pure ones.
    fn is_pure(&self, id: NodeId) -> bool {
        self.tree.descendants(id).all(|d| match (self.lang, self.kind(d)) {
            (Lang::Python, "call") => self
                .field(d, "function")
                .is_some_and(|f| self.kind(f) == "identifier" && PY_PURE_CALLS.contains(&self.src(f))),
            (Lang::Python, "named_expression" | "lambda" | "await" | "yield") => false,
            (Lang::Java, "method_invocation") => self
                .field(d, "name")
                .is_some_and(|n| JAVA_PURE_METHODS.contains(&self.src(n))),
            (Lang::Java, "assignment_expression" | "update_expression" | "lambda_expression"
                | "object_creation_expression" | "array_creation_expression") => false,
            _ => true,
        })
    }

    fn identifiers_in(&self, id: NodeId) -> HashSet<&'a str> {
        self.tree
            .descendants(id)
            .filter(|&d| self.kind(d) == "identifier")
            .map(|d| self.src(d))
            .collect()
    }

    /// Names written inside `id`: assignment targets, loop variables,
    /// declarators, increments, and objects of method calls (which may be
    /// mutated in place).
    fn written_names(&self, id: NodeId) -> HashSet<&'a str> {
        let mut out = HashSet::new();
        for d in self.tree.descendants(id) {
            match (self.lang, self.kind(d)) {
                (Lang::Python, "assignment" | "augmented_assignment" | "for_statement" | "for_in_clause") => {
                    if let Some(l) = self.field(d, "left") {
                        out.extend(self.target_names(l));
                    }
                }
                (Lang::Python, "named_expression") => {
                    if let Some(n) = self.field(d, "name") {
                        out.insert(self.src(n));
                    }
                }
                (Lang::Python, "call") => {
                    if let Some(f) = self.field(d, "function") {
                        if self.kind(f) == "attribute" {
                            if let Some(o) = self.field(f, "object") {
                                out.extend(self.target_names(o));
                            }
                        }
                    }
                }
                (Lang::Java, "assignment_expression") => {
                    if let Some(l) = self.field(d, "left") {
                        out.extend(self.target_names(l));
                    }
                }
                (Lang::Java, "update_expression") => {
                    if let Some(op) = self.tree.named_children(d).next() {
                        out.extend(self.target_names(op));
                    }
                }
                (Lang::Java, "variable_declarator" | "enhanced_for_statement") => {
                    if let Some(n) = self.field(d, "name") {
                        out.insert(self.src(n));
                    }
                }
                (Lang::Java, "method_invocation") => {
                    if let Some(o) = self.field(d, "object") {
                        out.extend(self.target_names(o));
                    }
                }
                _ => {}
            }
        }
        out
    }

    /// Base names of an assignment target (`x`, `a, b`, `xs[i]` → `xs`).
    fn target_names(&self, id: NodeId) -> Vec<&'a str> {
        match self.kind(id) {
            "identifier" => vec![self.src(id)],
            "attribute" | "field_access" => self
                .field(id, "object")
                .map(|o| self.target_names(o))
                .unwrap_or_default(),
            "subscript" => self
                .field(id, "value")
                .map(|o| self.target_names(o))
                .unwrap_or_default(),
            "array_access" => self
                .field(id, "array")
                .map(|o| self.target_names(o))
                .unwrap_or_default(),
            "pattern_list" | "tuple_pattern" | "list_pattern" | "parenthesized_expression" => self
                .tree
                .named_children(id)
                .flat_map(|c| self.target_names(c))
                .collect(),
            _ => Vec::new(),
        }
    }

    fn is_loop(&self, id: NodeId) -> bool {
        matches!(
            self.kind(id),
            "for_statement" | "while_statement" | "enhanced_for_statement" | "do_statement"
        )
    }

    /// A `continue` whose innermost enclosing loop is `lp`.
    fn has_own_continue(&self, lp: NodeId) -> bool {
        self.tree.descendants(lp).any(|d| {
            self.kind(d) == "continue_statement"
                && self
                    .tree
                    .ancestors(d)
                    .find(|&a| self.is_loop(a))
                    .is_some_and(|a| a == lp)
        })
    }

    /// Function body or module enclosing `id`.
    fn scope_of(&self, id: NodeId) -> NodeId {
        self.tree
            .ancestors(id)
            .find(|&a| matches!(self.kind(a), "function_definition" | "method_declaration" | "lambda"))
            .unwrap_or(SyntaxTree::ROOT)
    }

    /// Whether `name` is read anywhere in the enclosing scope outside `lp`,
    /// other than as a target being written or inside another Python `for`
    /// loop that rebinds it.
    fn read_outside(&self, lp: NodeId, name: &str) -> bool {
        let scope = self.scope_of(lp);
        let inside = self.tree.descendants(lp);
        self.tree.descendants(scope).any(|d| {
            if inside.contains(&d) || self.kind(d) != "identifier" || self.src(d) != name {
                return false;
            }
            let n = self.tree.node(d);
            let parent = n.parent.map(|p| self.kind(p));
            let is_plain_write = n.field == Some("left")
                && matches!(parent, Some("assignment" | "for_statement"));
            let in_rebinding_for = self.tree.ancestors(d).any(|a| {
                self.kind(a) == "for_statement"
                    && self
                        .field(a, "left")
                        .is_some_and(|l| self.kind(l) == "identifier" && self.src(l) == name)
            });
            !(is_plain_write || in_rebinding_for)
        })
    }

    fn int_literal(&self, id: NodeId) -> Option<i64> {
        match self.kind(id) {
            "integer" | "decimal_integer_literal" => self.src(id).replace('_', "").parse().ok(),
            "unary_operator" | "unary_expression" => {
                let op = self.operator_text(id)?;
                let arg = self.field(id, "argument").or_else(|| self.field(id, "operand"))?;
                let v = self.int_literal(arg)?;
                match op {
                    "-" => Some(-v),
                    "+" => Some(v),
                    _ => None,
                }
            }
            _ => None,
        }
    }

    // ---------------------------------------------------------------- loops

    fn loop_exchange(&self, id: NodeId) -> Found {
        match (self.lang, self.kind(id)) {
            (Lang::Python, "for_statement") => self.py_for_to_while(id),
            (Lang::Python, "while_statement") => self.py_while_to_for(id),
            (Lang::Java, "for_statement") => self.java_for_to_while(id),
            (Lang::Java, "while_statement") => self.java_while_to_for(id),
            _ => None,
        }
    }

    fn py_for_to_while(&self, id: NodeId) -> Found {
        if self.field(id, "alternative").is_some() || self.has_own_continue(id) {
            return None;
        }
        let var = self.field(id, "left").filter(|&l| self.kind(l) == "identifier")?;
        let var_name = self.src(var);
        let call = self.field(id, "right").filter(|&r| self.kind(r) == "call")?;
        let func = self.field(call, "function")?;
        if self.src(func) != "range" {
            return None;
        }
        let args_node = self.field(call, "arguments")?;
        let args: Vec<NodeId> = self.tree.named_children(args_node).collect();
        if args.is_empty()
            || args.len() > 3
            || args.iter().any(|&a| {
                matches!(
                    self.kind(a),
                    "keyword_argument" | "list_splat" | "dictionary_splat" | "comment"
                )
            })
        {
            return None;
        }
        let (start, stop, step) = match args.as_slice() {
            [stop] => ("0".to_owned(), *stop, 1),
            [start, stop] => (self.src(*start).to_owned(), *stop, 1),
            [start, stop, step] => (self.src(*start).to_owned(), *stop, self.int_literal(*step)?),
            _ => return None,
        };
        if step == 0 || !self.is_pure(stop) {
            return None;
        }
        let body = self.field(id, "body")?;
        let written = self.written_names(body);
        if written.contains(var_name)
            || self.identifiers_in(stop).iter().any(|n| written.contains(n))
            || self.read_outside(id, var_name)
        {
            return None;
        }
        let stmts = self.statements(body);
        let last = *stmts.last()?;
        let for_indent = indent_at(self.text, self.span(id).start)?;
        let colon = self.colon_before(body)?;
        let (cmp, inc) = if step > 0 {
            ("<", format!("{var_name} += {step}"))
        } else {
            (">", format!("{var_name} -= {}", -step))
        };
        let header = format!(
            "{var_name} = {start}\n{for_indent}while {var_name} {cmp} {}:",
            self.src(stop)
        );
        let increment = if same_line(self.text, colon, self.span(body).start) {
            format!("; {inc}")
        } else {
            let body_indent = indent_at(self.text, self.span(stmts[0]).start)?;
            format!("\n{body_indent}{inc}")
        };
        Some((
            Direction::Forward,
            vec![
                Rewrite::new(self.span(id).start..colon + 1, header),
                Rewrite::insert(self.span(last).end, increment),
            ],
        ))
    }

    /// Byte offset of the `:` introducing `block`.
    fn colon_before(&self, block: NodeId) -> Option<usize> {
        let parent = self.tree.parent(block)?;
        self.tree
            .children(parent)
            .filter(|&c| self.kind(c) == ":" && self.span(c).end <= self.span(block).start)
            .last()
            .map(|c| self.span(c).start)
    }

    /// Step of a trailing `v += c`, `v -= c`, `v = v + c`, `v = v - c`.
    fn py_step_statement(&self, stmt: NodeId, var_name: &str) -> Option<i64> {
        if self.kind(stmt) != "expression_statement" {
            return None;
        }
        let e = self.tree.named_children(stmt).next()?;
        let left = self.field(e, "left")?;
        if self.kind(left) != "identifier" || self.src(left) != var_name {
            return None;
        }
        let right = self.field(e, "right")?;
        match self.kind(e) {
            "augmented_assignment" => {
                let c = self.int_literal(right).filter(|&c| c > 0)?;
                match self.operator_text(e)? {
                    "+=" => Some(c),
                    "-=" => Some(-c),
                    _ => None,
                }
            }
            "assignment" if self.kind(right) == "binary_operator" => {
                let l = self.field(right, "left")?;
                let r = self.field(right, "right")?;
                if self.kind(l) != "identifier" || self.src(l) != var_name {
                    return None;
                }
                let c = self.int_literal(r).filter(|&c| c > 0)?;
                match self.operator_text(right)? {
                    "+" => Some(c),
                    "-" => Some(-c),
                    _ => None,
                }
            }
            _ => None,
        }
    }

    fn py_while_to_for(&self, id: NodeId) -> Found {
        if self.field(id, "alternative").is_some() || self.has_own_continue(id) {
            return None;
        }
        let cond = self.field(id, "condition")?;
        if self.kind(cond) != "comparison_operator" {
            return None;
        }
        let ops: Vec<NodeId> = self.tree.children_by_field(cond, "operators").collect();
        let operands: Vec<NodeId> = self.tree.named_children(cond).collect();
        if ops.len() != 1 || operands.len() != 2 || self.kind(operands[0]) != "identifier" {
            return None;
        }
        let var_name = self.src(operands[0]);
        let bound = operands[1];
        let op = self.src(ops[0]);
        let body = self.field(id, "body")?;
        let stmts = self.statements(body);
        let last = *stmts.last()?;
        let step = self.py_step_statement(last, var_name)?;
        let stop = match (op, step > 0) {
            ("<", true) | (">", false) => self.src(bound).to_owned(),
            ("<=", true) => format!("{} + 1", self.maybe_paren(bound)),
            (">=", false) => format!("{} - 1", self.maybe_paren(bound)),
            _ => return None,
        };
        if !self.is_pure(bound)
            || self.tree.descendants(bound).any(|d| self.kind(d) == "/")
            || self.read_outside(id, var_name)
        {
            return None;
        }
        let mut written = HashSet::new();
        for &s in &stmts[..stmts.len() - 1] {
            written.extend(self.written_names(s));
        }
        if written.contains(var_name) || self.identifiers_in(bound).iter().any(|n| written.contains(n)) {
            return None;
        }
        let colon = self.colon_before(body)?;
        let range = if step == 1 {
            format!("range({var_name}, {stop})")
        } else {
            format!("range({var_name}, {stop}, {step})")
        };
        let header = format!("for {var_name} in {range}:");
        let removal = if stmts.len() >= 2 {
            Rewrite::delete(self.span(stmts[stmts.len() - 2]).end..self.span(last).end)
        } else {
            Rewrite::new(self.span(last), "pass")
        };
        Some((
            Direction::Backward,
            vec![Rewrite::new(self.span(id).start..colon + 1, header), removal],
        ))
    }

    fn java_for_to_while(&self, id: NodeId) -> Found {
        if self.has_own_continue(id) {
            return None;
        }
        let inits: Vec<NodeId> = self.tree.children_by_field(id, "init").collect();
        let init = match inits.as_slice() {
            [] => String::new(),
            [one] if self.kind(*one) == "local_variable_declaration" => {
                format!("{} ", self.src(*one))
            }
            many => many
                .iter()
                .map(|&e| format!("{}; ", self.src(e)))
                .collect::<String>(),
        };
        let cond = self
            .field(id, "condition")
            .map_or("true".to_owned(), |c| self.src(c).to_owned());
        let updates: String = self
            .tree
            .children_by_field(id, "update")
            .map(|u| format!(" {};", self.src(u)))
            .collect();
        let body = self.field(id, "body")?;
        let inner = self.block_inner(body);
        let text = format!("{{ {init}while ({cond}) {{ {inner}{updates} }} }}");
        Some((Direction::Forward, vec![Rewrite::new(self.span(id), text)]))
    }

    /// Text of a block without its braces, or of a single statement.
    fn block_inner(&self, body: NodeId) -> String {
        let s = self.span(body);
        if self.kind(body) == "block" {
            self.text[s.start + 1..s.end - 1].trim().to_owned()
        } else {
            self.src(body).to_owned()
        }
    }

    fn java_while_to_for(&self, id: NodeId) -> Found {
        let cond = self.field(id, "condition")?;
        let cond_inner = self.tree.named_children(cond).next()?;
        let cond_text = self.src(cond_inner);
        let body = self.field(id, "body")?;
        let header_end = self.span(cond).end;
        let plain = Some((
            Direction::Backward,
            vec![Rewrite::new(
                self.span(id).start..header_end,
                format!("for (; {cond_text}; )"),
            )],
        ));
        if self.kind(body) != "block" || self.has_own_continue(id) {
            return plain;
        }
        let stmts = self.statements(body);
        let Some(&last) = stmts.last() else {
            return plain;
        };
        let Some(update) = self.java_update_expr(last) else {
            return plain;
        };
        let mut declared = HashSet::new();
        for d in self.tree.descendants(body) {
            if self.kind(d) == "variable_declarator" {
                if let Some(n) = self.field(d, "name") {
                    declared.insert(self.src(n));
                }
            }
        }
        if self.identifiers_in(update).iter().any(|n| declared.contains(n)) {
            return plain;
        }
        let removal = if stmts.len() >= 2 {
            Rewrite::delete(self.span(stmts[stmts.len() - 2]).end..self.span(last).end)
        } else {
            Rewrite::delete(self.span(last))
        };
        Some((
            Direction::Backward,
            vec![
                Rewrite::new(
                    self.span(id).start..header_end,
                    format!("for (; {cond_text}; {})", self.src(update)),
                ),
                removal,
            ],
        ))
    }

    fn java_update_expr(&self, stmt: NodeId) -> Option<NodeId> {
        if self.kind(stmt) != "expression_statement" {
            return None;
        }
        let e = self.tree.named_children(stmt).next()?;
        match self.kind(e) {
            "update_expression" => Some(e),
            "assignment_expression"
                if self.field(e, "left").is_some_and(|l| self.kind(l) == "identifier") =>
            {
                Some(e)
            }
            _ => None,
        }
    }

    // ----------------------------------------------------------- expressions

    fn compound_ops(&self) -> &'static [&'static str] {
        match self.lang {
            Lang::Python => &["+=", "-=", "*=", "/=", "%=", "**=", "<<=", ">>="],
            Lang::Java => &["+=", "-=", "*=", "/=", "%=", "<<=", ">>=", ">>>="],
        }
    }

    fn expression_exchange(&self, id: NodeId) -> Found {
        let (aug_kind, plain_kind, binary_kind) = match self.lang {
            Lang::Python => ("augmented_assignment", "assignment", "binary_operator"),
            Lang::Java => ("assignment_expression", "assignment_expression", "binary_expression"),
        };
        let kind = self.kind(id);
        if kind != aug_kind && kind != plain_kind {
            return None;
        }
        let left = self.field(id, "left")?;
        let right = self.field(id, "right")?;
        if !matches!(
            self.kind(left),
            "identifier" | "attribute" | "subscript" | "field_access" | "array_access"
        ) || !self.is_pure(left)
        {
            return None;
        }
        let op = self.operator_text(id).unwrap_or("=");
        let lhs = self.src(left);
        if self.compound_ops().contains(&op) {
            let bin = &op[..op.len() - 1];
            let text = format!("{lhs} = {lhs} {bin} {}", self.maybe_paren(right));
            return Some((Direction::Forward, vec![Rewrite::new(self.span(id), text)]));
        }
        if op != "=" || self.lang == Lang::Python && self.field(id, "type").is_some() {
            return None;
        }
        if self.kind(right) != binary_kind {
            return None;
        }
        let bl = self.field(right, "left")?;
        let br = self.field(right, "right")?;
        let bop = self.operator_text(right)?;
        let compound = format!("{bop}=");
        if self.src(bl) != lhs || !self.compound_ops().contains(&compound.as_str()) {
            return None;
        }
        let text = format!("{lhs} {compound} {}", self.unparen(br));
        Some((Direction::Backward, vec![Rewrite::new(self.span(id), text)]))
    }

    // ------------------------------------------------------------- branches

    fn permute_exchange(&self, id: NodeId) -> Found {
        if self.kind(id) != "if_statement" {
            return None;
        }
        match self.lang {
            Lang::Python => self.py_permute(id),
            Lang::Java => self.java_permute(id),
        }
    }

    fn py_permute(&self, id: NodeId) -> Found {
        let alts: Vec<NodeId> = self.tree.children_by_field(id, "alternative").collect();
        let [else_clause] = alts.as_slice() else {
            return None;
        };
        if self.kind(*else_clause) != "else_clause" {
            return None;
        }
        let cons = self.field(id, "consequence")?;
        let alt = self.field(*else_clause, "body")?;
        let cond = self.field(id, "condition")?;
        let cons_colon = self.colon_before(cons)?;
        let alt_colon = self.colon_before(alt)?;
        let cons_inline = same_line(self.text, cons_colon, self.span(cons).start);
        let alt_inline = same_line(self.text, alt_colon, self.span(alt).start);
        if cons_inline != alt_inline {
            return None;
        }
        if !cons_inline {
            let a = indent_at(self.text, self.span(cons).start)?;
            let b = indent_at(self.text, self.span(alt).start)?;
            if a != b {
                return None;
            }
        }
        let (direction, new_cond) = if self.kind(cond) == "not_operator" {
            let arg = self.field(cond, "argument")?;
            (Direction::Backward, self.unparen(arg))
        } else {
            (Direction::Forward, format!("not {}", self.maybe_paren(cond)))
        };
        Some((
            direction,
            vec![
                Rewrite::new(self.span(cond), new_cond),
                Rewrite::new(self.span(cons), self.src(alt)),
                Rewrite::new(self.span(alt), self.src(cons)),
            ],
        ))
    }

    fn java_permute(&self, id: NodeId) -> Found {
        let cons = self.field(id, "consequence")?;
        let alt = self.field(id, "alternative")?;
        if self.kind(cons) != "block" || self.kind(alt) != "block" {
            return None;
        }
        let cond = self.field(id, "condition")?;
        let inner = self.tree.named_children(cond).next()?;
        let negated = self.kind(inner) == "unary_expression" && self.operator_text(inner) == Some("!");
        let (direction, new_cond) = if negated {
            let operand = self.field(inner, "operand")?;
            (Direction::Backward, format!("({})", self.unparen(operand)))
        } else {
            (Direction::Forward, format!("(!{})", self.maybe_paren(inner)))
        };
        Some((
            direction,
            vec![
                Rewrite::new(self.span(cond), new_cond),
                Rewrite::new(self.span(cons), self.src(alt)),
                Rewrite::new(self.span(alt), self.src(cons)),
            ],
        ))
    }

    // ----------------------------------------------------------- conditions

    fn condition_exchange(&self, id: NodeId) -> Found {
        match self.lang {
            Lang::Python => self.py_condition(id),
            Lang::Java => self.java_condition(id),
        }
    }

    fn mirrored(op: &str) -> Option<(&'static str, Direction)> {
        Some(match op {
            ">" => ("<", Direction::Forward),
            ">=" => ("<=", Direction::Forward),
            "<" => (">", Direction::Backward),
            "<=" => (">=", Direction::Backward),
            "==" => ("==", Direction::Forward),
            "!=" => ("!=", Direction::Forward),
            _ => return None,
        })
    }

    fn py_condition(&self, id: NodeId) -> Found {
        match self.kind(id) {
            "comparison_operator" => {
                let ops: Vec<NodeId> = self.tree.children_by_field(id, "operators").collect();
                let operands: Vec<NodeId> = self.tree.named_children(id).collect();
                if ops.len() != 1 || operands.len() != 2 {
                    return None;
                }
                let (m, dir) = Self::mirrored(self.src(ops[0]))?;
                if !operands.iter().all(|&o| self.is_pure(o)) {
                    return None;
                }
                let text = format!("{} {m} {}", self.src(operands[1]), self.src(operands[0]));
                Some((dir, vec![Rewrite::new(self.span(id), text)]))
            }
            "true" | "false" => {
                if self.is_negated_literal(id) {
                    return None;
                }
                let text = if self.kind(id) == "true" { "(not False)" } else { "(not True)" };
                Some((Direction::Forward, vec![Rewrite::new(self.span(id), text)]))
            }
            "not_operator" | "parenthesized_expression" => {
                let lit = self.negated_literal(id)?;
                let text = if self.kind(lit) == "false" { "True" } else { "False" };
                Some((Direction::Backward, vec![Rewrite::new(self.span(id), text)]))
            }
            _ => None,
        }
    }

    fn java_condition(&self, id: NodeId) -> Found {
        match self.kind(id) {
            "binary_expression" => {
                let (m, dir) = Self::mirrored(self.operator_text(id)?)?;
                let l = self.field(id, "left")?;
                let r = self.field(id, "right")?;
                let loose = |o: NodeId| match self.kind(o) {
                    "binary_expression" => matches!(
                        self.operator_text(o),
                        Some("==" | "!=" | "<" | ">" | "<=" | ">=" | "&" | "|" | "^" | "&&" | "||")
                    ),
                    "ternary_expression" | "assignment_expression" | "instanceof_expression"
                    | "lambda_expression" => true,
                    _ => false,
                };
                if loose(l) || loose(r) || !self.is_pure(l) || !self.is_pure(r) {
                    return None;
                }
                let text = format!("{} {m} {}", self.src(r), self.src(l));
                Some((dir, vec![Rewrite::new(self.span(id), text)]))
            }
            "true" | "false" => {
                if self.is_negated_literal(id) {
                    return None;
                }
                let text = if self.kind(id) == "true" { "(!false)" } else { "(!true)" };
                Some((Direction::Forward, vec![Rewrite::new(self.span(id), text)]))
            }
            "unary_expression" | "parenthesized_expression" => {
                let lit = self.negated_literal(id)?;
                let text = if self.kind(lit) == "false" { "true" } else { "false" };
                Some((Direction::Backward, vec![Rewrite::new(self.span(id), text)]))
            }
            _ => None,
        }
    }

    /// For `not False`, `(not False)`, `!false`, `(!false)`: the literal.
    /// A parenthesized form claims the site so the inner negation does not
    /// match twice; Java statement conditions keep their parentheses.
    fn negated_literal(&self, id: NodeId) -> Option<NodeId> {
        let neg_kind = match self.lang {
            Lang::Python => "not_operator",
            Lang::Java => "unary_expression",
        };
        let (neg, paren) = match self.kind(id) {
            "parenthesized_expression" => {
                let mut kids = self.tree.named_children(id);
                let inner = kids.next()?;
                if kids.next().is_some() || self.kind(inner) != neg_kind {
                    return None;
                }
                if self.lang == Lang::Java && self.tree.node(id).field == Some("condition") {
                    return None;
                }
                (inner, true)
            }
            k if k == neg_kind => (id, false),
            _ => return None,
        };
        if self.lang == Lang::Java && self.operator_text(neg) != Some("!") {
            return None;
        }
        let arg = self.field(neg, "argument").or_else(|| self.field(neg, "operand"))?;
        if !matches!(self.kind(arg), "true" | "false") {
            return None;
        }
        if !paren {
            // claimed by the enclosing parentheses instead
            if let Some(p) = self.tree.parent(id) {
                if self.kind(p) == "parenthesized_expression"
                    && self.tree.named_children(p).count() == 1
                    && !(self.lang == Lang::Java && self.tree.node(p).field == Some("condition"))
                {
                    return None;
                }
            }
        }
        Some(arg)
    }

    /// The literal is the operand of a negation that itself is a site.
    fn is_negated_literal(&self, id: NodeId) -> bool {
        self.tree.parent(id).is_some_and(|p| {
            let n = self.tree.node(p);
            matches!(n.kind, "not_operator" | "unary_expression")
                && (self.lang == Lang::Python || self.operator_text(p) == Some("!"))
        })
    }
}
