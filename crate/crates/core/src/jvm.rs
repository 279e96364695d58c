//! Tree-walking interpreter for the Java subset used by test corpora:
//! static-style methods over `int`, `long`, `double`, `boolean`, `char`,
//! `String` and arrays, with the usual statements (no switch, labels,
//! objects or exceptions handlers). Integer arithmetic wraps at 32 or 64
//! bits as in Java; `byte` and `short` are treated as `int`, `float` as
//! `double`. Runaway programs stop at a step budget.

use std::cell::RefCell;
use std::collections::HashMap;
use std::fmt;
use std::rc::Rc;

use crate::code::{parse_text, Lang, NodeId, SourceUnit, SyntaxTree};

/// Statements plus expressions evaluated before giving up.
pub const STEP_BUDGET: u64 = 20_000_000;
/// Deepest allowed call nesting.
pub const MAX_DEPTH: usize = 1_500;

#[derive(Debug, Clone, PartialEq)]
pub enum Ty {
    Int,
    Long,
    Double,
    Bool,
    Char,
    Str,
    Array(Box<Ty>),
    Void,
}

#[derive(Debug, Clone)]
pub enum Value {
    Int(i32),
    Long(i64),
    Double(f64),
    Bool(bool),
    Char(u16),
    Str(Rc<str>),
    Array(Rc<RefCell<Vec<Value>>>),
    Null,
    Void,
}

/// Why evaluation stopped abnormally.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Fault {
    /// A Java exception such as `ArithmeticException`.
    Exception(String),
    /// A construct outside the subset.
    Unsupported(String),
    /// The step budget ran out, standing in for a timeout.
    Budget,
}

impl fmt::Display for Fault {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Fault::Exception(e) => write!(f, "exception: {e}"),
            Fault::Unsupported(e) => write!(f, "unsupported construct: {e}"),
            Fault::Budget => f.write_str("step budget exhausted"),
        }
    }
}

type Eval<T> = std::result::Result<T, Fault>;

fn exception(name: &str) -> Fault {
    Fault::Exception(name.to_owned())
}

impl Value {
    fn default_of(ty: &Ty) -> Value {
        match ty {
            Ty::Int => Value::Int(0),
            Ty::Long => Value::Long(0),
            Ty::Double => Value::Double(0.0),
            Ty::Bool => Value::Bool(false),
            Ty::Char => Value::Char(0),
            Ty::Str | Ty::Array(_) => Value::Null,
            Ty::Void => Value::Void,
        }
    }

    fn as_bool(&self) -> Eval<bool> {
        match self {
            Value::Bool(b) => Ok(*b),
            other => Err(Fault::Unsupported(format!("{other} used as a condition"))),
        }
    }

    fn as_long(&self) -> Eval<i64> {
        match *self {
            Value::Int(i) => Ok(i64::from(i)),
            Value::Long(l) => Ok(l),
            Value::Char(c) => Ok(i64::from(c)),
            ref other => Err(Fault::Unsupported(format!("{other} used as an integer"))),
        }
    }

    fn as_double(&self) -> Eval<f64> {
        match *self {
            Value::Double(d) => Ok(d),
            ref v => v.as_long().map(|l| l as f64),
        }
    }

    fn is_numeric(&self) -> bool {
        matches!(self, Value::Int(_) | Value::Long(_) | Value::Double(_) | Value::Char(_))
    }

    /// Casting conversion to `ty`.
    pub fn convert(self, ty: &Ty) -> Eval<Value> {
        Ok(match (ty, self) {
            (Ty::Int, Value::Double(d)) => Value::Int(d as i32),
            (Ty::Int, v) if v.is_numeric() => Value::Int(v.as_long()? as i32),
            (Ty::Long, Value::Double(d)) => Value::Long(d as i64),
            (Ty::Long, v) if v.is_numeric() => Value::Long(v.as_long()?),
            (Ty::Double, v) if v.is_numeric() => Value::Double(v.as_double()?),
            (Ty::Char, Value::Double(d)) => Value::Char(d as i32 as u16),
            (Ty::Char, v) if v.is_numeric() => Value::Char(v.as_long()? as u16),
            (_, v) => v,
        })
    }

    /// Loose equality used to compare a result with an expected literal:
    /// numbers by value, arrays element-wise, strings by content.
    pub fn deep_eq(&self, other: &Value) -> bool {
        match (self, other) {
            (Value::Array(a), Value::Array(b)) => {
                let (a, b) = (a.borrow(), b.borrow());
                a.len() == b.len() && a.iter().zip(b.iter()).all(|(x, y)| x.deep_eq(y))
            }
            (Value::Str(a), Value::Str(b)) => a == b,
            (Value::Bool(a), Value::Bool(b)) => a == b,
            (Value::Null, Value::Null) | (Value::Void, Value::Void) => true,
            (Value::Double(_), _) | (_, Value::Double(_)) if self.is_numeric() && other.is_numeric() => {
                self.as_double().ok() == other.as_double().ok()
            }
            (a, b) if a.is_numeric() && b.is_numeric() => a.as_long().ok() == b.as_long().ok(),
            _ => false,
        }
    }
}

fn fmt_double(d: f64) -> String {
    if d.is_nan() {
        "NaN".into()
    } else if d.is_infinite() {
        if d > 0.0 { "Infinity" } else { "-Infinity" }.into()
    } else if d == d.trunc() && d.abs() < 1e7 {
        format!("{d:.1}")
    } else {
        format!("{d}")
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Int(i) => write!(f, "{i}"),
            Value::Long(l) => write!(f, "{l}"),
            Value::Double(d) => f.write_str(&fmt_double(*d)),
            Value::Bool(b) => write!(f, "{b}"),
            Value::Char(c) => write!(f, "{}", char::from_u32(u32::from(*c)).unwrap_or('?')),
            Value::Str(s) => f.write_str(s),
            Value::Array(a) => {
                let parts: Vec<String> = a.borrow().iter().map(|v| v.to_string()).collect();
                write!(f, "[{}]", parts.join(", "))
            }
            Value::Null => f.write_str("null"),
            Value::Void => f.write_str("void"),
        }
    }
}

/// A parsed source with its text.
#[derive(Clone, Copy)]
struct Code<'a> {
    tree: &'a SyntaxTree,
    src: &'a str,
}

impl<'a> Code<'a> {
    fn kind(&self, id: NodeId) -> &'static str {
        self.tree.node(id).kind
    }

    fn text(&self, id: NodeId) -> &'a str {
        self.tree.text(id, self.src)
    }

    fn field(&self, id: NodeId, name: &str) -> Option<NodeId> {
        self.tree.child_by_field(id, name)
    }

    fn need(&self, id: NodeId, name: &str) -> Eval<NodeId> {
        self.field(id, name)
            .ok_or_else(|| Fault::Unsupported(format!("{} without {name}", self.kind(id))))
    }

    fn named(&self, id: NodeId) -> Vec<NodeId> {
        self.tree
            .named_children(id)
            .filter(|&c| !matches!(self.kind(c), "line_comment" | "block_comment"))
            .collect()
    }

    /// The single named child of a wrapper such as a parenthesized expression.
    fn inner(&self, id: NodeId) -> Eval<NodeId> {
        self.named(id)
            .first()
            .copied()
            .ok_or_else(|| Fault::Unsupported(format!("empty {}", self.kind(id))))
    }

    fn ty(&self, id: NodeId) -> Eval<Ty> {
        Ok(match self.kind(id) {
            "integral_type" => match self.text(id) {
                "long" => Ty::Long,
                "char" => Ty::Char,
                _ => Ty::Int,
            },
            "floating_point_type" => Ty::Double,
            "boolean_type" => Ty::Bool,
            "void_type" => Ty::Void,
            "type_identifier" => match self.text(id) {
                "String" => Ty::Str,
                "Integer" | "Short" | "Byte" => Ty::Int,
                "Long" => Ty::Long,
                "Double" | "Float" => Ty::Double,
                "Boolean" => Ty::Bool,
                "Character" => Ty::Char,
                other => return Err(Fault::Unsupported(format!("type {other}"))),
            },
            "array_type" => {
                let mut t = self.ty(self.need(id, "element")?)?;
                for _ in 0..self.dims(self.need(id, "dimensions")?) {
                    t = Ty::Array(Box::new(t));
                }
                t
            }
            other => return Err(Fault::Unsupported(format!("type node {other}"))),
        })
    }

    /// Number of `[]` pairs in a `dimensions` node.
    fn dims(&self, id: NodeId) -> usize {
        self.tree.children(id).filter(|&c| self.kind(c) == "[").count()
    }
}

struct Method<'a> {
    code: Code<'a>,
    params: Vec<(String, Ty)>,
    ret: Ty,
    body: NodeId,
}

enum Flow {
    Normal,
    Break,
    Continue,
    Return(Value),
}

#[derive(Default)]
struct Frame {
    scopes: Vec<Vec<(String, Ty, Value)>>,
}

impl Frame {
    fn push(&mut self) {
        self.scopes.push(Vec::new());
    }

    fn pop(&mut self) {
        self.scopes.pop();
    }

    fn declare(&mut self, name: &str, ty: Ty, v: Value) {
        if let Some(scope) = self.scopes.last_mut() {
            scope.push((name.to_owned(), ty, v));
        }
    }

    fn slot(&mut self, name: &str) -> Eval<&mut (String, Ty, Value)> {
        self.scopes
            .iter_mut()
            .rev()
            .flat_map(|s| s.iter_mut().rev())
            .find(|(n, _, _)| n == name)
            .ok_or_else(|| Fault::Unsupported(format!("unknown variable {name}")))
    }
}

/// Methods of one unit, ready to run.
pub struct Program<'a> {
    methods: HashMap<(String, usize), Method<'a>>,
    first: Option<String>,
}

/// Running state: step counter and call stack.
struct Machine<'p, 'a> {
    program: &'p Program<'a>,
    steps: u64,
    frames: Vec<Frame>,
}

impl<'a> Program<'a> {
    /// Collect every method declaration in `unit`.
    pub fn load(unit: &'a SourceUnit) -> Eval<Self> {
        let tree = unit
            .require_valid()
            .map_err(|e| Fault::Unsupported(e.to_string()))?;
        let code = Code { tree, src: unit.text() };
        let mut methods = HashMap::new();
        let mut first = None;
        for id in tree.ids() {
            if code.kind(id) != "method_declaration" {
                continue;
            }
            let name = code.text(code.need(id, "name")?).to_owned();
            let ret = code.ty(code.need(id, "type")?)?;
            let mut params = Vec::new();
            for p in code.named(code.need(id, "parameters")?) {
                if code.kind(p) != "formal_parameter" {
                    return Err(Fault::Unsupported(code.kind(p).to_owned()));
                }
                let mut t = code.ty(code.need(p, "type")?)?;
                if let Some(d) = code.field(p, "dimensions") {
                    for _ in 0..code.dims(d) {
                        t = Ty::Array(Box::new(t));
                    }
                }
                params.push((code.text(code.need(p, "name")?).to_owned(), t));
            }
            let Some(body) = code.field(id, "body") else { continue };
            first.get_or_insert_with(|| name.clone());
            methods.insert((name, params.len()), Method { code, params, ret, body });
        }
        Ok(Program { methods, first })
    }

    /// Name of the first declared method.
    pub fn first_method(&self) -> Option<&str> {
        self.first.as_deref()
    }

    /// Call `name` with the argument expressions in `args_src`.
    pub fn call_with_source(&self, name: &str, args_src: &str) -> Eval<Value> {
        let call = format!("{name}({args_src})");
        self.eval_source(&call)
    }

    /// Evaluate a standalone expression in the context of this program.
    pub fn eval_source(&self, expr: &str) -> Eval<Value> {
        let src = format!("__probe({expr});");
        let tree = parse_text(Lang::Java, &src).map_err(|e| Fault::Unsupported(e.to_string()))?;
        if tree.has_error() {
            return Err(Fault::Unsupported(format!("expression does not parse: {expr}")));
        }
        let code = Code { tree: &tree, src: &src };
        let call = tree
            .ids()
            .find(|&i| code.kind(i) == "method_invocation")
            .ok_or_else(|| Fault::Unsupported("no probe call".into()))?;
        let args = code.named(code.need(call, "arguments")?);
        let [arg] = args.as_slice() else {
            return Err(Fault::Unsupported(format!("`{expr}` is not one expression")));
        };
        let mut m = Machine { program: self, steps: 0, frames: vec![Frame::default()] };
        m.frames[0].push();
        m.expr(code, *arg)
    }
}

fn bin_long(op: &str, a: i64, b: i64, bits: u32) -> Eval<i64> {
    let wrap = |x: i64| if bits == 32 { i64::from(x as i32) } else { x };
    let (a32, b32) = (a as i32, b as i32);
    Ok(match op {
        "+" => wrap(a.wrapping_add(b)),
        "-" => wrap(a.wrapping_sub(b)),
        "*" => wrap(a.wrapping_mul(b)),
        "/" | "%" if b == 0 => return Err(exception("ArithmeticException: / by zero")),
        "/" if bits == 32 => i64::from(a32.wrapping_div(b32)),
        "%" if bits == 32 => i64::from(a32.wrapping_rem(b32)),
        "/" => a.wrapping_div(b),
        "%" => a.wrapping_rem(b),
        "&" => a & b,
        "|" => a | b,
        "^" => a ^ b,
        _ => return Err(Fault::Unsupported(format!("integer operator {op}"))),
    })
}

fn shift(op: &str, a: &Value, count: i64) -> Eval<Value> {
    Ok(match a {
        Value::Long(l) => {
            let c = (count & 63) as u32;
            Value::Long(match op {
                "<<" => l.wrapping_shl(c),
                ">>" => l.wrapping_shr(c),
                _ => ((*l as u64) >> c) as i64,
            })
        }
        v => {
            let i = v.as_long()? as i32;
            let c = (count & 31) as u32;
            Value::Int(match op {
                "<<" => i.wrapping_shl(c),
                ">>" => i.wrapping_shr(c),
                _ => ((i as u32) >> c) as i32,
            })
        }
    })
}

/// Binary operator on evaluated operands (everything but `&&` and `||`).
fn binary(op: &str, a: Value, b: Value) -> Eval<Value> {
    if op == "+" && (matches!(a, Value::Str(_)) || matches!(b, Value::Str(_))) {
        return Ok(Value::Str(format!("{a}{b}").into()));
    }
    if let (Value::Bool(x), Value::Bool(y)) = (&a, &b) {
        return Ok(Value::Bool(match op {
            "&" => x & y,
            "|" => x | y,
            "^" => x ^ y,
            "==" => x == y,
            "!=" => x != y,
            _ => return Err(Fault::Unsupported(format!("boolean operator {op}"))),
        }));
    }
    if matches!(op, "==" | "!=") && !(a.is_numeric() && b.is_numeric()) {
        let same = match (&a, &b) {
            (Value::Null, Value::Null) => true,
            (Value::Array(x), Value::Array(y)) => Rc::ptr_eq(x, y),
            (Value::Str(x), Value::Str(y)) => x == y,
            _ => false,
        };
        return Ok(Value::Bool(same == (op == "==")));
    }
    if matches!(op, "<<" | ">>" | ">>>") {
        return shift(op, &a, b.as_long()?);
    }
    let double = matches!(a, Value::Double(_)) || matches!(b, Value::Double(_));
    let long = matches!(a, Value::Long(_)) || matches!(b, Value::Long(_));
    if matches!(op, "<" | "<=" | ">" | ">=" | "==" | "!=") {
        let ord = if double {
            a.as_double()?.partial_cmp(&b.as_double()?)
        } else {
            Some(a.as_long()?.cmp(&b.as_long()?))
        };
        use std::cmp::Ordering::*;
        return Ok(Value::Bool(match (op, ord) {
            (_, None) => op == "!=",
            ("<", Some(o)) => o == Less,
            ("<=", Some(o)) => o != Greater,
            (">", Some(o)) => o == Greater,
            (">=", Some(o)) => o != Less,
            ("==", Some(o)) => o == Equal,
            (_, Some(o)) => o != Equal,
        }));
    }
    if double {
        let (x, y) = (a.as_double()?, b.as_double()?);
        return Ok(Value::Double(match op {
            "+" => x + y,
            "-" => x - y,
            "*" => x * y,
            "/" => x / y,
            "%" => x % y,
            _ => return Err(Fault::Unsupported(format!("double operator {op}"))),
        }));
    }
    let bits = if long { 64 } else { 32 };
    let r = bin_long(op, a.as_long()?, b.as_long()?, bits)?;
    Ok(if long { Value::Long(r) } else { Value::Int(r as i32) })
}

fn unescape(body: &str) -> Eval<Vec<u16>> {
    let mut out = Vec::new();
    let mut it = body.chars().peekable();
    while let Some(c) = it.next() {
        if c != '\\' {
            let mut buf = [0u16; 2];
            out.extend_from_slice(c.encode_utf16(&mut buf));
            continue;
        }
        let e = it.next().ok_or_else(|| Fault::Unsupported("dangling escape".into()))?;
        out.push(match e {
            'n' => 10,
            't' => 9,
            'r' => 13,
            'b' => 8,
            'f' => 12,
            's' => 32,
            '0'..='7' => {
                let mut v = e.to_digit(8).unwrap_or(0);
                while let Some(d) = it.peek().and_then(|d| d.to_digit(8)) {
                    v = v * 8 + d;
                    it.next();
                }
                v as u16
            }
            'u' => {
                while it.peek() == Some(&'u') {
                    it.next();
                }
                let hex: String = it.by_ref().take(4).collect();
                u16::from_str_radix(&hex, 16).map_err(|_| Fault::Unsupported(format!("escape \\u{hex}")))?
            }
            other => other as u16,
        });
    }
    Ok(out)
}

fn int_literal(text: &str) -> Eval<Value> {
    let t = text.replace('_', "");
    let long = t.ends_with(['l', 'L']);
    let t = t.trim_end_matches(['l', 'L']);
    let (digits, radix) = if let Some(h) = t.strip_prefix("0x").or_else(|| t.strip_prefix("0X")) {
        (h, 16)
    } else if let Some(b) = t.strip_prefix("0b").or_else(|| t.strip_prefix("0B")) {
        (b, 2)
    } else if t.len() > 1 && t.starts_with('0') {
        (&t[1..], 8)
    } else {
        (t, 10)
    };
    let v = u64::from_str_radix(digits, radix).map_err(|_| Fault::Unsupported(format!("literal {text}")))?;
    Ok(if long { Value::Long(v as i64) } else { Value::Int(v as u32 as i32) })
}

impl<'p, 'a> Machine<'p, 'a> {
    fn tick(&mut self) -> Eval<()> {
        self.steps += 1;
        if self.steps > STEP_BUDGET {
            Err(Fault::Budget)
        } else {
            Ok(())
        }
    }

    fn frame(&mut self) -> &mut Frame {
        self.frames.last_mut().expect("a frame is always active")
    }

    fn call(&mut self, name: &str, args: Vec<Value>) -> Eval<Value> {
        let program = self.program;
        let m = program
            .methods
            .get(&(name.to_owned(), args.len()))
            .ok_or_else(|| Fault::Unsupported(format!("unknown method {name}/{}", args.len())))?;
        if self.frames.len() >= MAX_DEPTH {
            return Err(exception("StackOverflowError"));
        }
        let mut frame = Frame::default();
        frame.push();
        for ((pname, pty), v) in m.params.iter().zip(args) {
            frame.declare(pname, pty.clone(), v.convert(pty)?);
        }
        self.frames.push(frame);
        let flow = self.stmt(m.code, m.body);
        self.frames.pop();
        match flow? {
            Flow::Return(v) => v.convert(&m.ret),
            _ if m.ret == Ty::Void => Ok(Value::Void),
            _ => Err(Fault::Unsupported(format!("{name} ended without return"))),
        }
    }

    fn block(&mut self, c: Code<'a>, stmts: &[NodeId]) -> Eval<Flow> {
        self.frame().push();
        let mut out = Flow::Normal;
        for &s in stmts {
            out = self.stmt(c, s)?;
            if !matches!(out, Flow::Normal) {
                break;
            }
        }
        self.frame().pop();
        Ok(out)
    }

    fn cond(&mut self, c: Code<'a>, id: NodeId) -> Eval<bool> {
        self.expr(c, id)?.as_bool()
    }

    /// Run a loop body; `None` means keep looping.
    fn body(&mut self, c: Code<'a>, id: NodeId) -> Eval<Option<Flow>> {
        Ok(match self.stmt(c, id)? {
            Flow::Break => Some(Flow::Normal),
            r @ Flow::Return(_) => Some(r),
            Flow::Normal | Flow::Continue => None,
        })
    }

    fn stmt(&mut self, c: Code<'a>, id: NodeId) -> Eval<Flow> {
        self.tick()?;
        match c.kind(id) {
            "block" => self.block(c, &c.named(id)),
            "expression_statement" => {
                self.expr(c, c.inner(id)?)?;
                Ok(Flow::Normal)
            }
            "local_variable_declaration" => {
                self.declare(c, id)?;
                Ok(Flow::Normal)
            }
            "if_statement" => {
                if self.cond(c, c.need(id, "condition")?)? {
                    self.stmt(c, c.need(id, "consequence")?)
                } else if let Some(alt) = c.field(id, "alternative") {
                    self.stmt(c, alt)
                } else {
                    Ok(Flow::Normal)
                }
            }
            "while_statement" => {
                let (cond, body) = (c.need(id, "condition")?, c.need(id, "body")?);
                while self.cond(c, cond)? {
                    if let Some(f) = self.body(c, body)? {
                        return Ok(f);
                    }
                }
                Ok(Flow::Normal)
            }
            "do_statement" => {
                let (cond, body) = (c.need(id, "condition")?, c.need(id, "body")?);
                loop {
                    if let Some(f) = self.body(c, body)? {
                        return Ok(f);
                    }
                    if !self.cond(c, cond)? {
                        return Ok(Flow::Normal);
                    }
                }
            }
            "for_statement" => self.for_loop(c, id),
            "enhanced_for_statement" => {
                let ty = c.ty(c.need(id, "type")?)?;
                let name = c.text(c.need(id, "name")?);
                let body = c.need(id, "body")?;
                let items = match self.expr(c, c.need(id, "value")?)? {
                    Value::Array(a) => a.borrow().clone(),
                    Value::Null => return Err(exception("NullPointerException")),
                    other => return Err(Fault::Unsupported(format!("iterating over {other}"))),
                };
                for v in items {
                    self.frame().push();
                    self.frame().declare(name, ty.clone(), v.convert(&ty)?);
                    let f = self.body(c, body);
                    self.frame().pop();
                    if let Some(f) = f? {
                        return Ok(f);
                    }
                }
                Ok(Flow::Normal)
            }
            "return_statement" => Ok(Flow::Return(match c.named(id).first() {
                Some(&e) => self.expr(c, e)?,
                None => Value::Void,
            })),
            "break_statement" if c.named(id).is_empty() => Ok(Flow::Break),
            "continue_statement" if c.named(id).is_empty() => Ok(Flow::Continue),
            ";" | "empty_statement" => Ok(Flow::Normal),
            other => Err(Fault::Unsupported(other.to_owned())),
        }
    }

    fn for_loop(&mut self, c: Code<'a>, id: NodeId) -> Eval<Flow> {
        self.frame().push();
        let out = (|| {
            for init in c.tree.children_by_field(id, "init") {
                if c.kind(init) == "local_variable_declaration" {
                    self.declare(c, init)?;
                } else {
                    self.expr(c, init)?;
                }
            }
            let cond = c.field(id, "condition");
            let updates: Vec<NodeId> = c.tree.children_by_field(id, "update").collect();
            let body = c.need(id, "body")?;
            loop {
                if let Some(k) = cond {
                    if !self.cond(c, k)? {
                        return Ok(Flow::Normal);
                    }
                }
                if let Some(f) = self.body(c, body)? {
                    return Ok(f);
                }
                for &u in &updates {
                    self.expr(c, u)?;
                }
            }
        })();
        self.frame().pop();
        out
    }

    fn declare(&mut self, c: Code<'a>, id: NodeId) -> Eval<()> {
        let base = c.ty(c.need(id, "type")?)?;
        for d in c.tree.children_by_field(id, "declarator") {
            let mut ty = base.clone();
            if let Some(dims) = c.field(d, "dimensions") {
                for _ in 0..c.dims(dims) {
                    ty = Ty::Array(Box::new(ty));
                }
            }
            let v = match c.field(d, "value") {
                Some(v) if c.kind(v) == "array_initializer" => self.initializer(c, v, &ty)?,
                Some(v) => self.expr(c, v)?.convert(&ty)?,
                None => Value::default_of(&ty),
            };
            let name = c.text(c.need(d, "name")?);
            self.frame().declare(name, ty, v);
        }
        Ok(())
    }

    fn initializer(&mut self, c: Code<'a>, id: NodeId, ty: &Ty) -> Eval<Value> {
        let Ty::Array(elem) = ty else {
            return Err(Fault::Unsupported("array initializer for a scalar".into()));
        };
        let mut items = Vec::new();
        for e in c.named(id) {
            items.push(if c.kind(e) == "array_initializer" {
                self.initializer(c, e, elem)?
            } else {
                self.expr(c, e)?.convert(elem)?
            });
        }
        Ok(Value::Array(Rc::new(RefCell::new(items))))
    }

    fn new_array(&mut self, elem: &Ty, sizes: &[i64], extra: usize) -> Eval<Value> {
        let Some((&n, rest)) = sizes.split_first() else {
            return Ok(Value::Null);
        };
        if n < 0 {
            return Err(exception("NegativeArraySizeException"));
        }
        let mut items = Vec::with_capacity(n as usize);
        for _ in 0..n {
            self.tick()?;
            items.push(if rest.is_empty() {
                if extra == 0 { Value::default_of(elem) } else { Value::Null }
            } else {
                self.new_array(elem, rest, extra)?
            });
        }
        Ok(Value::Array(Rc::new(RefCell::new(items))))
    }

    fn index(arr: &Value, i: &Value) -> Eval<(Rc<RefCell<Vec<Value>>>, usize)> {
        let a = match arr {
            Value::Array(a) => a.clone(),
            Value::Null => return Err(exception("NullPointerException")),
            other => return Err(Fault::Unsupported(format!("indexing {other}"))),
        };
        let i = i.as_long()?;
        if i < 0 || i as usize >= a.borrow().len() {
            return Err(exception("ArrayIndexOutOfBoundsException"));
        }
        Ok((a, i as usize))
    }

    fn read(&mut self, c: Code<'a>, target: NodeId) -> Eval<(Ty, Value)> {
        match c.kind(target) {
            "identifier" => {
                let slot = self.frame().slot(c.text(target))?;
                Ok((slot.1.clone(), slot.2.clone()))
            }
            "array_access" => {
                let arr = self.expr(c, c.need(target, "array")?)?;
                let i = self.expr(c, c.need(target, "index")?)?;
                let (a, i) = Self::index(&arr, &i)?;
                let v = a.borrow()[i].clone();
                let ty = match &v {
                    Value::Int(_) => Ty::Int,
                    Value::Long(_) => Ty::Long,
                    Value::Double(_) => Ty::Double,
                    Value::Bool(_) => Ty::Bool,
                    Value::Char(_) => Ty::Char,
                    Value::Str(_) => Ty::Str,
                    _ => Ty::Void,
                };
                Ok((ty, v))
            }
            "parenthesized_expression" => self.read(c, c.inner(target)?),
            other => Err(Fault::Unsupported(format!("assignment to {other}"))),
        }
    }

    fn write(&mut self, c: Code<'a>, target: NodeId, v: Value) -> Eval<Value> {
        match c.kind(target) {
            "identifier" => {
                let slot = self.frame().slot(c.text(target))?;
                let v = v.convert(&slot.1)?;
                slot.2 = v.clone();
                Ok(v)
            }
            "array_access" => {
                let arr = self.expr(c, c.need(target, "array")?)?;
                let i = self.expr(c, c.need(target, "index")?)?;
                let (a, i) = Self::index(&arr, &i)?;
                let old = a.borrow()[i].clone();
                let v = match old {
                    Value::Int(_) => v.convert(&Ty::Int)?,
                    Value::Long(_) => v.convert(&Ty::Long)?,
                    Value::Double(_) => v.convert(&Ty::Double)?,
                    Value::Char(_) => v.convert(&Ty::Char)?,
                    _ => v,
                };
                a.borrow_mut()[i] = v.clone();
                Ok(v)
            }
            "parenthesized_expression" => self.write(c, c.inner(target)?, v),
            other => Err(Fault::Unsupported(format!("assignment to {other}"))),
        }
    }

    fn args(&mut self, c: Code<'a>, id: NodeId) -> Eval<Vec<Value>> {
        c.named(c.need(id, "arguments")?)
            .into_iter()
            .map(|a| self.expr(c, a))
            .collect()
    }

    fn invoke(&mut self, c: Code<'a>, id: NodeId) -> Eval<Value> {
        let name = c.text(c.need(id, "name")?);
        let Some(obj) = c.field(id, "object") else {
            let args = self.args(c, id)?;
            return self.call(name, args);
        };
        let args = self.args(c, id)?;
        if c.kind(obj) == "identifier" && c.text(obj) == "Math" {
            return math(name, &args);
        }
        match self.expr(c, obj)? {
            Value::Str(s) => string_method(&s, name, &args),
            Value::Null => Err(exception("NullPointerException")),
            other => Err(Fault::Unsupported(format!("method {name} on {other}"))),
        }
    }

    fn expr(&mut self, c: Code<'a>, id: NodeId) -> Eval<Value> {
        self.tick()?;
        match c.kind(id) {
            "decimal_integer_literal" | "hex_integer_literal" | "octal_integer_literal" | "binary_integer_literal" => {
                int_literal(c.text(id))
            }
            "decimal_floating_point_literal" => {
                let t = c.text(id).replace('_', "");
                t.trim_end_matches(['f', 'F', 'd', 'D'])
                    .parse()
                    .map(Value::Double)
                    .map_err(|_| Fault::Unsupported(format!("literal {t}")))
            }
            "true" => Ok(Value::Bool(true)),
            "false" => Ok(Value::Bool(false)),
            "null_literal" => Ok(Value::Null),
            "character_literal" => {
                let t = c.text(id);
                let units = unescape(&t[1..t.len() - 1])?;
                Ok(Value::Char(units.first().copied().unwrap_or(0)))
            }
            "string_literal" => {
                let t = c.text(id);
                let units = unescape(t.trim_matches('"'))?;
                Ok(Value::Str(String::from_utf16_lossy(&units).into()))
            }
            "identifier" => Ok(self.frame().slot(c.text(id))?.2.clone()),
            "parenthesized_expression" => self.expr(c, c.inner(id)?),
            "binary_expression" => {
                let op = c.text(c.need(id, "operator")?);
                let left = self.expr(c, c.need(id, "left")?)?;
                let right = c.need(id, "right")?;
                match op {
                    "&&" => Ok(Value::Bool(left.as_bool()? && self.cond(c, right)?)),
                    "||" => Ok(Value::Bool(left.as_bool()? || self.cond(c, right)?)),
                    _ => {
                        let r = self.expr(c, right)?;
                        binary(op, left, r)
                    }
                }
            }
            "unary_expression" => {
                let op = c.text(c.need(id, "operator")?);
                let v = self.expr(c, c.need(id, "operand")?)?;
                match (op, v) {
                    ("!", v) => Ok(Value::Bool(!v.as_bool()?)),
                    ("+", Value::Char(ch)) => Ok(Value::Int(i32::from(ch))),
                    ("+", v) => Ok(v),
                    ("-", Value::Double(d)) => Ok(Value::Double(-d)),
                    ("-", Value::Long(l)) => Ok(Value::Long(l.wrapping_neg())),
                    ("-", v) => Ok(Value::Int((v.as_long()? as i32).wrapping_neg())),
                    ("~", Value::Long(l)) => Ok(Value::Long(!l)),
                    ("~", v) => Ok(Value::Int(!(v.as_long()? as i32))),
                    (op, _) => Err(Fault::Unsupported(format!("unary {op}"))),
                }
            }
            "update_expression" => {
                let kids: Vec<NodeId> = c.tree.children(id).collect();
                let (target, op, prefix) = match kids.as_slice() {
                    [op, t] if matches!(c.kind(*op), "++" | "--") => (*t, c.kind(*op), true),
                    [t, op] => (*t, c.kind(*op), false),
                    _ => return Err(Fault::Unsupported("update expression".into())),
                };
                let (_, old) = self.read(c, target)?;
                let delta = if op == "++" { "+" } else { "-" };
                let new = self.write(c, target, binary(delta, old.clone(), Value::Int(1))?)?;
                Ok(if prefix { new } else { old })
            }
            "assignment_expression" => {
                let target = c.need(id, "left")?;
                let op = c.text(c.need(id, "operator")?);
                let rhs = self.expr(c, c.need(id, "right")?)?;
                if op == "=" {
                    return self.write(c, target, rhs);
                }
                let (_, old) = self.read(c, target)?;
                let base = op.strip_suffix('=').unwrap_or(op);
                let v = binary(base, old, rhs)?;
                self.write(c, target, v)
            }
            "ternary_expression" => {
                if self.cond(c, c.need(id, "condition")?)? {
                    self.expr(c, c.need(id, "consequence")?)
                } else {
                    self.expr(c, c.need(id, "alternative")?)
                }
            }
            "cast_expression" => {
                let ty = c.ty(c.need(id, "type")?)?;
                self.expr(c, c.need(id, "value")?)?.convert(&ty)
            }
            "method_invocation" => self.invoke(c, id),
            "array_access" => Ok(self.read(c, id)?.1),
            "field_access" => {
                let obj = c.need(id, "object")?;
                let field = c.text(c.need(id, "field")?);
                match (c.text(obj), field) {
                    ("Integer", "MAX_VALUE") => return Ok(Value::Int(i32::MAX)),
                    ("Integer", "MIN_VALUE") => return Ok(Value::Int(i32::MIN)),
                    ("Long", "MAX_VALUE") => return Ok(Value::Long(i64::MAX)),
                    ("Long", "MIN_VALUE") => return Ok(Value::Long(i64::MIN)),
                    _ => {}
                }
                match (self.expr(c, obj)?, field) {
                    (Value::Array(a), "length") => Ok(Value::Int(a.borrow().len() as i32)),
                    (Value::Null, _) => Err(exception("NullPointerException")),
                    (v, f) => Err(Fault::Unsupported(format!("field {f} of {v}"))),
                }
            }
            "array_creation_expression" => {
                let mut elem = c.ty(c.need(id, "type")?)?;
                if let Some(init) = c.field(id, "value") {
                    let dims: usize = c.tree.children_by_field(id, "dimensions").map(|d| c.dims(d)).sum();
                    for _ in 0..dims {
                        elem = Ty::Array(Box::new(elem));
                    }
                    return self.initializer(c, init, &elem);
                }
                let mut sizes = Vec::new();
                let mut extra = 0;
                for d in c.tree.children_by_field(id, "dimensions") {
                    if c.kind(d) == "dimensions_expr" {
                        sizes.push(self.expr(c, c.inner(d)?)?.as_long()?);
                    } else {
                        extra += c.dims(d);
                    }
                }
                let mut leaf = elem;
                for _ in 0..extra {
                    leaf = Ty::Array(Box::new(leaf));
                }
                self.new_array(&leaf, &sizes, 0)
            }
            other => Err(Fault::Unsupported(other.to_owned())),
        }
    }
}

/// Stack size for interpreter threads; deep Java recursion nests many
/// Rust frames per call.
pub const STACK_BYTES: usize = 256 << 20;

/// Run `f` on a scoped thread with [`STACK_BYTES`] of stack.
pub fn on_large_stack<R: Send>(f: impl FnOnce() -> R + Send) -> R {
    std::thread::scope(|s| {
        std::thread::Builder::new()
            .stack_size(STACK_BYTES)
            .spawn_scoped(s, f)
            .expect("spawn interpreter thread")
            .join()
            .unwrap_or_else(|p| std::panic::resume_unwind(p))
    })
}

fn math(name: &str, args: &[Value]) -> Eval<Value> {
    let any_double = args.iter().any(|a| matches!(a, Value::Double(_)));
    let any_long = args.iter().any(|a| matches!(a, Value::Long(_)));
    Ok(match (name, args) {
        ("abs", [Value::Double(d)]) => Value::Double(d.abs()),
        ("abs", [Value::Long(l)]) => Value::Long(l.wrapping_abs()),
        ("abs", [v]) => Value::Int((v.as_long()? as i32).wrapping_abs()),
        ("max" | "min", [a, b]) if any_double => {
            let (x, y) = (a.as_double()?, b.as_double()?);
            Value::Double(if name == "max" { x.max(y) } else { x.min(y) })
        }
        ("max" | "min", [a, b]) => {
            let (x, y) = (a.as_long()?, b.as_long()?);
            let r = if name == "max" { x.max(y) } else { x.min(y) };
            if any_long { Value::Long(r) } else { Value::Int(r as i32) }
        }
        ("pow", [a, b]) => Value::Double(a.as_double()?.powf(b.as_double()?)),
        ("sqrt", [a]) => Value::Double(a.as_double()?.sqrt()),
        ("floorMod" | "floorDiv", [a, b]) => {
            let (x, y) = (a.as_long()?, b.as_long()?);
            if y == 0 {
                return Err(exception("ArithmeticException: / by zero"));
            }
            let (q, m) = (x.wrapping_div(y), x.wrapping_rem(y));
            let adjust = m != 0 && ((m < 0) != (y < 0));
            let r = match (name, adjust) {
                ("floorMod", true) => m + y,
                ("floorMod", false) => m,
                (_, true) => q - 1,
                _ => q,
            };
            if any_long { Value::Long(r) } else { Value::Int(r as i32) }
        }
        _ => return Err(Fault::Unsupported(format!("Math.{name}/{}", args.len()))),
    })
}

fn string_method(s: &str, name: &str, args: &[Value]) -> Eval<Value> {
    let units: Vec<u16> = s.encode_utf16().collect();
    Ok(match (name, args) {
        ("length", []) => Value::Int(units.len() as i32),
        ("isEmpty", []) => Value::Bool(units.is_empty()),
        ("charAt", [i]) => {
            let i = i.as_long()?;
            if i < 0 || i as usize >= units.len() {
                return Err(exception("StringIndexOutOfBoundsException"));
            }
            Value::Char(units[i as usize])
        }
        ("equals", [Value::Str(o)]) => Value::Bool(**o == *s),
        ("equals", [_]) => Value::Bool(false),
        _ => return Err(Fault::Unsupported(format!("String.{name}"))),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(src: &str, call: &str) -> Eval<String> {
        on_large_stack(|| {
            let unit = SourceUnit::new(Lang::Java, src);
            let p = Program::load(&unit)?;
            p.eval_source(call).map(|v| v.to_string())
        })
    }

    fn int(src: &str, call: &str) -> i64 {
        run(src, call).unwrap().parse().unwrap()
    }

    #[test]
    fn arithmetic_wraps_like_java() {
        let src = "int f(int a, int b) { return a * b; }";
        assert_eq!(int(src, "f(65536, 65536)"), 0);
        assert_eq!(int(src, "f(-7, 1) / 2"), -3);
        assert_eq!(int(src, "-7 % 3"), -1);
        assert_eq!(int(src, "-8 >>> 28"), 15);
        assert_eq!(int(src, "-8 >> 1"), -4);
        assert_eq!(int(src, "1 << 33"), 2);
        assert_eq!(int(src, "1L << 33"), 1 << 33);
        assert_eq!(int(src, "Integer.MAX_VALUE + 1"), i64::from(i32::MIN));
        assert_eq!(int(src, "(int) 3000000000L"), -1294967296);
        assert_eq!(int(src, "'a' + 1"), 98);
        assert_eq!(run(src, "f(1, 0) / 0").unwrap_err(), exception("ArithmeticException: / by zero"));
        assert_eq!(run(src, "7.0 / 2").unwrap(), "3.5");
    }

    #[test]
    fn loops_and_branches() {
        let src = r#"
public static int sumTo(int n) {
    int s = 0;
    for (int i = 1; i <= n; i++) {
        if (i % 2 == 0) { continue; }
        s += i;
    }
    int k = 0;
    while (true) { k++; if (k > 3) break; }
    do { s--; } while (s > 100);
    return s + k;
}"#;
        assert_eq!(int(src, "sumTo(5)"), 9 - 1 + 4);
        assert_eq!(int(src, "sumTo(0)"), -1 + 4);
    }

    #[test]
    fn arrays_and_strings() {
        let src = r#"
class Util {
    static int[] twice(int[] xs) {
        int[] out = new int[xs.length];
        for (int i = 0; i < xs.length; i++) out[i] = xs[i] * 2;
        return out;
    }
    static int total(int[] xs) { int s = 0; for (int x : xs) s += x; return s; }
    static int vowels(String s) {
        int n = 0;
        for (int i = 0; i < s.length(); i++) {
            char c = s.charAt(i);
            if (c == 'a' || c == 'e') n++;
        }
        return n;
    }
}"#;
        assert_eq!(run(src, "twice(new int[]{1, 2, 3})").unwrap(), "[2, 4, 6]");
        assert_eq!(int(src, "total(twice(new int[]{1, 2, 3}))"), 12);
        assert_eq!(int(src, "vowels(\"banana tree\")"), 5);
        assert_eq!(run(src, "total(new int[]{1})  + \"x\"").unwrap(), "1x");
        assert_eq!(run(src, "new int[]{1}[3]").unwrap_err(), exception("ArrayIndexOutOfBoundsException"));
    }

    #[test]
    fn recursion_and_budget() {
        let src = "int fib(int n) { return n < 2 ? n : fib(n - 1) + fib(n - 2); }\nint spin() { while (true) {} }\nint deep(int n) { return deep(n + 1); }";
        assert_eq!(int(src, "fib(15)"), 610);
        assert_eq!(run(src, "spin()").unwrap_err(), Fault::Budget);
        assert_eq!(run(src, "deep(0)").unwrap_err(), exception("StackOverflowError"));
    }

    #[test]
    fn compound_assignment_narrows() {
        let src = "int f() { int x = 10; x *= 2.5; char c = 'a'; c += 2; long s = 0; s += Integer.MAX_VALUE; s += 1; return x + c + (int) (s - 2147483648L); }";
        assert_eq!(int(src, "f()"), 25 + 99);
    }

    #[test]
    fn math_helpers() {
        let src = "int f() { return 0; }";
        assert_eq!(int(src, "Math.max(3, -4)"), 3);
        assert_eq!(int(src, "Math.abs(-4)"), 4);
        assert_eq!(int(src, "Math.floorMod(-7, 3)"), 2);
        assert_eq!(int(src, "Math.floorMod(7, -3)"), -2);
        assert_eq!(int(src, "Math.floorDiv(-7, 2)"), -4);
        assert_eq!(int(src, "Math.floorDiv(7, -2)"), -4);
    }

    #[test]
    fn unsupported_constructs_are_reported() {
        let src = "int f(int x) { switch (x) { default: return 1; } }";
        assert!(matches!(run(src, "f(1)"), Err(Fault::Unsupported(_))));
    }
}
