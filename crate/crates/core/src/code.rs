//! Source units, concrete syntax trees and span-anchored rewrites.
//!
//! Parsing goes through tree-sitter with the Java and Python grammars pinned
//! in the crate manifest. The tree-sitter tree is copied into an owned
//! [`SyntaxTree`] whose nodes are stored in pre-order, so a node's index is
//! also its position in a depth-first walk.

use std::cell::RefCell;
use std::fmt;
use std::ops::Range;
use std::str::FromStr;
use std::sync::{Arc, OnceLock};

use serde::{Deserialize, Serialize};
use tree_sitter::{Language, Parser};

use crate::error::{Error, Result};

/// Subject language of a snippet.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Lang {
    Java,
    Python,
}

impl Lang {
    pub const ALL: [Lang; 2] = [Lang::Java, Lang::Python];

    pub fn name(self) -> &'static str {
        match self {
            Lang::Java => "java",
            Lang::Python => "python",
        }
    }

    pub fn file_extension(self) -> &'static str {
        match self {
            Lang::Java => "java",
            Lang::Python => "py",
        }
    }

    fn grammar(self) -> &'static Language {
        static JAVA: OnceLock<Language> = OnceLock::new();
        static PYTHON: OnceLock<Language> = OnceLock::new();
        match self {
            Lang::Java => JAVA.get_or_init(|| tree_sitter_java::LANGUAGE.into()),
            Lang::Python => PYTHON.get_or_init(|| tree_sitter_python::LANGUAGE.into()),
        }
    }

    /// Node kinds rendered as a single token even though the grammar gives
    /// them internal structure (string literals with escape sequences).
    pub(crate) fn is_atomic_kind(self, kind: &str) -> bool {
        match self {
            Lang::Java => matches!(kind, "string_literal" | "character_literal"),
            Lang::Python => kind == "string",
        }
    }

    /// Guess from a file extension.
    pub fn from_path(path: &std::path::Path) -> Option<Lang> {
        match path.extension()?.to_str()? {
            "py" => Some(Lang::Python),
            "java" => Some(Lang::Java),
            _ => None,
        }
    }
}

impl fmt::Display for Lang {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Lang {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "java" => Ok(Lang::Java),
            "python" | "py" => Ok(Lang::Python),
            other => Err(Error::Config(format!("unknown language `{other}`"))),
        }
    }
}

pub type NodeId = usize;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Node {
    pub kind: &'static str,
    pub span: Range<usize>,
    /// Field name under which this node hangs off its parent.
    pub field: Option<&'static str>,
    pub named: bool,
    pub is_error: bool,
    pub is_missing: bool,
    pub parent: Option<NodeId>,
    pub children: Vec<NodeId>,
}

impl Node {
    pub fn is_leaf(&self) -> bool {
        self.children.is_empty()
    }
}

/// Owned concrete syntax tree in pre-order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SyntaxTree {
    nodes: Vec<Node>,
    has_error: bool,
}

impl SyntaxTree {
    pub const ROOT: NodeId = 0;

    pub fn has_error(&self) -> bool {
        self.has_error
    }

    pub fn root(&self) -> &Node {
        &self.nodes[Self::ROOT]
    }

    pub fn node(&self, id: NodeId) -> &Node {
        &self.nodes[id]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// All node ids in pre-order.
    pub fn ids(&self) -> Range<NodeId> {
        0..self.nodes.len()
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn children(&self, id: NodeId) -> impl Iterator<Item = NodeId> + '_ {
        self.nodes[id].children.iter().copied()
    }

    pub fn named_children(&self, id: NodeId) -> impl Iterator<Item = NodeId> + '_ {
        self.children(id).filter(|&c| self.nodes[c].named)
    }

    /// First child hanging off `field`.
    pub fn child_by_field(&self, id: NodeId, field: &str) -> Option<NodeId> {
        self.children(id).find(|&c| self.nodes[c].field == Some(field))
    }

    pub fn children_by_field<'a>(
        &'a self,
        id: NodeId,
        field: &'a str,
    ) -> impl Iterator<Item = NodeId> + 'a {
        self.children(id)
            .filter(move |&c| self.nodes[c].field == Some(field))
    }

    pub fn parent(&self, id: NodeId) -> Option<NodeId> {
        self.nodes[id].parent
    }

    pub fn ancestors(&self, id: NodeId) -> impl Iterator<Item = NodeId> + '_ {
        std::iter::successors(self.nodes[id].parent, move |&p| self.nodes[p].parent)
    }

    /// Ids of the subtree rooted at `id`, including `id`.
    pub fn descendants(&self, id: NodeId) -> Range<NodeId> {
        let end = self.subtree_end(id);
        id..end
    }

    fn subtree_end(&self, id: NodeId) -> NodeId {
        let mut cur = id;
        while let Some(&last) = self.nodes[cur].children.last() {
            cur = last;
        }
        cur + 1
    }

    pub fn is_ancestor(&self, ancestor: NodeId, id: NodeId) -> bool {
        self.descendants(ancestor).contains(&id)
    }

    pub fn text<'t>(&self, id: NodeId, source: &'t str) -> &'t str {
        &source[self.nodes[id].span.clone()]
    }

    /// Leaf ids in textual order. Nodes of atomic kinds count as leaves and
    /// their insides are skipped. Zero-width leaves (missing tokens) are dropped.
    pub fn token_ids(&self, lang: Lang) -> Vec<NodeId> {
        let mut out = Vec::new();
        let mut id = 0;
        while id < self.nodes.len() {
            let node = &self.nodes[id];
            if node.is_leaf() || lang.is_atomic_kind(node.kind) {
                if !node.span.is_empty() {
                    out.push(id);
                }
                id = self.subtree_end(id);
            } else {
                id += 1;
            }
        }
        out
    }

    /// Indented listing of the tree, one node per line.
    pub fn dump(&self, source: &str) -> String {
        let mut out = String::new();
        for id in self.ids() {
            let n = &self.nodes[id];
            let depth = self.ancestors(id).count();
            out.push_str(&"  ".repeat(depth));
            if let Some(f) = n.field {
                out.push_str(f);
                out.push_str(": ");
            }
            out.push_str(n.kind);
            if n.is_leaf() {
                out.push_str(&format!(" {:?}", &source[n.span.clone()]));
            }
            out.push('\n');
        }
        out
    }

    /// Comparable shape: kinds and spans in pre-order.
    pub fn shape(&self) -> Vec<(&'static str, Range<usize>)> {
        self.nodes.iter().map(|n| (n.kind, n.span.clone())).collect()
    }
}

thread_local! {
    static PARSERS: RefCell<Vec<(Lang, Parser)>> = const { RefCell::new(Vec::new()) };
}

/// Parse `text` as `lang`. Trees with error or missing nodes are still
/// returned, flagged through [`SyntaxTree::has_error`].
pub fn parse_text(lang: Lang, text: &str) -> Result<SyntaxTree> {
    PARSERS.with(|cell| {
        let mut parsers = cell.borrow_mut();
        let idx = match parsers.iter().position(|(l, _)| *l == lang) {
            Some(i) => i,
            None => {
                let mut parser = Parser::new();
                parser
                    .set_language(lang.grammar())
                    .map_err(|e| Error::InternalGrammarFailure(lang, e.to_string()))?;
                parsers.push((lang, parser));
                parsers.len() - 1
            }
        };
        let parser = &mut parsers[idx].1;
        let tree = parser
            .parse(text, None)
            .ok_or_else(|| Error::InternalGrammarFailure(lang, "parser returned no tree".into()))?;
        Ok(convert(&tree, lang.grammar()))
    })
}

fn convert(tree: &tree_sitter::Tree, grammar: &'static Language) -> SyntaxTree {
    let root = tree.root_node();
    let mut nodes: Vec<Node> = Vec::with_capacity(root.descendant_count());
    let mut cursor = tree.walk();
    let mut stack: Vec<NodeId> = Vec::new();
    loop {
        let n = cursor.node();
        let id = nodes.len();
        let parent = stack.last().copied();
        nodes.push(Node {
            kind: grammar.node_kind_for_id(n.kind_id()).unwrap_or("ERROR"),
            span: n.byte_range(),
            field: cursor
                .field_id()
                .and_then(|f| grammar.field_name_for_id(f.get())),
            named: n.is_named(),
            is_error: n.is_error(),
            is_missing: n.is_missing(),
            parent,
            children: Vec::new(),
        });
        if let Some(p) = parent {
            nodes[p].children.push(id);
        }
        if cursor.goto_first_child() {
            stack.push(id);
            continue;
        }
        loop {
            if cursor.goto_next_sibling() {
                break;
            }
            if !cursor.goto_parent() {
                return SyntaxTree {
                    nodes,
                    has_error: root.has_error(),
                };
            }
            stack.pop();
        }
    }
}

/// A snippet tagged with its language. The tree is parsed on first use and
/// cached; the unit is immutable afterwards.
pub struct SourceUnit {
    lang: Lang,
    text: Arc<str>,
    tree: OnceLock<Arc<SyntaxTree>>,
}

impl SourceUnit {
    pub fn new(lang: Lang, text: impl Into<String>) -> Self {
        SourceUnit {
            lang,
            text: Arc::from(text.into()),
            tree: OnceLock::new(),
        }
    }

    pub fn lang(&self) -> Lang {
        self.lang
    }

    pub fn text(&self) -> &str {
        &self.text
    }

    /// Parsed tree. Panics only if the pinned grammar fails to load, which
    /// [`SourceUnit::try_tree`] reports as an error instead.
    pub fn tree(&self) -> &SyntaxTree {
        self.try_tree().expect("grammar failed to load")
    }

    pub fn try_tree(&self) -> Result<&SyntaxTree> {
        if let Some(t) = self.tree.get() {
            return Ok(t);
        }
        let parsed = Arc::new(parse_text(self.lang, &self.text)?);
        Ok(self.tree.get_or_init(|| parsed))
    }

    pub fn has_error(&self) -> bool {
        self.tree().has_error()
    }

    /// Error unless the unit parses cleanly.
    pub fn require_valid(&self) -> Result<&SyntaxTree> {
        let tree = self.try_tree()?;
        if tree.has_error() {
            Err(Error::ParseErrorInput(self.lang))
        } else {
            Ok(tree)
        }
    }

    pub fn node_text(&self, id: NodeId) -> &str {
        self.tree().text(id, &self.text)
    }

    pub fn with_text(&self, text: impl Into<String>) -> SourceUnit {
        SourceUnit::new(self.lang, text)
    }
}

impl Clone for SourceUnit {
    fn clone(&self) -> Self {
        let tree = OnceLock::new();
        if let Some(t) = self.tree.get() {
            let _ = tree.set(Arc::clone(t));
        }
        SourceUnit {
            lang: self.lang,
            text: Arc::clone(&self.text),
            tree,
        }
    }
}

impl fmt::Debug for SourceUnit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SourceUnit")
            .field("lang", &self.lang)
            .field("text", &&*self.text)
            .finish()
    }
}

impl PartialEq for SourceUnit {
    fn eq(&self, other: &Self) -> bool {
        self.lang == other.lang && self.text == other.text
    }
}

impl Eq for SourceUnit {}

pub fn parse(unit: &SourceUnit) -> Result<&SyntaxTree> {
    unit.try_tree()
}

/// Replace `span` of the original text with `replacement`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rewrite {
    pub span: Range<usize>,
    pub replacement: String,
}

impl Rewrite {
    pub fn new(span: Range<usize>, replacement: impl Into<String>) -> Self {
        Rewrite {
            span,
            replacement: replacement.into(),
        }
    }

    pub fn insert(at: usize, text: impl Into<String>) -> Self {
        Rewrite::new(at..at, text)
    }

    pub fn delete(span: Range<usize>) -> Self {
        Rewrite::new(span, "")
    }
}

/// Splice a batch of non-overlapping rewrites into `text`.
pub fn splice(text: &str, rewrites: &[Rewrite]) -> Result<String> {
    let mut sorted: Vec<&Rewrite> = rewrites.iter().collect();
    sorted.sort_by_key(|r| (r.span.start, r.span.end));
    for r in &sorted {
        let s = &r.span;
        if s.start > s.end
            || s.end > text.len()
            || !text.is_char_boundary(s.start)
            || !text.is_char_boundary(s.end)
        {
            return Err(Error::SpanOutOfBounds {
                span: s.clone(),
                len: text.len(),
            });
        }
    }
    for pair in sorted.windows(2) {
        let (a, b) = (&pair[0].span, &pair[1].span);
        let both_inserts_at_same_point = a.is_empty() && b.is_empty() && a.start == b.start;
        if a.end > b.start || both_inserts_at_same_point {
            return Err(Error::OverlappingRewrites(a.clone(), b.clone()));
        }
    }
    let mut out = text.to_owned();
    for r in sorted.iter().rev() {
        out.replace_range(r.span.clone(), &r.replacement);
    }
    Ok(out)
}

/// Apply rewrites right-to-left and return the reparsed unit.
pub fn apply_rewrites(unit: &SourceUnit, rewrites: &[Rewrite]) -> Result<SourceUnit> {
    let text = splice(unit.text(), rewrites)?;
    let out = unit.with_text(text);
    out.try_tree()?;
    Ok(out)
}

/// Leaf tokens of the unit in textual order.
pub fn tokenize(unit: &SourceUnit) -> Vec<String> {
    let tree = unit.tree();
    tree.token_ids(unit.lang())
        .into_iter()
        .map(|id| tree.text(id, unit.text()).to_owned())
        .collect()
}

/// Byte offset of the start of the line containing `pos`.
pub(crate) fn line_start(text: &str, pos: usize) -> usize {
    text[..pos].rfind('\n').map_or(0, |i| i + 1)
}

/// Leading whitespace of the line containing `pos`, provided everything
/// between the line start and `pos` is whitespace.
pub(crate) fn indent_at(text: &str, pos: usize) -> Option<&str> {
    let start = line_start(text, pos);
    let prefix = &text[start..pos];
    prefix
        .chars()
        .all(|c| c == ' ' || c == '\t')
        .then_some(prefix)
}

pub(crate) fn same_line(text: &str, a: usize, b: usize) -> bool {
    let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
    !text[lo..hi].contains('\n')
}
