//! Match-based similarity metrics: BLEU and its keyword-weighted and
//! trivially-shared-n-gram variants, ROUGE-L, ChrF, edit similarity and a
//! subtree-signature syntax match. All scores lie in `[0, 1]`.
//!
//! Token-level metrics take leaf-token sequences from [`tokenize`]; ChrF and
//! edit similarity work on raw text.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::str::FromStr;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::code::{tokenize, Lang, NodeId, SourceUnit, SyntaxTree};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum MetricKind {
    Bleu,
    WeightedBleu,
    RougeL,
    ChrF,
    EditSimilarity,
    CrystalBleu,
    SyntaxMatch,
}

impl MetricKind {
    pub const ALL: [MetricKind; 7] = [
        MetricKind::Bleu,
        MetricKind::WeightedBleu,
        MetricKind::RougeL,
        MetricKind::ChrF,
        MetricKind::EditSimilarity,
        MetricKind::CrystalBleu,
        MetricKind::SyntaxMatch,
    ];

    pub fn name(self) -> &'static str {
        match self {
            MetricKind::Bleu => "bleu",
            MetricKind::WeightedBleu => "weighted-bleu",
            MetricKind::RougeL => "rouge-l",
            MetricKind::ChrF => "chrf",
            MetricKind::EditSimilarity => "ed",
            MetricKind::CrystalBleu => "crystal-bleu",
            MetricKind::SyntaxMatch => "syntax-match",
        }
    }
}

impl fmt::Display for MetricKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MetricKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.to_ascii_lowercase().replace('_', "-");
        MetricKind::ALL
            .into_iter()
            .find(|k| k.name() == norm)
            .or(match norm.as_str() {
                "weightedbleu" | "weight-bleu" => Some(MetricKind::WeightedBleu),
                "rougel" | "rouge" => Some(MetricKind::RougeL),
                "edit-similarity" | "edit" => Some(MetricKind::EditSimilarity),
                "crystalbleu" | "crystal" => Some(MetricKind::CrystalBleu),
                "syntaxmatch" | "syntax" => Some(MetricKind::SyntaxMatch),
                _ => None,
            })
            .ok_or_else(|| Error::Config(format!("unknown metric `{s}`")))
    }
}

/// How a zero n-gram match count is handled.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum Smoothing {
    /// A zero precision makes the score zero.
    None,
    /// Replace a zero match count by `epsilon`.
    Epsilon { epsilon: f64 },
    /// For orders two and up, use `(m + 1) / (c + 1)` when `m` is zero.
    AddOne,
}

impl Default for Smoothing {
    fn default() -> Self {
        Smoothing::Epsilon { epsilon: 0.1 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BleuConfig {
    pub max_n: usize,
    pub smoothing: Smoothing,
}

impl Default for BleuConfig {
    fn default() -> Self {
        BleuConfig {
            max_n: 4,
            smoothing: Smoothing::default(),
        }
    }
}

/// A set of n-grams (any order).
pub type NgramSet = HashSet<Vec<String>>;

fn ngram_counts<'s, 't>(tokens: &'s [&'t str], n: usize) -> HashMap<&'s [&'t str], usize> {
    let mut out = HashMap::new();
    if n == 0 || tokens.len() < n {
        return out;
    }
    for w in tokens.windows(n) {
        *out.entry(w).or_insert(0) += 1;
    }
    out
}

/// Weighted clipped matches, hypothesis total and reference total for one
/// order, skipping n-grams for which `skip` holds.
fn order_stats(
    reference: &[&str],
    hypothesis: &[&str],
    n: usize,
    weight: &dyn Fn(&[&str]) -> f64,
    skip: &dyn Fn(&[&str]) -> bool,
) -> (f64, f64, f64) {
    let r = ngram_counts(reference, n);
    let h = ngram_counts(hypothesis, n);
    let mut matched = 0.0;
    let mut hyp_total = 0.0;
    for (g, &c) in &h {
        if skip(g) {
            continue;
        }
        let w = weight(g);
        hyp_total += w * c as f64;
        matched += w * c.min(r.get(g).copied().unwrap_or(0)) as f64;
    }
    let ref_total = r
        .iter()
        .filter(|(g, _)| !skip(g))
        .map(|(g, &c)| weight(g) * c as f64)
        .sum();
    (matched, hyp_total, ref_total)
}

fn bleu_core(
    reference: &[&str],
    hypothesis: &[&str],
    cfg: &BleuConfig,
    weight: &dyn Fn(&[&str]) -> f64,
    skip: &dyn Fn(&[&str]) -> bool,
) -> f64 {
    if reference.is_empty() || hypothesis.is_empty() {
        return 0.0;
    }
    let mut log_sum = 0.0;
    let mut orders = 0usize;
    for n in 1..=cfg.max_n.max(1) {
        let (m, c, rc) = order_stats(reference, hypothesis, n, weight, skip);
        if c == 0.0 && rc == 0.0 {
            continue;
        }
        let p = if m > 0.0 {
            m / c
        } else if n == 1 {
            return 0.0;
        } else {
            match cfg.smoothing {
                Smoothing::None => return 0.0,
                Smoothing::Epsilon { epsilon } => epsilon / c.max(1.0),
                Smoothing::AddOne => 1.0 / (c + 1.0),
            }
        };
        log_sum += p.ln();
        orders += 1;
    }
    let hl = hypothesis.len() as f64;
    let rl = reference.len() as f64;
    let bp = if hl > rl { 1.0 } else { (1.0 - rl / hl).exp() };
    if orders == 0 {
        return bp;
    }
    (bp * (log_sum / orders as f64).exp()).clamp(0.0, 1.0)
}

fn as_strs<S: AsRef<str>>(xs: &[S]) -> Vec<&str> {
    xs.iter().map(AsRef::as_ref).collect()
}

/// Geometric mean of clipped n-gram precisions for orders up to `max_n`,
/// times the brevity penalty. Orders longer than both sequences are left
/// out, so short identical sequences still score 1.
pub fn bleu<S: AsRef<str>>(reference: &[S], hypothesis: &[S], cfg: &BleuConfig) -> f64 {
    bleu_core(&as_strs(reference), &as_strs(hypothesis), cfg, &|_| 1.0, &|_| false)
}

/// BLEU where keyword unigrams count `keyword_weight` times in both the
/// clipped matches and the totals. Higher orders are unweighted; weighting
/// them too would let unmatched keyword n-grams drag a hypothesis that
/// shares keywords below one that shares only identifiers.
pub fn weighted_bleu<S: AsRef<str>>(
    reference: &[S],
    hypothesis: &[S],
    keywords: &HashSet<&str>,
    keyword_weight: f64,
    cfg: &BleuConfig,
) -> f64 {
    let weight = |g: &[&str]| {
        if g.len() == 1 && keywords.contains(g[0]) {
            keyword_weight
        } else {
            1.0
        }
    };
    bleu_core(&as_strs(reference), &as_strs(hypothesis), cfg, &weight, &|_| false)
}

/// BLEU after deleting `shared` n-grams from both sides.
pub fn crystal_bleu<S: AsRef<str>>(
    reference: &[S],
    hypothesis: &[S],
    shared: &NgramSet,
    cfg: &BleuConfig,
) -> f64 {
    let skip = |g: &[&str]| {
        !shared.is_empty() && shared.contains(&g.iter().map(|s| (*s).to_owned()).collect::<Vec<_>>())
    };
    bleu_core(&as_strs(reference), &as_strs(hypothesis), cfg, &|_| 1.0, &skip)
}

/// The `k` most frequent n-grams (orders 1 to `max_n`) over `corpus`; ties
/// broken by the n-gram itself so the set is deterministic.
pub fn trivially_shared<S: AsRef<str>>(corpus: &[Vec<S>], max_n: usize, k: usize) -> NgramSet {
    let mut freq: BTreeMap<Vec<String>, usize> = BTreeMap::new();
    for seq in corpus {
        let toks = as_strs(seq);
        for n in 1..=max_n {
            for (g, c) in ngram_counts(&toks, n) {
                *freq.entry(g.iter().map(|s| (*s).to_owned()).collect()).or_insert(0) += c;
            }
        }
    }
    let mut ranked: Vec<(Vec<String>, usize)> = freq.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    ranked.into_iter().take(k).map(|(g, _)| g).collect()
}

fn lcs_len<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { prev[j + 1].max(cur[j]) };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

pub const ROUGE_BETA: f64 = 1.2;

/// LCS-based F-measure with recall weighted by `beta`.
pub fn rouge_l_beta<S: AsRef<str>>(reference: &[S], hypothesis: &[S], beta: f64) -> f64 {
    let r = as_strs(reference);
    let h = as_strs(hypothesis);
    let lcs = lcs_len(&r, &h) as f64;
    if lcs == 0.0 {
        return 0.0;
    }
    let p = lcs / h.len() as f64;
    let rec = lcs / r.len() as f64;
    let b2 = beta * beta;
    (1.0 + b2) * p * rec / (rec + b2 * p)
}

pub fn rouge_l<S: AsRef<str>>(reference: &[S], hypothesis: &[S]) -> f64 {
    rouge_l_beta(reference, hypothesis, ROUGE_BETA)
}

/// Collapse every whitespace run to one space and trim the ends.
pub fn normalize_whitespace(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn char_ngrams(chars: &[char], n: usize) -> HashMap<&[char], usize> {
    let mut out = HashMap::new();
    if chars.len() >= n {
        for w in chars.windows(n) {
            *out.entry(w).or_insert(0) += 1;
        }
    }
    out
}

/// Character n-gram F-score, averaged over orders 1 to `max_n`, on
/// whitespace-normalized text. Orders longer than both strings are left out.
pub fn chrf_with(reference: &str, hypothesis: &str, max_n: usize, beta: f64) -> f64 {
    let r: Vec<char> = normalize_whitespace(reference).chars().collect();
    let h: Vec<char> = normalize_whitespace(hypothesis).chars().collect();
    if h.is_empty() {
        return 0.0;
    }
    let b2 = beta * beta;
    let mut total = 0.0;
    let mut orders = 0;
    for n in 1..=max_n {
        let rg = char_ngrams(&r, n);
        let hg = char_ngrams(&h, n);
        let rc: usize = rg.values().sum();
        let hc: usize = hg.values().sum();
        if rc == 0 && hc == 0 {
            continue;
        }
        orders += 1;
        let m: usize = hg
            .iter()
            .map(|(g, &c)| c.min(rg.get(g).copied().unwrap_or(0)))
            .sum();
        if m == 0 {
            continue;
        }
        let p = m as f64 / hc as f64;
        let rec = m as f64 / rc as f64;
        total += (1.0 + b2) * p * rec / (b2 * p + rec);
    }
    if orders == 0 {
        0.0
    } else {
        total / orders as f64
    }
}

pub fn chrf(reference: &str, hypothesis: &str) -> f64 {
    chrf_with(reference, hypothesis, 6, 2.0)
}

pub fn levenshtein<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, x) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, y) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(x != y);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// `1 - levenshtein / max length` over characters; two empty strings are
/// identical.
pub fn edit_similarity(reference: &str, hypothesis: &str) -> f64 {
    let r: Vec<char> = reference.chars().collect();
    let h: Vec<char> = hypothesis.chars().collect();
    let longest = r.len().max(h.len());
    if longest == 0 {
        return 1.0;
    }
    1.0 - levenshtein(&r, &h) as f64 / longest as f64
}

pub const SYNTAX_DEPTH: usize = 4;

fn is_comment(kind: &str) -> bool {
    matches!(kind, "comment" | "line_comment" | "block_comment")
}

fn syntax_children(tree: &SyntaxTree, id: NodeId) -> impl Iterator<Item = NodeId> + '_ {
    tree.named_children(id).filter(move |&c| !is_comment(tree.node(c).kind))
}

/// Named-node kinds of the subtree at `id`, cut off `depth` levels down.
pub fn subtree_signature(tree: &SyntaxTree, id: NodeId, depth: usize) -> String {
    let kind = tree.node(id).kind;
    let kids: Vec<NodeId> = syntax_children(tree, id).collect();
    if depth == 0 || kids.is_empty() {
        return kind.to_owned();
    }
    let inner: Vec<String> = kids
        .into_iter()
        .map(|c| subtree_signature(tree, c, depth - 1))
        .collect();
    format!("({kind} {})", inner.join(" "))
}

/// Signatures of every named node that has named children.
pub fn subtree_signatures(tree: &SyntaxTree, depth: usize) -> Vec<String> {
    tree.ids()
        .filter(|&id| {
            let n = tree.node(id);
            n.named && !is_comment(n.kind) && syntax_children(tree, id).next().is_some()
        })
        .map(|id| subtree_signature(tree, id, depth))
        .collect()
}

/// Fraction of the reference's subtree signatures found among the
/// hypothesis's. Unparsable input scores 0.
pub fn syntax_match_depth(reference: &SourceUnit, hypothesis: &SourceUnit, depth: usize) -> f64 {
    let (Ok(rt), Ok(ht)) = (reference.require_valid(), hypothesis.require_valid()) else {
        return 0.0;
    };
    let refs = subtree_signatures(rt, depth);
    if refs.is_empty() {
        return 0.0;
    }
    let hyps: HashSet<String> = subtree_signatures(ht, depth).into_iter().collect();
    refs.iter().filter(|s| hyps.contains(*s)).count() as f64 / refs.len() as f64
}

pub fn syntax_match(reference: &SourceUnit, hypothesis: &SourceUnit) -> f64 {
    syntax_match_depth(reference, hypothesis, SYNTAX_DEPTH)
}

/// Reserved words of `lang`.
pub fn keywords(lang: Lang) -> &'static HashSet<&'static str> {
    static JAVA: OnceLock<HashSet<&'static str>> = OnceLock::new();
    static PYTHON: OnceLock<HashSet<&'static str>> = OnceLock::new();
    let (cell, text) = match lang {
        Lang::Java => (&JAVA, include_str!("../data/keywords/java.txt")),
        Lang::Python => (&PYTHON, include_str!("../data/keywords/python.txt")),
    };
    cell.get_or_init(|| text.lines().map(str::trim).filter(|l| !l.is_empty()).collect())
}

pub const KEYWORD_WEIGHT: f64 = 5.0;
pub const CRYSTAL_TOP_K: usize = 500;

/// Settings shared by every metric over one corpus.
#[derive(Debug, Clone)]
pub struct MetricContext {
    pub bleu: BleuConfig,
    pub keyword_weight: f64,
    pub syntax_depth: usize,
    pub shared: HashMap<Lang, NgramSet>,
}

impl Default for MetricContext {
    fn default() -> Self {
        MetricContext {
            bleu: BleuConfig::default(),
            keyword_weight: KEYWORD_WEIGHT,
            syntax_depth: SYNTAX_DEPTH,
            shared: HashMap::new(),
        }
    }
}

impl MetricContext {
    /// Compute the trivially shared n-grams per language from `units`.
    pub fn with_shared_ngrams<'a>(mut self, units: impl IntoIterator<Item = &'a SourceUnit>, k: usize) -> Self {
        let mut by_lang: HashMap<Lang, Vec<Vec<String>>> = HashMap::new();
        for u in units {
            by_lang.entry(u.lang()).or_default().push(tokenize(u));
        }
        for (lang, seqs) in by_lang {
            self.shared.insert(lang, trivially_shared(&seqs, self.bleu.max_n, k));
        }
        self
    }

    pub fn score(&self, kind: MetricKind, reference: &SourceUnit, hypothesis: &SourceUnit) -> f64 {
        let toks = || (tokenize(reference), tokenize(hypothesis));
        match kind {
            MetricKind::Bleu => {
                let (r, h) = toks();
                bleu(&r, &h, &self.bleu)
            }
            MetricKind::WeightedBleu => {
                let (r, h) = toks();
                weighted_bleu(&r, &h, keywords(reference.lang()), self.keyword_weight, &self.bleu)
            }
            MetricKind::RougeL => {
                let (r, h) = toks();
                rouge_l(&r, &h)
            }
            MetricKind::ChrF => chrf(reference.text(), hypothesis.text()),
            MetricKind::EditSimilarity => edit_similarity(reference.text(), hypothesis.text()),
            MetricKind::CrystalBleu => {
                let (r, h) = toks();
                let empty = NgramSet::new();
                let shared = self.shared.get(&reference.lang()).unwrap_or(&empty);
                crystal_bleu(&r, &h, shared, &self.bleu)
            }
            MetricKind::SyntaxMatch => syntax_match_depth(reference, hypothesis, self.syntax_depth),
        }
    }
}
