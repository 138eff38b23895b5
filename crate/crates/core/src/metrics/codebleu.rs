//! CodeBLEU over Java token sequences: token BLEU, keyword-weighted BLEU,
//! bracket-skeleton subtree match and a def-use dataflow match.
//!
//! The syntax and dataflow parts run on a bracket/statement skeleton
//! rather than a full Java parse. Identifiers are normalized to `id` and
//! literals to `lit` in the skeleton, and variables to first-appearance
//! names in dataflow edges, so consistent renaming does not affect either.

use std::collections::HashMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::bleu::{bleu_from_stats, weighted_stats, NgramStats};
use crate::java::{is_keyword, tokens_from_texts, Token, TokenKind};

/// Weight of a keyword unigram relative to any other token in the
/// weighted-BLEU component (5:1).
pub const KEYWORD_WEIGHT: f64 = 1.0;
pub const OTHER_WEIGHT: f64 = 0.2;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CodeBleuWeights {
    pub bleu: f64,
    pub weighted_bleu: f64,
    pub ast: f64,
    pub dataflow: f64,
}

impl Default for CodeBleuWeights {
    fn default() -> Self {
        Self {
            bleu: 0.25,
            weighted_bleu: 0.25,
            ast: 0.25,
            dataflow: 0.25,
        }
    }
}

impl CodeBleuWeights {
    pub fn is_valid(&self) -> bool {
        let w = [self.bleu, self.weighted_bleu, self.ast, self.dataflow];
        w.iter().all(|v| *v >= 0.0 && v.is_finite()) && (w.iter().sum::<f64>() - 1.0).abs() < 1e-9
    }

    pub fn combine(&self, c: &CodeBleuScore) -> f64 {
        self.bleu * c.bleu + self.weighted_bleu * c.weighted_bleu + self.ast * c.ast_match + self.dataflow * c.dataflow_match
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CodeBleuScore {
    pub score: f64,
    pub bleu: f64,
    pub weighted_bleu: f64,
    pub ast_match: f64,
    pub dataflow_match: f64,
    /// Set when either side's bracket skeleton did not balance; the syntax
    /// and dataflow components are then 0.
    pub parse_failed: bool,
}

/// Counts behind one or many CodeBLEU evaluations.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct CodeBleuStats {
    pub bleu: NgramStats,
    pub weighted: NgramStats,
    pub ast_matched: f64,
    pub ast_total: f64,
    pub dataflow_matched: f64,
    pub dataflow_reference: f64,
    pub dataflow_candidate: f64,
    pub parse_failures: usize,
}

impl std::ops::AddAssign for CodeBleuStats {
    fn add_assign(&mut self, o: Self) {
        self.bleu += o.bleu;
        self.weighted += o.weighted;
        self.ast_matched += o.ast_matched;
        self.ast_total += o.ast_total;
        self.dataflow_matched += o.dataflow_matched;
        self.dataflow_reference += o.dataflow_reference;
        self.dataflow_candidate += o.dataflow_candidate;
        self.parse_failures += o.parse_failures;
    }
}

impl CodeBleuStats {
    pub fn score(&self, weights: &CodeBleuWeights) -> CodeBleuScore {
        let ast_match = if self.ast_total > 0.0 {
            self.ast_matched / self.ast_total
        } else {
            0.0
        };
        let dataflow_match = if self.dataflow_reference > 0.0 {
            self.dataflow_matched / self.dataflow_reference
        } else if self.dataflow_candidate == 0.0 && self.parse_failures == 0 {
            1.0
        } else {
            0.0
        };
        let mut s = CodeBleuScore {
            score: 0.0,
            bleu: bleu_from_stats(&self.bleu),
            weighted_bleu: bleu_from_stats(&self.weighted),
            ast_match,
            dataflow_match,
            parse_failed: self.parse_failures > 0,
        };
        s.score = weights.combine(&s);
        s
    }
}

fn unigram_weight(token: &str) -> f64 {
    if is_keyword(token) {
        KEYWORD_WEIGHT
    } else {
        OTHER_WEIGHT
    }
}

enum Node {
    Leaf(String),
    Inner(&'static str, Vec<Node>),
}

fn leaf_label(tok: &Token) -> String {
    match tok.kind {
        TokenKind::Identifier | TokenKind::Annotation => "id".into(),
        k if k.is_literal() => "lit".into(),
        _ => tok.text.clone(),
    }
}

struct Frame {
    label: &'static str,
    children: Vec<Node>,
    /// Open statement inside a `{` block.
    pending: Vec<Node>,
}

impl Frame {
    fn new(label: &'static str) -> Self {
        Self {
            label,
            children: Vec::new(),
            pending: Vec::new(),
        }
    }

    fn push(&mut self, node: Node) {
        if self.label == "{" {
            self.pending.push(node);
        } else {
            self.children.push(node);
        }
    }

    fn flush(&mut self) {
        if !self.pending.is_empty() {
            let stmt = std::mem::take(&mut self.pending);
            self.children.push(Node::Inner("stmt", stmt));
        }
    }

    fn close(mut self) -> Node {
        self.flush();
        Node::Inner(self.label, self.children)
    }
}

/// Nesting beyond this is reported as a parse failure.
const MAX_DEPTH: usize = 256;

/// Brackets nest; inside braces, `;` or a nested block ends a statement.
fn skeleton(tokens: &[Token]) -> Option<Node> {
    let mut stack = vec![Frame::new("root")];
    for tok in tokens {
        if stack.len() > MAX_DEPTH {
            return None;
        }
        let t = tok.text.as_str();
        match (tok.kind, t) {
            (TokenKind::Punctuation, "(") => stack.push(Frame::new("(")),
            (TokenKind::Punctuation, "[") => stack.push(Frame::new("[")),
            (TokenKind::Punctuation, "{") => stack.push(Frame::new("{")),
            (TokenKind::Punctuation, ")" | "]" | "}") => {
                let open = match t {
                    ")" => "(",
                    "]" => "[",
                    _ => "{",
                };
                if stack.len() < 2 || stack.last()?.label != open {
                    return None;
                }
                let node = stack.pop()?.close();
                let parent = stack.last_mut()?;
                parent.push(node);
                if open == "{" && parent.label == "{" {
                    parent.flush();
                }
            }
            (TokenKind::Punctuation, ";") => {
                let top = stack.last_mut()?;
                top.push(Node::Leaf(";".into()));
                if top.label == "{" {
                    top.flush();
                }
            }
            _ => stack.last_mut()?.push(Node::Leaf(leaf_label(tok))),
        }
    }
    if stack.len() != 1 {
        return None;
    }
    stack.pop().map(Frame::close)
}

/// Serializes every inner node, collecting all subtrees.
fn subtrees(node: &Node, out: &mut Vec<String>) -> String {
    match node {
        Node::Leaf(s) => s.clone(),
        Node::Inner(label, children) => {
            let mut s = String::new();
            let _ = write!(s, "({label}");
            for c in children {
                s.push(' ');
                s.push_str(&subtrees(c, out));
            }
            s.push(')');
            out.push(s.clone());
            s
        }
    }
}

fn multiset<T: std::hash::Hash + Eq>(items: Vec<T>) -> HashMap<T, usize> {
    let mut m = HashMap::new();
    for i in items {
        *m.entry(i).or_insert(0) += 1;
    }
    m
}

fn clipped_matches<T: std::hash::Hash + Eq>(cand: &HashMap<T, usize>, reference: &HashMap<T, usize>) -> usize {
    reference
        .iter()
        .map(|(k, &r)| r.min(cand.get(k).copied().unwrap_or(0)))
        .sum()
}

const ASSIGN_OPS: &[&str] = &[
    "=", "+=", "-=", "*=", "/=", "%=", "&=", "|=", "^=", "<<=", ">>=", ">>>=",
];

fn is_variable(tokens: &[Token], i: usize) -> bool {
    if tokens[i].kind != TokenKind::Identifier {
        return false;
    }
    let next = tokens.get(i + 1);
    let prev = i.checked_sub(1).map(|p| &tokens[p]);
    !(next.is_some_and(|n| n.text == "(" || n.text == "." && starts_upper(&tokens[i].text) || n.kind == TokenKind::Identifier)
        || prev.is_some_and(|p| p.text == "." || p.text == "new"))
}

fn starts_upper(s: &str) -> bool {
    s.chars().next().is_some_and(char::is_uppercase)
}

/// `computedFrom` edges for assignments and `comesFrom` edges linking each
/// use to the definition it reads, all over normalized variable names.
fn dataflow_edges(tokens: &[Token]) -> Vec<(&'static str, String, String)> {
    let mut names: HashMap<String, usize> = HashMap::new();
    let mut norm = |s: &str| -> String {
        let n = names.len();
        format!("v{}", *names.entry(s.to_string()).or_insert(n))
    };
    let mut defs: HashMap<String, usize> = HashMap::new();
    let mut edges = Vec::new();
    let mut i = 0;
    while i < tokens.len() {
        if !is_variable(tokens, i) {
            i += 1;
            continue;
        }
        let var = norm(&tokens[i].text);
        let op = tokens.get(i + 1).map(|t| t.text.as_str());
        if op.is_some_and(|o| ASSIGN_OPS.contains(&o)) {
            // right-hand side up to `;` or `,` / closing bracket at its depth
            let mut depth = 0i32;
            let mut j = i + 2;
            while j < tokens.len() {
                match tokens[j].text.as_str() {
                    "(" | "[" | "{" => depth += 1,
                    ")" | "]" | "}" if depth == 0 => break,
                    ")" | "]" | "}" => depth -= 1,
                    ";" => break,
                    "," if depth == 0 => break,
                    _ => {}
                }
                if is_variable(tokens, j) {
                    let src = norm(&tokens[j].text);
                    let gen = defs.get(&src).copied().unwrap_or(0);
                    edges.push(("comesFrom", src.clone(), format!("{src}#{gen}")));
                    edges.push(("computedFrom", var.clone(), src));
                }
                j += 1;
            }
            if op != Some("=") {
                edges.push(("computedFrom", var.clone(), var.clone()));
            }
            *defs.entry(var).or_insert(0) += 1;
            i = j;
            continue;
        }
        let gen = defs.get(&var).copied().unwrap_or(0);
        if matches!(op, Some("++") | Some("--"))
            || i.checked_sub(1).is_some_and(|p| matches!(tokens[p].text.as_str(), "++" | "--"))
        {
            edges.push(("computedFrom", var.clone(), var.clone()));
            *defs.entry(var).or_insert(0) += 1;
        } else {
            edges.push(("comesFrom", var.clone(), format!("{var}#{gen}")));
        }
        i += 1;
    }
    edges
}

/// Per-pair statistics for CodeBLEU.
pub fn codebleu_stats<S: AsRef<str>, R: AsRef<str>>(candidate: &[S], reference: &[R]) -> CodeBleuStats {
    let mut stats = CodeBleuStats {
        bleu: weighted_stats(candidate, reference, |_| 1.0),
        weighted: weighted_stats(candidate, reference, unigram_weight),
        ..CodeBleuStats::default()
    };
    let cand = tokens_from_texts(candidate);
    let refr = tokens_from_texts(reference);
    match (skeleton(&cand), skeleton(&refr)) {
        (Some(c), Some(r)) => {
            let (mut cs, mut rs) = (Vec::new(), Vec::new());
            subtrees(&c, &mut cs);
            subtrees(&r, &mut rs);
            stats.ast_total = rs.len() as f64;
            stats.ast_matched = clipped_matches(&multiset(cs), &multiset(rs)) as f64;
            let ce = dataflow_edges(&cand);
            let re = dataflow_edges(&refr);
            stats.dataflow_reference = re.len() as f64;
            stats.dataflow_candidate = ce.len() as f64;
            stats.dataflow_matched = clipped_matches(&multiset(ce), &multiset(re)) as f64;
        }
        (_, r) => {
            stats.parse_failures = 1;
            stats.ast_total = r
                .map(|r| {
                    let mut rs = Vec::new();
                    subtrees(&r, &mut rs);
                    rs.len() as f64
                })
                .unwrap_or(1.0);
            stats.dataflow_reference = dataflow_edges(&refr).len() as f64;
        }
    }
    stats
}

pub fn codebleu<S: AsRef<str>, R: AsRef<str>>(candidate: &[S], reference: &[R], weights: &CodeBleuWeights) -> CodeBleuScore {
    codebleu_stats(candidate, reference).score(weights)
}
