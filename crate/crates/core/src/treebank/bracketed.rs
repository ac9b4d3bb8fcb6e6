use std::collections::BTreeSet;
use std::path::Path;

use super::tree::{Span, TreeRepr};
use super::vocab::{Punctuation, Sentence, Vocabulary};
use crate::error::{Error, Result};

/// An n-ary labeled tree as read from a PTB-style s-expression.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum LabeledTree {
    Leaf(String),
    Node { label: String, children: Vec<LabeledTree> },
}

#[derive(Debug, PartialEq, Eq)]
enum Tok<'a> {
    Open,
    Close,
    Atom(&'a str),
}

fn tokenize(s: &str) -> Vec<Tok<'_>> {
    let mut out = Vec::new();
    let mut start = None;
    for (i, c) in s.char_indices() {
        if c == '(' || c == ')' || c.is_whitespace() {
            if let Some(st) = start.take() {
                out.push(Tok::Atom(&s[st..i]));
            }
            match c {
                '(' => out.push(Tok::Open),
                ')' => out.push(Tok::Close),
                _ => {}
            }
        } else if start.is_none() {
            start = Some(i);
        }
    }
    if let Some(st) = start {
        out.push(Tok::Atom(&s[st..]));
    }
    out
}

impl LabeledTree {
    /// Parses one s-expression. The root may carry an empty label, as in
    /// `( (S ...) )`.
    pub fn parse(text: &str) -> std::result::Result<Self, String> {
        let toks = tokenize(text);
        let mut pos = 0;
        if toks.first() != Some(&Tok::Open) {
            return Err("expected '(' at start of tree".into());
        }
        pos += 1;
        let tree = parse_node(&toks, &mut pos)?;
        if pos != toks.len() {
            return Err("unbalanced parentheses: material after the closing ')'".into());
        }
        Ok(tree)
    }

    pub fn label(&self) -> Option<&str> {
        match self {
            LabeledTree::Leaf(_) => None,
            LabeledTree::Node { label, .. } => Some(label),
        }
    }

    pub fn is_preterminal(&self) -> bool {
        matches!(self, LabeledTree::Node { children, .. }
            if children.len() == 1 && matches!(children[0], LabeledTree::Leaf(_)))
    }

    pub fn words(&self) -> Vec<&str> {
        let mut out = Vec::new();
        self.collect_words(&mut out);
        out
    }

    fn collect_words<'a>(&'a self, out: &mut Vec<&'a str>) {
        match self {
            LabeledTree::Leaf(w) => out.push(w),
            LabeledTree::Node { children, .. } => children.iter().for_each(|c| c.collect_words(out)),
        }
    }

    pub fn len(&self) -> usize {
        match self {
            LabeledTree::Leaf(_) => 1,
            LabeledTree::Node { children, .. } => children.iter().map(LabeledTree::len).sum(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `(label, span)` for every phrasal node, i.e. every node above the
    /// preterminal level, in pre-order. Unary chains yield one entry per node.
    pub fn constituents(&self) -> Vec<(String, Span)> {
        let mut out = Vec::new();
        self.collect_constituents(1, &mut out);
        out
    }

    fn collect_constituents(&self, start: usize, out: &mut Vec<(String, Span)>) -> usize {
        match self {
            LabeledTree::Leaf(_) => 1,
            LabeledTree::Node { label, children } => {
                if self.is_preterminal() {
                    return 1;
                }
                let slot = out.len();
                out.push((label.clone(), (start, start)));
                let mut width = 0;
                for c in children {
                    width += c.collect_constituents(start + width, out);
                }
                out[slot].1 = (start, start + width - 1);
                width
            }
        }
    }

    /// Unlabeled spans of phrasal nodes covering at least two words.
    pub fn spans(&self) -> BTreeSet<Span> {
        self.constituents()
            .into_iter()
            .map(|(_, s)| s)
            .filter(|&(i, j)| j > i)
            .collect()
    }

    /// Right-branching binarization: children `c1 .. ck` become
    /// `(c1 (c2 (... ck)))`; unary nodes collapse; labels are dropped.
    pub fn binarize_right(&self) -> TreeRepr {
        let mut spans = BTreeSet::new();
        let mut next = 1;
        binarize(self, &mut next, &mut spans);
        TreeRepr::from_spans(next - 1, spans).expect("right binarization yields a valid tree")
    }
}

impl std::fmt::Display for LabeledTree {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            LabeledTree::Leaf(w) => f.write_str(w),
            LabeledTree::Node { label, children } => {
                write!(f, "({label}")?;
                for c in children {
                    write!(f, " {c}")?;
                }
                f.write_str(")")
            }
        }
    }
}

/// Strips function tags and indices (`NP-SBJ-1` -> `NP`, `PP=2` -> `PP`),
/// leaving bracket-style labels such as `-NONE-` intact.
pub fn base_label(label: &str) -> &str {
    if label.starts_with('-') {
        return label;
    }
    match label.find(['-', '=']) {
        Some(0) | None => label,
        Some(i) => &label[..i],
    }
}

fn parse_node(toks: &[Tok<'_>], pos: &mut usize) -> std::result::Result<LabeledTree, String> {
    let label = match toks.get(*pos) {
        Some(Tok::Atom(a)) => {
            *pos += 1;
            a.to_string()
        }
        _ => String::new(),
    };
    let mut children = Vec::new();
    loop {
        match toks.get(*pos) {
            None => return Err("unbalanced parentheses: missing ')'".into()),
            Some(Tok::Close) => {
                *pos += 1;
                break;
            }
            Some(Tok::Open) => {
                *pos += 1;
                children.push(parse_node(toks, pos)?);
            }
            Some(Tok::Atom(a)) => {
                *pos += 1;
                children.push(LabeledTree::Leaf(a.to_string()));
            }
        }
    }
    if children.is_empty() {
        return Err(format!("constituent {label:?} has no leaves"));
    }
    Ok(LabeledTree::Node { label, children })
}

/// Returns the span covered by `t`, inserting every binarized span.
fn binarize(t: &LabeledTree, next: &mut usize, spans: &mut BTreeSet<Span>) -> Span {
    match t {
        LabeledTree::Leaf(_) => {
            let s = (*next, *next);
            *next += 1;
            spans.insert(s);
            s
        }
        LabeledTree::Node { children, .. } => {
            let kids: Vec<Span> = children.iter().map(|c| binarize(c, next, spans)).collect();
            let mut acc = *kids.last().expect("nodes have children");
            for k in kids.iter().rev().skip(1) {
                acc = (k.0, acc.1);
                spans.insert(acc);
            }
            acc
        }
    }
}

/// Reads one tree per non-empty line.
pub fn read_trees(path: &Path) -> Result<Vec<LabeledTree>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut trees = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let tree = LabeledTree::parse(line).map_err(|message| Error::Parse {
            path: path.to_path_buf(),
            line: n + 1,
            message,
        })?;
        trees.push(tree);
    }
    if trees.is_empty() {
        return Err(Error::Data(format!("{}: no trees", path.display())));
    }
    Ok(trees)
}

/// Reads a treebank and resolves its leaves against `vocab`.
pub fn read_bracketed(
    path: &Path,
    vocab: &Vocabulary,
    punct: &Punctuation,
) -> Result<Vec<(Sentence, LabeledTree)>> {
    read_trees(path)?
        .into_iter()
        .map(|t| Ok((Sentence::new(&t.words(), vocab, punct)?, t)))
        .collect()
}
