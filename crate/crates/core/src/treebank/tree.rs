use std::collections::BTreeSet;
use std::fmt;

use num_bigint::BigUint;

use crate::error::{Error, Result};

/// Inclusive 1-based `(start, end)` span over sentence positions.
pub type Span = (usize, usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Action {
    Shift,
    Reduce,
}

impl Action {
    pub fn as_bit(self) -> u8 {
        match self {
            Action::Shift => 0,
            Action::Reduce => 1,
        }
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Action::Shift => "S",
            Action::Reduce => "R",
        })
    }
}

/// An unlabeled binary tree over `len` words, kept both as its span set
/// (singletons and the full span included) and as its shift/reduce sequence.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct TreeRepr {
    len: usize,
    spans: BTreeSet<Span>,
    actions: Vec<Action>,
}

impl TreeRepr {
    pub fn from_spans(len: usize, spans: impl IntoIterator<Item = Span>) -> Result<Self> {
        let spans: BTreeSet<Span> = spans.into_iter().collect();
        let actions = tree_to_actions(len, &spans)?;
        Ok(TreeRepr { len, spans, actions })
    }

    pub fn from_actions(actions: Vec<Action>) -> Result<Self> {
        let (len, spans) = actions_to_tree(&actions)?;
        Ok(TreeRepr { len, spans, actions })
    }

    /// Every constituent closes as early as possible: `((x1 x2) x3) ...`.
    pub fn left_branching(len: usize) -> Result<Self> {
        check_len(len)?;
        let mut actions = vec![Action::Shift];
        for _ in 1..len {
            actions.push(Action::Shift);
            actions.push(Action::Reduce);
        }
        TreeRepr::from_actions(actions)
    }

    /// All shifts, then all reduces: `x1 (x2 (x3 ...))`.
    pub fn right_branching(len: usize) -> Result<Self> {
        check_len(len)?;
        let mut actions = vec![Action::Shift; len];
        actions.extend(std::iter::repeat_n(Action::Reduce, len - 1));
        TreeRepr::from_actions(actions)
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn spans(&self) -> &BTreeSet<Span> {
        &self.spans
    }

    pub fn actions(&self) -> &[Action] {
        &self.actions
    }

    pub fn contains(&self, span: Span) -> bool {
        self.spans.contains(&span)
    }

    /// Split point `k` of a constituent `(i, j)` with children `(i, k)` and `(k+1, j)`.
    pub fn split(&self, span: Span) -> Option<usize> {
        let (i, j) = span;
        if i >= j || !self.contains(span) {
            return None;
        }
        (i..j).find(|&k| self.contains((i, k)) && self.contains((k + 1, j)))
    }

    /// Bracketed form with `X` as the only label and each word wrapped as
    /// `(X word)`.
    pub fn to_bracketed<S: AsRef<str>>(&self, words: &[S]) -> String {
        let mut out = String::new();
        if self.len == 1 {
            out.push_str("(X ");
            self.write_span(words, (1, 1), &mut out);
            out.push(')');
        } else {
            self.write_span(words, (1, self.len), &mut out);
        }
        out
    }

    fn write_span<S: AsRef<str>>(&self, words: &[S], span: Span, out: &mut String) {
        let (i, j) = span;
        out.push_str("(X ");
        if i == j {
            let w = words.get(i - 1).map_or("<missing>", |w| w.as_ref());
            out.push_str(&escape_word(w));
        } else {
            let k = self.split(span).expect("valid tree");
            self.write_span(words, (i, k), out);
            out.push(' ');
            self.write_span(words, (k + 1, j), out);
        }
        out.push(')');
    }
}

fn escape_word(w: &str) -> String {
    match w {
        "(" => "-LRB-".into(),
        ")" => "-RRB-".into(),
        _ => w.replace('(', "-LRB-").replace(')', "-RRB-"),
    }
}

fn check_len(len: usize) -> Result<()> {
    if len == 0 {
        Err(Error::InvalidTree("a tree needs at least one word".into()))
    } else {
        Ok(())
    }
}

/// Depth-first left-to-right linearization: a shift per word, a reduce when a
/// constituent closes.
pub fn tree_to_actions(len: usize, spans: &BTreeSet<Span>) -> Result<Vec<Action>> {
    check_len(len)?;
    if let Some(&(i, j)) = spans.iter().find(|&&(i, j)| i < 1 || i > j || j > len) {
        return Err(Error::InvalidTree(format!("span ({i}, {j}) outside 1..={len}")));
    }
    if !spans.contains(&(1, len)) {
        return Err(Error::InvalidTree(format!("missing full span (1, {len})")));
    }
    let mut actions = Vec::with_capacity(2 * len - 1);
    let mut visited = 0usize;
    let mut todo = vec![Some((1, len))];
    // `None` marks the reduce that closes a constituent.
    while let Some(item) = todo.pop() {
        let Some((i, j)) = item else {
            actions.push(Action::Reduce);
            continue;
        };
        if !spans.contains(&(i, j)) {
            return Err(Error::InvalidTree(format!("missing span ({i}, {j})")));
        }
        visited += 1;
        if i == j {
            actions.push(Action::Shift);
            continue;
        }
        let k = (i..j)
            .find(|&k| spans.contains(&(i, k)) && spans.contains(&(k + 1, j)))
            .ok_or_else(|| Error::InvalidTree(format!("span ({i}, {j}) has no binary split")))?;
        todo.push(None);
        todo.push(Some((k + 1, j)));
        todo.push(Some((i, k)));
    }
    if visited != spans.len() {
        return Err(Error::InvalidTree(format!(
            "{} spans do not form a binary tree over {len} words",
            spans.len()
        )));
    }
    Ok(actions)
}

/// Inverse of [`tree_to_actions`] by stack simulation. Returns the sentence
/// length and the span set.
pub fn actions_to_tree(actions: &[Action]) -> Result<(usize, BTreeSet<Span>)> {
    let mut stack: Vec<Span> = Vec::new();
    let mut spans = BTreeSet::new();
    let mut shifted = 0;
    for (t, a) in actions.iter().enumerate() {
        match a {
            Action::Shift => {
                shifted += 1;
                stack.push((shifted, shifted));
                spans.insert((shifted, shifted));
            }
            Action::Reduce => {
                if stack.len() < 2 {
                    return Err(Error::InvalidTree(format!(
                        "reduce at step {} with {} item(s) on the stack",
                        t + 1,
                        stack.len()
                    )));
                }
                let right = stack.pop().unwrap();
                let left = stack.pop().unwrap();
                let span = (left.0, right.1);
                stack.push(span);
                spans.insert(span);
            }
        }
    }
    if stack.len() != 1 {
        return Err(Error::InvalidTree(format!(
            "{} item(s) left on the stack after {} actions",
            stack.len(),
            actions.len()
        )));
    }
    Ok((shifted, spans))
}

/// Number of binary trees over `len` words: the `(len-1)`-th Catalan number.
pub fn count_trees(len: usize) -> Result<BigUint> {
    check_len(len)?;
    let n = len - 1;
    // C_n = (2n)! / ((n+1)! n!)
    let mut num = BigUint::from(1u32);
    for k in (n + 2)..=(2 * n) {
        num *= BigUint::from(k);
    }
    let mut den = BigUint::from(1u32);
    for k in 2..=n {
        den *= BigUint::from(k);
    }
    Ok(num / den)
}

/// Natural log of [`count_trees`], computed without big integers.
pub fn log_count_trees(len: usize) -> f64 {
    if len <= 1 {
        return 0.0;
    }
    let n = len - 1;
    let num: f64 = ((n + 2)..=(2 * n)).map(|k| (k as f64).ln()).sum();
    let den: f64 = (2..=n).map(|k| (k as f64).ln()).sum();
    num - den
}

#[cfg(test)]
mod tests {
    use super::*;
    use Action::{Reduce as R, Shift as S};

    #[test]
    fn figure_example_linearization() {
        // (x1 (x2 x3)) x4
        let spans = [(1, 1), (2, 2), (3, 3), (4, 4), (2, 3), (1, 3), (1, 4)];
        let t = TreeRepr::from_spans(4, spans).unwrap();
        assert_eq!(t.actions(), &[S, S, S, R, R, S, R]);
    }

    #[test]
    fn small_linearizations() {
        let t2 = TreeRepr::from_spans(2, [(1, 1), (2, 2), (1, 2)]).unwrap();
        assert_eq!(t2.actions(), &[S, S, R]);
        let t3 = TreeRepr::from_spans(3, [(1, 1), (2, 2), (3, 3), (1, 2), (1, 3)]).unwrap();
        assert_eq!(t3.actions(), &[S, S, R, S, R]);
    }

    #[test]
    fn inverse_of_hand_example() {
        let t = TreeRepr::from_actions(vec![S, S, R, S, R]).unwrap();
        let expected: BTreeSet<Span> = [(1, 1), (2, 2), (3, 3), (1, 2), (1, 3)].into();
        assert_eq!(t.spans(), &expected);
    }

    #[test]
    fn malformed_actions_are_rejected() {
        assert!(TreeRepr::from_actions(vec![S, R, S]).is_err());
        assert!(TreeRepr::from_actions(vec![S, S]).is_err());
        assert!(TreeRepr::from_actions(vec![]).is_err());
    }

    #[test]
    fn crossing_or_incomplete_spans_are_rejected() {
        // (1,2) and (2,3) cross.
        let crossing = [(1, 1), (2, 2), (3, 3), (1, 2), (2, 3), (1, 3)];
        assert!(TreeRepr::from_spans(3, crossing).is_err());
        let incomplete = [(1, 1), (2, 2), (3, 3), (1, 3)];
        assert!(TreeRepr::from_spans(3, incomplete).is_err());
        let missing_leaf = [(1, 1), (3, 3), (1, 2), (1, 3)];
        assert!(TreeRepr::from_spans(3, missing_leaf).is_err());
    }

    #[test]
    fn trivial_shapes() {
        assert_eq!(TreeRepr::right_branching(4).unwrap().actions(), &[S, S, S, S, R, R, R]);
        assert_eq!(TreeRepr::left_branching(4).unwrap().actions(), &[S, S, R, S, R, S, R]);
        assert_eq!(TreeRepr::left_branching(1).unwrap().actions(), &[S]);
    }

    #[test]
    fn catalan_counts() {
        assert_eq!(count_trees(1).unwrap(), BigUint::from(1u32));
        assert_eq!(count_trees(3).unwrap(), BigUint::from(2u32));
        assert_eq!(count_trees(4).unwrap(), BigUint::from(5u32));
        // 18! / (10! 9!) = 4862
        assert_eq!(count_trees(10).unwrap(), BigUint::from(4862u32));
        assert!((log_count_trees(10) - 4862f64.ln()).abs() < 1e-12);
        assert!(count_trees(0).is_err());
    }

    #[test]
    fn bracketed_output() {
        let t = TreeRepr::from_actions(vec![S, S, R, S, R]).unwrap();
        assert_eq!(
            t.to_bracketed(&["a", "b", "("]),
            "(X (X (X a) (X b)) (X -LRB-))"
        );
        let one = TreeRepr::from_actions(vec![S]).unwrap();
        assert_eq!(one.to_bracketed(&["w"]), "(X (X w))");
    }
}
