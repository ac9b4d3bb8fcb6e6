use rand::Rng;

use crate::error::{Error, Result};
use crate::treebank::{Span, TreeRepr};

/// Flat layout of the spans `(i, j)`, `1 <= i <= j <= len`, ordered by start
/// and then by end.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SpanIndex {
    len: usize,
}

impl SpanIndex {
    pub fn new(len: usize) -> Self {
        SpanIndex { len }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Number of spans, `len (len + 1) / 2`.
    pub fn count(&self) -> usize {
        self.len * (self.len + 1) / 2
    }

    pub fn index(&self, i: usize, j: usize) -> usize {
        debug_assert!(1 <= i && i <= j && j <= self.len, "span ({i}, {j}) outside 1..={}", self.len);
        (i - 1) * self.len - (i - 1) * (i.saturating_sub(2)) / 2 + (j - i)
    }

    pub fn spans(&self) -> impl Iterator<Item = Span> {
        let n = self.len;
        (1..=n).flat_map(move |i| (i..=n).map(move |j| (i, j)))
    }

    /// Spans of a given width, left to right.
    pub fn of_width(&self, width: usize) -> impl Iterator<Item = Span> {
        let n = self.len;
        (1..=(n + 1).saturating_sub(width)).map(move |i| (i, i + width - 1))
    }
}

/// Upper-triangular table of span scores `s_ij`.
#[derive(Clone, Debug, PartialEq)]
pub struct SpanScores {
    index: SpanIndex,
    values: Vec<f64>,
}

impl SpanScores {
    pub fn new(len: usize, values: Vec<f64>) -> Result<Self> {
        let index = SpanIndex::new(len);
        if len == 0 {
            return Err(Error::Data("span scores need at least one word".into()));
        }
        if values.len() != index.count() {
            return Err(Error::Shape {
                op: "span_scores",
                shapes: format!("{} values for {} spans", values.len(), index.count()),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { op: "span_scores" });
        }
        Ok(SpanScores { index, values })
    }

    pub fn zeros(len: usize) -> Self {
        SpanScores::filled(len, 0.0)
    }

    pub fn filled(len: usize, value: f64) -> Self {
        let index = SpanIndex::new(len);
        SpanScores {
            index,
            values: vec![value; index.count()],
        }
    }

    pub fn from_fn(len: usize, mut f: impl FnMut(usize, usize) -> f64) -> Result<Self> {
        let values = SpanIndex::new(len).spans().map(|(i, j)| f(i, j)).collect();
        SpanScores::new(len, values)
    }

    /// Independent uniform scores in `[-range, range]`.
    pub fn random<R: Rng + ?Sized>(len: usize, range: f64, rng: &mut R) -> Self {
        let index = SpanIndex::new(len);
        SpanScores {
            index,
            values: (0..index.count()).map(|_| rng.gen_range(-range..=range)).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }

    pub fn index(&self) -> SpanIndex {
        self.index
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[self.index.index(i, j)]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Divides every score by `temperature`.
    pub fn flatten(&self, temperature: f64) -> Result<SpanScores> {
        if !(temperature > 0.0 && temperature.is_finite()) {
            return Err(Error::Config(format!("temperature must be > 0, got {temperature}")));
        }
        Ok(SpanScores {
            index: self.index,
            values: self.values.iter().map(|v| v / temperature).collect(),
        })
    }

    /// Unnormalized log weight of a tree: the sum of its span scores.
    pub fn tree_score(&self, tree: &TreeRepr) -> Result<f64> {
        self.check_tree(tree)?;
        Ok(tree.spans().iter().map(|&(i, j)| self.get(i, j)).sum())
    }

    pub(crate) fn check_tree(&self, tree: &TreeRepr) -> Result<()> {
        if tree.len() != self.len() {
            return Err(Error::InvalidTree(format!(
                "tree over {} words scored against a table for {}",
                tree.len(),
                self.len()
            )));
        }
        Ok(())
    }

    /// Indicator vector of the tree's spans in table order.
    pub fn tree_mask(&self, tree: &TreeRepr) -> Result<Vec<f64>> {
        self.check_tree(tree)?;
        let mut mask = vec![0.0; self.values.len()];
        for &(i, j) in tree.spans() {
            mask[self.index.index(i, j)] = 1.0;
        }
        Ok(mask)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn index_is_dense_and_ordered() {
        for n in 1..9 {
            let idx = SpanIndex::new(n);
            let flat: Vec<usize> = idx.spans().map(|(i, j)| idx.index(i, j)).collect();
            assert_eq!(flat, (0..idx.count()).collect::<Vec<_>>());
        }
    }

    #[test]
    fn flatten_divides() {
        let s = SpanScores::from_fn(3, |i, j| (i + j) as f64).unwrap();
        assert_eq!(s.flatten(1.0).unwrap(), s);
        let half = s.flatten(2.0).unwrap();
        for (a, b) in s.values().iter().zip(half.values()) {
            assert_eq!(*b, a / 2.0);
        }
        assert!(s.flatten(0.0).is_err());
        assert!(s.flatten(-1.0).is_err());
    }

    #[test]
    fn width_iteration() {
        let idx = SpanIndex::new(4);
        assert_eq!(idx.of_width(3).collect::<Vec<_>>(), [(1, 3), (2, 4)]);
        assert_eq!(idx.of_width(4).collect::<Vec<_>>(), [(1, 4)]);
    }
}
