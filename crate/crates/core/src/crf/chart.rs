//! Chart algorithms over fixed span scores, in log space.

use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;

use super::scores::{SpanIndex, SpanScores};
use crate::autodiff::log_sum_exp;
use crate::error::Result;
use crate::treebank::{Span, TreeRepr};

/// Log inside values `log β[i, j]`, laid out like [`SpanScores`].
#[derive(Clone, Debug, PartialEq)]
pub struct Chart {
    index: SpanIndex,
    log_beta: Vec<f64>,
}

impl Chart {
    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.log_beta[self.index.index(i, j)]
    }

    pub fn log_z(&self) -> f64 {
        self.get(1, self.len())
    }
}

/// `log β[i, j] = s_ij + logsumexp_k (log β[i, k] + log β[k+1, j])`.
pub fn inside(scores: &SpanScores) -> Chart {
    let index = scores.index();
    let n = index.len();
    let mut log_beta = vec![0.0; index.count()];
    let mut cand = Vec::with_capacity(n);
    for width in 1..=n {
        for (i, j) in index.of_width(width) {
            let s = scores.get(i, j);
            log_beta[index.index(i, j)] = if i == j {
                s
            } else {
                cand.clear();
                cand.extend((i..j).map(|k| log_beta[index.index(i, k)] + log_beta[index.index(k + 1, j)]));
                s + log_sum_exp(&cand)
            };
        }
    }
    Chart { index, log_beta }
}

/// Normalized log split weights of span `(i, j)`; entry `u` is the split
/// `(i, i+u) (i+u+1, j)`. Shared by sampling and entropy.
pub fn split_log_weights(chart: &Chart, i: usize, j: usize) -> Vec<f64> {
    let mut w: Vec<f64> = (i..j).map(|k| chart.get(i, k) + chart.get(k + 1, j)).collect();
    let lse = log_sum_exp(&w);
    w.iter_mut().for_each(|v| *v -= lse);
    w
}

/// Log probability of `tree` under the Gibbs distribution.
pub fn log_q(tree: &TreeRepr, scores: &SpanScores, log_z: f64) -> Result<f64> {
    Ok(scores.tree_score(tree)? - log_z)
}

/// Top-down sampling of a tree, returning it with its exact log probability.
pub fn sample_tree<R: Rng + ?Sized>(chart: &Chart, scores: &SpanScores, rng: &mut R) -> (TreeRepr, f64) {
    let n = chart.len();
    let mut spans: Vec<Span> = (1..=n).map(|i| (i, i)).collect();
    let mut todo = vec![(1, n)];
    while let Some((i, j)) = todo.pop() {
        if i == j {
            continue;
        }
        spans.push((i, j));
        let weights: Vec<f64> = split_log_weights(chart, i, j).into_iter().map(f64::exp).collect();
        let k = i + WeightedIndex::new(&weights).expect("split weights are positive").sample(rng);
        todo.push((k + 1, j));
        todo.push((i, k));
    }
    let tree = TreeRepr::from_spans(n, spans).expect("sampled spans form a tree");
    let lq = log_q(&tree, scores, chart.log_z()).expect("same length");
    (tree, lq)
}

/// Entropy of the tree distribution by the split-weight recursion
/// `H[i, j] = Σ_u w_u (H[i, u] + H[u+1, j] - log w_u)`.
pub fn tree_entropy(chart: &Chart) -> f64 {
    let index = chart.index;
    let n = index.len();
    let mut h = vec![0.0; index.count()];
    for width in 2..=n {
        for (i, j) in index.of_width(width) {
            let lw = split_log_weights(chart, i, j);
            h[index.index(i, j)] = lw
                .iter()
                .enumerate()
                .map(|(u, &l)| {
                    let k = i + u;
                    l.exp() * (h[index.index(i, k)] + h[index.index(k + 1, j)] - l)
                })
                .sum::<f64>()
                .max(0.0);
        }
    }
    h[index.index(1, n)]
}

/// Highest-scoring tree (max-product inside). Exact ties go to the largest
/// split point, so uniform scores give the left-branching tree.
pub fn viterbi(scores: &SpanScores) -> (TreeRepr, f64) {
    let index = scores.index();
    let n = index.len();
    let mut best = vec![0.0; index.count()];
    let mut split = vec![0usize; index.count()];
    for width in 1..=n {
        for (i, j) in index.of_width(width) {
            let at = index.index(i, j);
            if i == j {
                best[at] = scores.get(i, j);
                continue;
            }
            let mut top = f64::NEG_INFINITY;
            let mut arg = i;
            for k in i..j {
                let v = best[index.index(i, k)] + best[index.index(k + 1, j)];
                if v >= top {
                    top = v;
                    arg = k;
                }
            }
            best[at] = scores.get(i, j) + top;
            split[at] = arg;
        }
    }
    let mut spans = Vec::with_capacity(2 * n - 1);
    let mut todo = vec![(1, n)];
    while let Some((i, j)) = todo.pop() {
        spans.push((i, j));
        if i < j {
            let k = split[index.index(i, j)];
            todo.push((i, k));
            todo.push((k + 1, j));
        }
    }
    let tree = TreeRepr::from_spans(n, spans).expect("backpointers form a tree");
    (tree, best[index.index(1, n)])
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn single_word() {
        let s = SpanScores::new(1, vec![0.7]).unwrap();
        assert_eq!(inside(&s).log_z(), 0.7);
        assert_eq!(tree_entropy(&inside(&s)), 0.0);
    }

    #[test]
    fn uniform_three_words() {
        let s = SpanScores::zeros(3);
        let c = inside(&s);
        assert!((c.log_z() - 2f64.ln()).abs() < 1e-15);
        assert!((tree_entropy(&c) - 2f64.ln()).abs() < 1e-15);
        let t = TreeRepr::left_branching(3).unwrap();
        assert!((log_q(&t, &s, c.log_z()).unwrap() + 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn two_words_is_forced() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let s = SpanScores::random(2, 2.0, &mut rng);
        let c = inside(&s);
        let (t, lq) = sample_tree(&c, &s, &mut rng);
        assert_eq!(t.len(), 2);
        assert!(lq.abs() < 1e-12);
        assert_eq!(tree_entropy(&c), 0.0);
    }

    #[test]
    fn viterbi_prefers_dominant_span() {
        let s = SpanScores::from_fn(3, |i, j| if (i, j) == (1, 2) { 1.0 } else { 0.0 }).unwrap();
        let (t, w) = viterbi(&s);
        assert!(t.contains((1, 2)));
        assert_eq!(w, 1.0);
    }

    #[test]
    fn viterbi_ties_give_left_branching() {
        for n in 1..8 {
            let (t, _) = viterbi(&SpanScores::zeros(n));
            assert_eq!(t, TreeRepr::left_branching(n).unwrap());
        }
    }

    #[test]
    fn uniform_sampling_frequencies() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let s = SpanScores::zeros(3);
        let c = inside(&s);
        let draws = 10_000;
        let left = (0..draws)
            .filter(|_| sample_tree(&c, &s, &mut rng).0.contains((1, 2)))
            .count();
        assert!((left as f64 / draws as f64 - 0.5).abs() < 0.01);
    }
}
