//! The same chart recursions recorded on a [`Graph`], so that the partition
//! function, tree log probabilities and the entropy are differentiable with
//! respect to the span scores.

use super::scores::SpanIndex;
use crate::autodiff::{Graph, Tensor, Var};
use crate::error::{Error, Result};
use crate::treebank::TreeRepr;

pub struct GraphChart {
    pub index: SpanIndex,
    /// Score nodes `s_ij` as scalars.
    pub scores: Vec<Var>,
    pub log_beta: Vec<Var>,
    /// Unnormalized log split weights per span of width > 1.
    splits: Vec<Option<Var>>,
    pub log_z: Var,
}

/// Inside recursion over a `[n_spans]` score vector in [`SpanIndex`] order.
pub fn inside_graph(g: &mut Graph<'_>, scores: Var, len: usize) -> Result<GraphChart> {
    let index = SpanIndex::new(len);
    if len == 0 || g.shape(scores) != [index.count()] {
        return Err(Error::Shape {
            op: "inside",
            shapes: format!("{:?} for {len} words", g.shape(scores)),
        });
    }
    let s: Vec<Var> = (0..index.count()).map(|k| g.elem(scores, k)).collect::<Result<_>>()?;
    let mut log_beta: Vec<Option<Var>> = vec![None; index.count()];
    let mut splits = vec![None; index.count()];
    for width in 1..=len {
        for (i, j) in index.of_width(width) {
            let at = index.index(i, j);
            if i == j {
                log_beta[at] = Some(s[at]);
                continue;
            }
            let cand = (i..j)
                .map(|k| {
                    let l = log_beta[index.index(i, k)].expect("narrower span");
                    let r = log_beta[index.index(k + 1, j)].expect("narrower span");
                    g.add(l, r)
                })
                .collect::<Result<Vec<_>>>()?;
            let cand = g.stack(&cand)?;
            let lse = g.log_sum_exp(cand)?;
            log_beta[at] = Some(g.add(s[at], lse)?);
            splits[at] = Some(cand);
        }
    }
    let log_beta: Vec<Var> = log_beta.into_iter().map(|v| v.expect("filled")).collect();
    let log_z = log_beta[index.index(1, len)];
    Ok(GraphChart {
        index,
        scores: s,
        log_beta,
        splits,
        log_z,
    })
}

impl GraphChart {
    /// `Σ_{(i,j) in tree} s_ij - log Z`.
    pub fn log_q(&self, g: &mut Graph<'_>, tree: &TreeRepr) -> Result<Var> {
        if tree.len() != self.index.len() {
            return Err(Error::InvalidTree(format!(
                "tree over {} words scored against a chart for {}",
                tree.len(),
                self.index.len()
            )));
        }
        let picked: Vec<Var> = tree
            .spans()
            .iter()
            .map(|&(i, j)| self.scores[self.index.index(i, j)])
            .collect();
        let total = g.sum_scalars(&picked)?;
        g.sub(total, self.log_z)
    }

    /// Differentiable tree entropy.
    pub fn entropy(&self, g: &mut Graph<'_>) -> Result<Var> {
        let index = self.index;
        let n = index.len();
        let mut h: Vec<Option<Var>> = vec![None; index.count()];
        for width in 2..=n {
            for (i, j) in index.of_width(width) {
                let at = index.index(i, j);
                let cand = self.splits[at].expect("split weights for wide spans");
                let lw = g.log_softmax(cand)?;
                let w = g.exp(lw)?;
                let inner = if width == 2 {
                    g.scale(lw, -1.0)?
                } else {
                    let mut parts = Vec::with_capacity(j - i);
                    for k in i..j {
                        let l = h[index.index(i, k)];
                        let r = h[index.index(k + 1, j)];
                        parts.push(match (l, r) {
                            (Some(l), Some(r)) => g.add(l, r)?,
                            (Some(v), None) | (None, Some(v)) => v,
                            (None, None) => g.constant(0.0)?,
                        });
                    }
                    let child = g.stack(&parts)?;
                    g.sub(child, lw)?
                };
                let terms = g.mul(w, inner)?;
                h[at] = Some(g.sum(terms)?);
            }
        }
        match h[index.index(1, n)] {
            Some(v) => Ok(v),
            None => g.input(Tensor::scalar(0.0)),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{grad_check, DEFAULT_STEP, DEFAULT_TOLERANCE};
    use crate::crf::{inside, tree_entropy, SpanScores};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn matches_plain_chart() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for n in 1..7 {
            let s = SpanScores::random(n, 2.0, &mut rng);
            let mut g = Graph::standalone();
            let v = g.input(Tensor::vector(s.values().to_vec())).unwrap();
            let c = inside_graph(&mut g, v, n).unwrap();
            let h = c.entropy(&mut g).unwrap();
            let plain = inside(&s);
            assert!((g.scalar(c.log_z) - plain.log_z()).abs() < 1e-12);
            assert!((g.scalar(h) - tree_entropy(&plain)).abs() < 1e-12);
        }
    }

    #[test]
    fn entropy_and_log_z_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let s = SpanScores::random(5, 2.0, &mut rng);
        let x = Tensor::vector(s.values().to_vec());
        let lz = grad_check(
            &[x.clone()],
            |g, v| Ok(inside_graph(g, v[0], 5)?.log_z),
            DEFAULT_STEP,
            DEFAULT_TOLERANCE,
        )
        .unwrap();
        assert!(lz.passed(), "{}", lz.max_rel_err);
        let h = grad_check(
            &[x],
            |g, v| inside_graph(g, v[0], 5)?.entropy(g),
            DEFAULT_STEP,
            DEFAULT_TOLERANCE,
        )
        .unwrap();
        assert!(h.passed(), "{}", h.max_rel_err);
    }
}
