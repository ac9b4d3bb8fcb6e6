//! Brute-force references over the full tree enumeration. Everything here is
//! exponential in sentence length and exists to check the chart algorithms and
//! estimators on small instances.
//!
//! The generative model is re-evaluated by a separate plain-`f64` forward pass
//! that reads the parameter tensors by name, so agreement with
//! [`crate::rnng::Rnng`] is a real cross-check of the stack conventions.

use crate::autodiff::{log_sigmoid, log_sum_exp, Gradients, Graph, Group, ParamId, ParamSet};
use crate::crf::SpanScores;
use crate::error::{Error, Result};
use crate::model::Model;
use crate::treebank::{Action, TreeRepr, EOS};

/// Longest sentence [`enumerate_trees`] accepts.
pub const MAX_ENUM_LEN: usize = 12;
/// Longest sentence for oracles that run the generative model per tree.
pub const MAX_MODEL_LEN: usize = 10;

fn check_len(len: usize, cap: usize) -> Result<()> {
    if len == 0 || len > cap {
        return Err(Error::Range(format!("enumeration needs 1 <= T <= {cap}, got {len}")));
    }
    Ok(())
}

/// Every binary tree over `len` words, ordered by the root split, then
/// recursively by the left and right subtrees.
pub fn enumerate_trees(len: usize) -> Result<Vec<TreeRepr>> {
    check_len(len, MAX_ENUM_LEN)?;
    enumerate_span(1, len)
        .into_iter()
        .map(|spans| TreeRepr::from_spans(len, spans))
        .collect()
}

fn enumerate_span(i: usize, j: usize) -> Vec<Vec<(usize, usize)>> {
    if i == j {
        return vec![vec![(i, i)]];
    }
    let mut out = Vec::new();
    for k in i..j {
        let left = enumerate_span(i, k);
        let right = enumerate_span(k + 1, j);
        for l in &left {
            for r in &right {
                let mut spans = Vec::with_capacity(l.len() + r.len() + 1);
                spans.push((i, j));
                spans.extend_from_slice(l);
                spans.extend_from_slice(r);
                out.push(spans);
            }
        }
    }
    out
}

fn tree_sum(scores: &SpanScores, tree: &TreeRepr) -> f64 {
    tree.spans().iter().map(|&(i, j)| scores.get(i, j)).sum()
}

/// `log Σ_z exp(Σ_{(i,j) in z} s_ij)` by enumeration.
pub fn exact_partition(scores: &SpanScores) -> Result<f64> {
    let trees = enumerate_trees(scores.len())?;
    let sums: Vec<f64> = trees.iter().map(|t| tree_sum(scores, t)).collect();
    Ok(log_sum_exp(&sums))
}

/// Every tree with its probability under the span-score distribution.
pub fn exact_distribution(scores: &SpanScores) -> Result<Vec<(TreeRepr, f64)>> {
    let trees = enumerate_trees(scores.len())?;
    let sums: Vec<f64> = trees.iter().map(|t| tree_sum(scores, t)).collect();
    let log_z = log_sum_exp(&sums);
    Ok(trees.into_iter().zip(sums).map(|(t, s)| (t, (s - log_z).exp())).collect())
}

pub fn exact_entropy(scores: &SpanScores) -> Result<f64> {
    Ok(exact_distribution(scores)?
        .iter()
        .filter(|(_, p)| *p > 0.0)
        .map(|(_, p)| -p * p.ln())
        .sum())
}

/// The highest-scoring tree by enumeration (first in enumeration order on ties).
pub fn exact_argmax(scores: &SpanScores) -> Result<(TreeRepr, f64)> {
    let mut best: Option<(TreeRepr, f64)> = None;
    for t in enumerate_trees(scores.len())? {
        let s = tree_sum(scores, &t);
        if best.as_ref().is_none_or(|(_, b)| s > *b) {
            best = Some((t, s));
        }
    }
    Ok(best.expect("at least one tree"))
}

/// Plain-number forward pass of the generative model in evaluation mode.
pub struct ReferenceRnng<'a> {
    params: &'a ParamSet,
    dim: usize,
    vocab: usize,
}

#[derive(Clone)]
struct Cell {
    h: Vec<f64>,
    c: Vec<f64>,
}

#[derive(Clone)]
struct Entry {
    layers: [Cell; 2],
    comp: Cell,
}

fn sigm(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

impl<'a> ReferenceRnng<'a> {
    pub fn new(params: &'a ParamSet) -> Result<Self> {
        let emb = Self::tensor(params, "emb.word")?;
        let shape = params.get(emb).shape();
        Ok(ReferenceRnng {
            params,
            vocab: shape[0],
            dim: shape[1],
        })
    }

    fn tensor(params: &ParamSet, name: &str) -> Result<ParamId> {
        params
            .id(name)
            .ok_or_else(|| Error::Checkpoint(format!("missing parameter {name}")))
    }

    fn data(&self, name: &str) -> &[f64] {
        self.params.get(self.params.id(name).expect("checked in new")).data()
    }

    /// `W v + b` for a row-major `W` with `b.len()` rows.
    fn affine(w: &[f64], b: &[f64], v: &[f64]) -> Vec<f64> {
        let cols = v.len();
        b.iter()
            .enumerate()
            .map(|(r, bias)| bias + w[r * cols..(r + 1) * cols].iter().zip(v).map(|(a, x)| a * x).sum::<f64>())
            .collect()
    }

    fn lstm(&self, prefix: &str, x: &[f64], prev: &Cell) -> Cell {
        let n = self.dim;
        let xh: Vec<f64> = x.iter().chain(&prev.h).copied().collect();
        let z = Self::affine(self.data(&format!("{prefix}.w")), self.data(&format!("{prefix}.b")), &xh);
        let mut h = vec![0.0; n];
        let mut c = vec![0.0; n];
        for k in 0..n {
            let (i, f, u, o) = (sigm(z[k]), sigm(z[n + k]), z[2 * n + k].tanh(), sigm(z[3 * n + k]));
            c[k] = f * prev.c[k] + i * u;
            h[k] = o * c[k].tanh();
        }
        Cell { h, c }
    }

    fn compose(&self, l: &Cell, r: &Cell) -> Cell {
        let n = self.dim;
        let hh: Vec<f64> = l.h.iter().chain(&r.h).copied().collect();
        let z = Self::affine(self.data("tree.w"), self.data("tree.b"), &hh);
        let mut h = vec![0.0; n];
        let mut c = vec![0.0; n];
        for k in 0..n {
            let (i, fl, fr, o, u) = (
                sigm(z[k]),
                sigm(z[n + k]),
                sigm(z[2 * n + k]),
                sigm(z[3 * n + k]),
                z[4 * n + k].tanh(),
            );
            c[k] = i * u + fl * l.c[k] + fr * r.c[k];
            h[k] = o * c[k].tanh();
        }
        Cell { h, c }
    }

    fn push(&self, stack: &mut Vec<Entry>, x: &[f64], comp: Cell) {
        let top = stack.last().expect("bottom element");
        let s0 = self.lstm("stack.l0", x, &top.layers[0]);
        let s1 = self.lstm("stack.l1", &s0.h.clone(), &top.layers[1]);
        stack.push(Entry { layers: [s0, s1], comp });
    }

    fn word_log_prob(&self, out: &[f64], word: usize) -> f64 {
        let logits = Self::affine(self.data("emb.word"), self.data("word.b"), out);
        logits[word] - log_sum_exp(&logits)
    }

    fn reduce_logit(&self, out: &[f64]) -> f64 {
        Self::affine(self.data("action.w"), self.data("action.b"), out)[0]
    }

    /// `(log p(x | z), log p(z | x_<z))` for a sentence and tree.
    pub fn joint_terms(&self, tokens: &[usize], tree: &TreeRepr) -> Result<(f64, f64)> {
        if tokens.len() != tree.len() {
            return Err(Error::InvalidTree("tree and sentence lengths differ".into()));
        }
        if let Some(&w) = tokens.iter().find(|&&w| w >= self.vocab) {
            return Err(Error::Range(format!("word id {w} outside vocabulary")));
        }
        let zero = Cell {
            h: vec![0.0; self.dim],
            c: vec![0.0; self.dim],
        };
        let mut stack = vec![Entry {
            layers: [zero.clone(), zero.clone()],
            comp: zero.clone(),
        }];
        let (mut term, mut act) = (0.0, 0.0);
        let mut next = 0;
        let emb = self.data("emb.word");
        for &a in tree.actions() {
            let constituents = stack.len() - 1;
            let free = constituents >= 2 && next < tokens.len();
            let out = stack.last().unwrap().layers[1].h.clone();
            if free {
                let logit = self.reduce_logit(&out);
                act += match a {
                    Action::Reduce => log_sigmoid(logit),
                    Action::Shift => log_sigmoid(-logit),
                };
            }
            match a {
                Action::Shift => {
                    let w = tokens[next];
                    term += self.word_log_prob(&out, w);
                    let e = emb[w * self.dim..(w + 1) * self.dim].to_vec();
                    let comp = Cell {
                        h: e.clone(),
                        c: zero.c.clone(),
                    };
                    self.push(&mut stack, &e, comp);
                    next += 1;
                }
                Action::Reduce => {
                    let r = stack.pop().unwrap();
                    let l = stack.pop().unwrap();
                    let comp = self.compose(&l.comp, &r.comp);
                    let x = comp.h.clone();
                    self.push(&mut stack, &x, comp);
                }
            }
        }
        term += self.word_log_prob(&stack.last().unwrap().layers[1].h, EOS);
        Ok((term, act))
    }
}

/// Joint terms `(log p(x|z), log p(z|x_<z))` of every tree over `tokens`.
pub fn enumerate_joint(model: &Model, tokens: &[usize]) -> Result<Vec<(TreeRepr, f64, f64)>> {
    check_len(tokens.len(), MAX_MODEL_LEN)?;
    model.rnng()?;
    let reference = ReferenceRnng::new(&model.params)?;
    enumerate_trees(tokens.len())?
        .into_iter()
        .map(|t| {
            let (a, b) = reference.joint_terms(tokens, &t)?;
            Ok((t, a, b))
        })
        .collect()
}

/// `log p(x) = log Σ_z p(x, z)`.
pub fn exact_marginal(model: &Model, tokens: &[usize]) -> Result<f64> {
    let joints: Vec<f64> = enumerate_joint(model, tokens)?.iter().map(|(_, t, a)| t + a).collect();
    Ok(log_sum_exp(&joints))
}

/// Exact quantities pairing the inference network with the generative model.
#[derive(Clone, Debug)]
pub struct ExactBound {
    pub log_marginal: f64,
    pub elbo: f64,
    /// `KL(q(z|x) || p(z|x))`, summed directly.
    pub posterior_kl: f64,
    /// `KL(q(z|x) || p(z|x_<z))` against the conditional prior.
    pub prior_kl: f64,
    pub prior_entropy: f64,
    pub posterior_entropy: f64,
    /// `E_q[log p(x|z)]`.
    pub reconstruction: f64,
}

pub fn exact_bound(model: &Model, tokens: &[usize]) -> Result<ExactBound> {
    let joint = enumerate_joint(model, tokens)?;
    let q = exact_distribution(&model.span_scores(tokens)?)?;
    let log_marginal = log_sum_exp(&joint.iter().map(|(_, t, a)| t + a).collect::<Vec<_>>());
    let mut b = ExactBound {
        log_marginal,
        elbo: 0.0,
        posterior_kl: 0.0,
        prior_kl: 0.0,
        prior_entropy: 0.0,
        posterior_entropy: 0.0,
        reconstruction: 0.0,
    };
    for ((tree, term, act), (qt, p)) in joint.iter().zip(&q) {
        debug_assert_eq!(tree, qt);
        b.prior_entropy -= act.exp() * act;
        if *p == 0.0 {
            continue;
        }
        let lq = p.ln();
        b.elbo += p * (term + act - lq);
        b.posterior_kl += p * (lq - (term + act - log_marginal));
        b.prior_kl += p * (lq - act);
        b.posterior_entropy -= p * lq;
        b.reconstruction += p * term;
    }
    Ok(b)
}

/// `Σ_z q(z) (log p(x, z) - log q(z))`.
pub fn exact_elbo(model: &Model, tokens: &[usize]) -> Result<f64> {
    Ok(exact_bound(model, tokens)?.elbo)
}

/// Gradient with respect to the inference-network parameters of
/// `Σ_z q(z | x) ℓ(z)`, with `ℓ` supplied per enumerated tree and held fixed.
/// `q` is evaluated without dropout.
pub fn exact_phi_gradient_with(model: &Model, tokens: &[usize], ell: &[f64]) -> Result<Gradients> {
    let (gen, inf) = model.rnng()?;
    let trees = enumerate_trees(tokens.len())?;
    if ell.len() != trees.len() {
        return Err(Error::Range(format!("{} rewards for {} trees", ell.len(), trees.len())));
    }
    let mut g = Graph::eval(&model.params);
    let scores = inf.score_spans(&mut g, gen.emb, tokens)?;
    let index = crate::crf::SpanIndex::new(tokens.len());
    let mut sums = Vec::with_capacity(trees.len());
    for t in &trees {
        let picked: Vec<usize> = t.spans().iter().map(|&(i, j)| index.index(i, j)).collect();
        let parts = picked.iter().map(|&k| g.elem(scores, k)).collect::<Result<Vec<_>>>()?;
        sums.push(g.sum_scalars(&parts)?);
    }
    let sums = g.stack(&sums)?;
    let q = g.softmax(sums)?;
    let reward = g.input(crate::autodiff::Tensor::vector(ell.to_vec()))?;
    let weighted = g.mul(q, reward)?;
    let total = g.sum(weighted)?;
    let mut grads = g.backward(total)?.param_grads();
    let theta = model.params.ids_in(|grp| grp != Group::Phi);
    grads.clear(&theta);
    Ok(grads)
}

/// Gradient with respect to the inference network of `E_q[log p(x, z)]`.
pub fn exact_phi_gradient(model: &Model, tokens: &[usize]) -> Result<Gradients> {
    let ell: Vec<f64> = enumerate_joint(model, tokens)?.iter().map(|(_, t, a)| t + a).collect();
    exact_phi_gradient_with(model, tokens, &ell)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::TrainConfig;
    use crate::treebank::count_trees;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny_model(seed: u64) -> Model {
        let cfg = TrainConfig {
            word_dim: 5,
            q_hidden: 4,
            mlp_hidden: 4,
            max_len: 8,
            init_range: 0.5,
            ..TrainConfig::default()
        };
        Model::new(&cfg, 7, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
    }

    #[test]
    fn enumeration_counts_and_order() {
        for t in 1..=9 {
            let trees = enumerate_trees(t).unwrap();
            assert_eq!(trees.len().to_string(), count_trees(t).unwrap().to_string());
            let set: std::collections::BTreeSet<_> = trees.iter().map(|t| t.spans().clone()).collect();
            assert_eq!(set.len(), trees.len());
        }
        let four = enumerate_trees(4).unwrap();
        assert_eq!(four[0], TreeRepr::right_branching(4).unwrap());
        assert_eq!(four[4], TreeRepr::left_branching(4).unwrap());
        assert!(enumerate_trees(0).is_err());
        assert!(enumerate_trees(13).is_err());
    }

    #[test]
    fn uniform_scores() {
        let s = SpanScores::zeros(5);
        assert!((exact_partition(&s).unwrap() - 14f64.ln()).abs() < 1e-12);
        let d = exact_distribution(&s).unwrap();
        assert!((d.iter().map(|(_, p)| p).sum::<f64>() - 1.0).abs() < 1e-12);
        assert!((exact_entropy(&SpanScores::zeros(3)).unwrap() - 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn reference_matches_graph_model() {
        let m = tiny_model(2);
        let tokens = [2, 5, 3, 6];
        for t in enumerate_trees(4).unwrap() {
            let (a, b) = ReferenceRnng::new(&m.params).unwrap().joint_terms(&tokens, &t).unwrap();
            let (c, d) = m.joint_terms(&tokens, &t).unwrap();
            assert!((a - c).abs() < 1e-10 && (b - d).abs() < 1e-10);
        }
    }

    #[test]
    fn single_tree_marginal_is_the_joint() {
        let m = tiny_model(3);
        let t = TreeRepr::left_branching(2).unwrap();
        assert!((exact_marginal(&m, &[2, 4]).unwrap() - m.log_joint(&[2, 4], &t).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn bound_identities() {
        let m = tiny_model(4);
        let b = exact_bound(&m, &[3, 2, 5, 4]).unwrap();
        assert!(b.elbo <= b.log_marginal);
        assert!((b.log_marginal - b.elbo - b.posterior_kl).abs() < 1e-10);
        assert!(b.prior_kl >= 0.0 && b.posterior_entropy <= 5f64.ln() + 1e-12);
    }

    #[test]
    fn constant_reward_has_zero_gradient() {
        let m = tiny_model(5);
        let g = exact_phi_gradient_with(&m, &[2, 3, 4, 5], &[-3.0; 5]).unwrap();
        let phi = m.params.ids_in(|g| g == Group::Phi);
        assert!(g.norm(&phi) < 1e-12);
    }

    #[test]
    fn phi_gradient_matches_finite_differences() {
        let m = tiny_model(6);
        let tokens = [2, 6, 3];
        let ell: Vec<f64> = enumerate_joint(&m, &tokens).unwrap().iter().map(|(_, t, a)| t + a).collect();
        let grads = exact_phi_gradient_with(&m, &tokens, &ell).unwrap();
        let objective = |params: &ParamSet| {
            let mm = Model::from_params(params.clone(), &TrainConfig::default()).unwrap();
            let q = exact_distribution(&mm.span_scores(&tokens).unwrap()).unwrap();
            q.iter().zip(&ell).map(|((_, p), l)| p * l).sum::<f64>()
        };
        let id = m.params.id("q.mlp2.w").unwrap();
        let dense = grads.dense(&m.params, id);
        for k in 0..m.params.get(id).len() {
            let mut plus = m.params.clone();
            plus.get_mut(id).data_mut()[k] += 1e-5;
            let mut minus = m.params.clone();
            minus.get_mut(id).data_mut()[k] -= 1e-5;
            let fd = (objective(&plus) - objective(&minus)) / 2e-5;
            assert!((fd - dense[k]).abs() <= 1e-4 * (1.0 + fd.abs()), "{fd} vs {}", dense[k]);
        }
    }
}
