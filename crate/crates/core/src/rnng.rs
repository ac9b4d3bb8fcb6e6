//! Generative stack machine over words and binary trees.
//!
//! The stack starts with a zero element. SHIFT generates a word from the top
//! hidden state and pushes its embedding; REDUCE pops two constituents,
//! composes their `g` vectors with a tree-LSTM and pushes the result. After
//! the final REDUCE a forced SHIFT generates the end-of-sentence token.

use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;

use crate::autodiff::{log_sigmoid, sigmoid, Graph, Group, ParamId, ParamSet, Tensor, Var};
use crate::error::{Error, Result};
use crate::layers::{init_param, LstmCell, LstmState, TreeLstm};
use crate::treebank::{actions_to_tree, Action, EOS};

#[derive(Clone, Debug)]
pub struct Rnng {
    pub emb: ParamId,
    pub layers: [LstmCell; 2],
    pub tree: TreeLstm,
    pub action_w: ParamId,
    pub action_b: ParamId,
    pub word_b: ParamId,
    pub dim: usize,
    pub vocab_size: usize,
    pub dropout: f64,
}

impl Rnng {
    /// Creates the word embeddings (`emb.word`) and all generative parameters.
    pub fn new<R: Rng>(
        params: &mut ParamSet,
        vocab_size: usize,
        dim: usize,
        dropout: f64,
        range: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let th = Group::Theta;
        let emb = init_param(params, "emb.word", th, &[vocab_size, dim], range, rng)?;
        let l0 = LstmCell::new(params, "stack.l0", th, dim, dim, range, rng)?;
        let l1 = LstmCell::new(params, "stack.l1", th, dim, dim, range, rng)?;
        let tree = TreeLstm::new(params, "tree", th, dim, range, rng)?;
        let action_w = init_param(params, "action.w", Group::ThetaAction, &[1, dim], range, rng)?;
        let action_b = init_param(params, "action.b", Group::ThetaAction, &[1], range, rng)?;
        let word_b = init_param(params, "word.b", th, &[vocab_size], range, rng)?;
        Ok(Rnng {
            emb,
            layers: [l0, l1],
            tree,
            action_w,
            action_b,
            word_b,
            dim,
            vocab_size,
            dropout,
        })
    }

    pub fn from_params(params: &ParamSet, dropout: f64) -> Result<Self> {
        let missing = |name: &str| Error::Checkpoint(format!("missing generative parameter {name}"));
        let id = |name: &str| params.id(name).ok_or_else(|| missing(name));
        let emb = id("emb.word")?;
        let shape = params.get(emb).shape().to_vec();
        let cell = |name: &str| LstmCell::from_params(params, name).ok_or_else(|| missing(name));
        Ok(Rnng {
            emb,
            layers: [cell("stack.l0")?, cell("stack.l1")?],
            tree: TreeLstm::from_params(params, "tree").ok_or_else(|| missing("tree"))?,
            action_w: id("action.w")?,
            action_b: id("action.b")?,
            word_b: id("word.b")?,
            dim: shape[1],
            vocab_size: shape[0],
            dropout,
        })
    }

    fn check_word(&self, word: usize) -> Result<()> {
        if word >= self.vocab_size {
            return Err(Error::Range(format!(
                "word id {word} outside vocabulary of {}",
                self.vocab_size
            )));
        }
        Ok(())
    }

    /// Action and terminal log-likelihood of `(tokens, actions)`.
    pub fn joint_log_likelihood(&self, g: &mut Graph<'_>, tokens: &[usize], actions: &[Action]) -> Result<JointTerms> {
        let (len, _) = actions_to_tree(actions)?;
        if len != tokens.len() {
            return Err(Error::InvalidTree(format!(
                "{} actions describe {len} words, sentence has {}",
                actions.len(),
                tokens.len()
            )));
        }
        for &w in tokens {
            self.check_word(w)?;
        }
        let mut stack = StackState::new(g, self)?;
        let mut words = Vec::with_capacity(len + 1);
        let mut acts = Vec::with_capacity(actions.len());
        let mut next = 0;
        for &a in actions {
            if let Some(lp) = stack.action_log_prob(g, self, a, next == len)? {
                acts.push(lp);
            }
            match a {
                Action::Shift => {
                    words.push(stack.shift(g, self, tokens[next])?);
                    next += 1;
                }
                Action::Reduce => stack.reduce(g, self)?,
            }
        }
        words.push(stack.word_log_prob(g, self, EOS)?);
        Ok(JointTerms {
            terminal: g.sum_scalars(&words)?,
            action: g.sum_scalars(&acts)?,
        })
    }

    /// Samples actions from the conditional prior with the words held fixed.
    /// Returns the actions and their log probability.
    pub fn sample_actions<R: Rng + ?Sized>(
        &self,
        g: &mut Graph<'_>,
        tokens: &[usize],
        rng: &mut R,
    ) -> Result<(Vec<Action>, f64)> {
        let len = tokens.len();
        let mut stack = StackState::new(g, self)?;
        let mut actions = Vec::with_capacity(2 * len);
        let mut log_p = 0.0;
        let mut next = 0;
        while actions.len() < 2 * len - 1 {
            let a = match stack.forced(next == len) {
                Some(a) => a,
                None => {
                    let p_reduce = sigmoid(stack.action_logit(g, self)?);
                    let a = if rng.gen::<f64>() < p_reduce {
                        Action::Reduce
                    } else {
                        Action::Shift
                    };
                    log_p += match a {
                        Action::Reduce => p_reduce.ln(),
                        Action::Shift => (1.0 - p_reduce).ln(),
                    };
                    a
                }
            };
            match a {
                Action::Shift => {
                    stack.push_word(g, self, tokens[next])?;
                    next += 1;
                }
                Action::Reduce => stack.reduce(g, self)?,
            }
            actions.push(a);
        }
        Ok((actions, log_p))
    }

    /// Ancestral sampling of a sentence and its tree.
    pub fn generate<R: Rng + ?Sized>(&self, params: &ParamSet, rng: &mut R, max_len: usize) -> Result<Generated> {
        if max_len == 0 {
            return Err(Error::Config("max_len must be at least 1".into()));
        }
        let mut g = Graph::eval(params);
        let mut stack = StackState::new(&mut g, self)?;
        let mut words = Vec::new();
        let mut actions = Vec::new();
        let mut truncated = false;
        loop {
            let depth = stack.real_depth();
            let action = if depth < 2 {
                Action::Shift
            } else if words.len() == max_len {
                truncated = true;
                Action::Reduce
            } else {
                let p_reduce = sigmoid(stack.action_logit(&mut g, self)?);
                if rng.gen::<f64>() < p_reduce {
                    Action::Reduce
                } else {
                    Action::Shift
                }
            };
            match action {
                Action::Reduce => {
                    stack.reduce(&mut g, self)?;
                    actions.push(Action::Reduce);
                }
                Action::Shift => {
                    if words.len() == max_len {
                        truncated = true;
                        break;
                    }
                    let logits = stack.word_log_probs(&mut g, self)?;
                    let mut probs: Vec<f64> = g.data(logits).iter().map(|v| v.exp()).collect();
                    if depth >= 2 {
                        probs[EOS] = 0.0;
                    }
                    let w = WeightedIndex::new(&probs)
                        .map_err(|e| Error::Data(format!("word distribution: {e}")))?
                        .sample(rng);
                    if w == EOS {
                        break;
                    }
                    stack.push_word(&mut g, self, w)?;
                    words.push(w);
                    actions.push(Action::Shift);
                }
            }
        }
        Ok(Generated {
            empty: words.is_empty(),
            words,
            actions,
            truncated,
        })
    }
}

/// The two parts of the joint log-likelihood.
#[derive(Clone, Copy, Debug)]
pub struct JointTerms {
    pub terminal: Var,
    pub action: Var,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Generated {
    pub words: Vec<usize>,
    pub actions: Vec<Action>,
    /// The length cap was hit before an end-of-sentence draw.
    pub truncated: bool,
    /// End-of-sentence was drawn before any word.
    pub empty: bool,
}

#[derive(Clone, Copy, Debug)]
struct StackEntry {
    layers: [LstmState; 2],
    /// Output of the top layer as seen by the heads.
    out: Var,
    /// Constituent vector and its tree-LSTM cell.
    g: LstmState,
}

/// The stack machine state on one graph.
#[derive(Clone, Debug)]
pub struct StackState {
    entries: Vec<StackEntry>,
}

impl StackState {
    pub fn new(g: &mut Graph<'_>, model: &Rnng) -> Result<Self> {
        let zero = LstmState::zeros(g, model.dim)?;
        Ok(StackState {
            entries: vec![StackEntry {
                layers: [zero, zero],
                out: zero.h,
                g: zero,
            }],
        })
    }

    /// Stack depth including the zero element.
    pub fn depth(&self) -> usize {
        self.entries.len()
    }

    /// Number of constituents above the zero element.
    pub fn real_depth(&self) -> usize {
        self.entries.len() - 1
    }

    fn top(&self) -> &StackEntry {
        self.entries.last().expect("zero element is never popped")
    }

    /// The forced action, if any: SHIFT below two constituents, REDUCE once
    /// every word is consumed.
    pub fn forced(&self, words_done: bool) -> Option<Action> {
        if self.real_depth() < 2 {
            Some(Action::Shift)
        } else if words_done {
            Some(Action::Reduce)
        } else {
            None
        }
    }

    fn action_var(&self, g: &mut Graph<'_>, model: &Rnng) -> Result<Var> {
        let (w, b) = (g.param(model.action_w), g.param(model.action_b));
        let a = g.matmul_t(self.top().out, w)?;
        let a = g.add(a, b)?;
        g.elem(a, 0)
    }

    /// `w·h + b`; `σ` of it is the probability of REDUCE.
    pub fn action_logit(&self, g: &mut Graph<'_>, model: &Rnng) -> Result<f64> {
        let v = self.action_var(g, model)?;
        Ok(g.scalar(v))
    }

    /// Log probability of taking `action` at a free step; `None` at forced
    /// steps, which contribute nothing.
    pub fn action_log_prob(
        &self,
        g: &mut Graph<'_>,
        model: &Rnng,
        action: Action,
        words_done: bool,
    ) -> Result<Option<Var>> {
        if let Some(forced) = self.forced(words_done) {
            if forced != action {
                return Err(Error::InvalidTree(format!("{action} where {forced} is forced")));
            }
            return Ok(None);
        }
        let a = self.action_var(g, model)?;
        let a = match action {
            Action::Reduce => a,
            Action::Shift => g.scale(a, -1.0)?,
        };
        Ok(Some(g.log_sigmoid(a)?))
    }

    /// Log distribution over the vocabulary from the top hidden state.
    pub fn word_log_probs(&self, g: &mut Graph<'_>, model: &Rnng) -> Result<Var> {
        let (e, b) = (g.param(model.emb), g.param(model.word_b));
        let logits = g.matmul_t(self.top().out, e)?;
        let logits = g.add(logits, b)?;
        g.log_softmax(logits)
    }

    pub fn word_log_prob(&self, g: &mut Graph<'_>, model: &Rnng, word: usize) -> Result<Var> {
        model.check_word(word)?;
        let lp = self.word_log_probs(g, model)?;
        g.elem(lp, word)
    }

    fn push(&mut self, g: &mut Graph<'_>, model: &Rnng, x: Var, constituent: LstmState) -> Result<()> {
        let top = *self.top();
        let x0 = g.dropout(x, model.dropout)?;
        let s0 = model.layers[0].step(g, x0, top.layers[0])?;
        let x1 = g.dropout(s0.h, model.dropout)?;
        let s1 = model.layers[1].step(g, x1, top.layers[1])?;
        let out = g.dropout(s1.h, model.dropout)?;
        self.entries.push(StackEntry {
            layers: [s0, s1],
            out,
            g: constituent,
        });
        Ok(())
    }

    /// Pushes a word without scoring it.
    pub fn push_word(&mut self, g: &mut Graph<'_>, model: &Rnng, word: usize) -> Result<()> {
        model.check_word(word)?;
        let e = g.param(model.emb);
        let x = g.row(e, word)?;
        let zero = g.input(Tensor::zeros(&[model.dim]))?;
        self.push(g, model, x, LstmState { h: x, c: zero })
    }

    /// Scores `word` from the current top, then pushes it.
    pub fn shift(&mut self, g: &mut Graph<'_>, model: &Rnng, word: usize) -> Result<Var> {
        let lp = self.word_log_prob(g, model, word)?;
        self.push_word(g, model, word)?;
        Ok(lp)
    }

    pub fn reduce(&mut self, g: &mut Graph<'_>, model: &Rnng) -> Result<()> {
        if self.real_depth() < 2 {
            return Err(Error::InvalidTree(format!(
                "reduce with {} constituent(s) on the stack",
                self.real_depth()
            )));
        }
        let right = self.entries.pop().unwrap();
        let left = self.entries.pop().unwrap();
        let composed = model.tree.compose(g, left.g, right.g)?;
        self.push(g, model, composed.h, composed)
    }
}

/// Log probability of SHIFT and REDUCE for a logit, as plain numbers.
pub fn action_log_probs(logit: f64) -> (f64, f64) {
    (log_sigmoid(-logit), log_sigmoid(logit))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{grad_check_params, log_sum_exp, DEFAULT_STEP, DEFAULT_TOLERANCE};
    use crate::treebank::TreeRepr;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use Action::{Reduce as R, Shift as S};

    fn model(seed: u64, vocab: usize, dim: usize, range: f64) -> (ParamSet, Rnng) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        let m = Rnng::new(&mut params, vocab, dim, 0.0, range, &mut rng).unwrap();
        (params, m)
    }

    fn joint(params: &ParamSet, m: &Rnng, tokens: &[usize], actions: &[Action]) -> (f64, f64) {
        let mut g = Graph::eval(params);
        let t = m.joint_log_likelihood(&mut g, tokens, actions).unwrap();
        (g.scalar(t.terminal), g.scalar(t.action))
    }

    #[test]
    fn single_word_has_no_action_term() {
        let (params, m) = model(1, 6, 4, 0.3);
        let (term, act) = joint(&params, &m, &[3], &[S]);
        assert_eq!(act, 0.0);
        assert!(term < 0.0);
    }

    #[test]
    fn action_probabilities_normalize_over_trees() {
        let (params, m) = model(2, 6, 4, 0.5);
        let tokens = [2, 3, 4, 5];
        let mut logs = Vec::new();
        let shapes = [
            vec![S, S, R, S, R, S, R],
            vec![S, S, S, R, R, S, R],
            vec![S, S, R, S, S, R, R],
            vec![S, S, S, R, S, R, R],
            vec![S, S, S, S, R, R, R],
        ];
        for z in &shapes {
            logs.push(joint(&params, &m, &tokens, z).1);
        }
        assert!(log_sum_exp(&logs).abs() < 1e-12);
    }

    #[test]
    fn uniform_heads() {
        let (mut params, m) = model(3, 7, 4, 0.5);
        for name in ["emb.word", "word.b", "action.w", "action.b"] {
            let id = params.id(name).unwrap();
            params.get_mut(id).data_mut().fill(0.0);
        }
        let mut g = Graph::eval(&params);
        let mut st = StackState::new(&mut g, &m).unwrap();
        st.push_word(&mut g, &m, 2).unwrap();
        st.push_word(&mut g, &m, 3).unwrap();
        assert_eq!(sigmoid(st.action_logit(&mut g, &m).unwrap()), 0.5);
        let lp = st.word_log_prob(&mut g, &m, 4).unwrap();
        assert!((g.scalar(lp) + 7f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn stack_depth_contracts() {
        let (params, m) = model(4, 6, 4, 0.3);
        let mut g = Graph::eval(&params);
        let mut st = StackState::new(&mut g, &m).unwrap();
        assert_eq!(st.depth(), 1);
        for w in [2, 3, 4] {
            st.shift(&mut g, &m, w).unwrap();
        }
        assert_eq!(st.depth(), 4);
        st.reduce(&mut g, &m).unwrap();
        assert_eq!(st.depth(), 3);
        st.reduce(&mut g, &m).unwrap();
        assert!(st.reduce(&mut g, &m).is_err());
        assert!(st.shift(&mut g, &m, 6).is_err());
    }

    #[test]
    fn invalid_or_mismatched_actions() {
        let (params, m) = model(5, 6, 4, 0.3);
        let mut g = Graph::eval(&params);
        assert!(m.joint_log_likelihood(&mut g, &[2, 3], &[S, R]).is_err());
        assert!(m.joint_log_likelihood(&mut g, &[2, 3, 4], &[S, S, R]).is_err());
    }

    #[test]
    fn replay_is_bit_identical() {
        let (params, m) = model(6, 6, 4, 0.3);
        let a = joint(&params, &m, &[2, 3, 4], &[S, S, R, S, R]);
        let b = joint(&params, &m, &[2, 3, 4], &[S, S, R, S, R]);
        assert_eq!(a.0.to_bits(), b.0.to_bits());
        assert_eq!(a.1.to_bits(), b.1.to_bits());
    }

    #[test]
    fn joint_gradients() {
        let (params, m) = model(7, 5, 3, 0.5);
        let ids: Vec<_> = params.ids().collect();
        let report = grad_check_params(
            &params,
            &ids,
            |g| {
                let t = m.joint_log_likelihood(g, &[2, 3, 4], &[S, S, S, R, R])?;
                g.add(t.terminal, t.action)
            },
            DEFAULT_STEP,
            DEFAULT_TOLERANCE,
        )
        .unwrap();
        assert!(report.passed(), "{} at {:?}", report.max_rel_err, report.worst);
    }

    #[test]
    fn generated_trees_are_valid() {
        let (params, m) = model(8, 8, 4, 0.5);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..200 {
            let s = m.generate(&params, &mut rng, 10).unwrap();
            if s.empty {
                assert!(s.actions.is_empty());
                continue;
            }
            let t = TreeRepr::from_actions(s.actions.clone()).unwrap();
            assert_eq!(t.len(), s.words.len());
            assert!(s.words.len() <= 10);
        }
    }

    #[test]
    fn eos_certain_gives_empty_sentence() {
        let (mut params, m) = model(9, 6, 4, 0.3);
        let b = params.id("word.b").unwrap();
        let e = params.id("emb.word").unwrap();
        params.get_mut(e).data_mut().fill(0.0);
        let bias = params.get_mut(b).data_mut();
        bias.fill(-1e3);
        bias[EOS] = 0.0;
        let s = m.generate(&params, &mut ChaCha8Rng::seed_from_u64(0), 5).unwrap();
        assert!(s.empty && s.words.is_empty() && !s.truncated);
    }

    #[test]
    fn sampled_prior_actions_form_trees() {
        let (params, m) = model(10, 6, 4, 0.5);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let tokens = [2, 3, 4, 5, 2];
        for _ in 0..50 {
            let mut g = Graph::eval(&params);
            let (z, lp) = m.sample_actions(&mut g, &tokens, &mut rng).unwrap();
            let (_, act) = joint(&params, &m, &tokens, &z);
            assert!((lp - act).abs() < 1e-12);
            assert_eq!(TreeRepr::from_actions(z).unwrap().len(), 5);
        }
    }
}
