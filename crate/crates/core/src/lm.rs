//! Two-layer LSTM language model, the perplexity baseline.

use rand::Rng;

use crate::autodiff::{Graph, Group, ParamId, ParamSet, Var};
use crate::error::{Error, Result};
use crate::layers::{init_param, LstmCell, LstmState};
use crate::treebank::EOS;

#[derive(Clone, Debug)]
pub struct RnnLm {
    pub emb: ParamId,
    pub layers: [LstmCell; 2],
    pub word_b: ParamId,
    pub dim: usize,
    pub vocab_size: usize,
    pub dropout: f64,
}

impl RnnLm {
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
        let l0 = LstmCell::new(params, "lm.l0", th, dim, dim, range, rng)?;
        let l1 = LstmCell::new(params, "lm.l1", th, dim, dim, range, rng)?;
        let word_b = init_param(params, "word.b", th, &[vocab_size], range, rng)?;
        Ok(RnnLm {
            emb,
            layers: [l0, l1],
            word_b,
            dim,
            vocab_size,
            dropout,
        })
    }

    pub fn from_params(params: &ParamSet, dropout: f64) -> Result<Self> {
        let missing = |name: &str| Error::Checkpoint(format!("missing language-model parameter {name}"));
        let emb = params.id("emb.word").ok_or_else(|| missing("emb.word"))?;
        let shape = params.get(emb).shape().to_vec();
        let cell = |name: &str| LstmCell::from_params(params, name).ok_or_else(|| missing(name));
        Ok(RnnLm {
            emb,
            layers: [cell("lm.l0")?, cell("lm.l1")?],
            word_b: params.id("word.b").ok_or_else(|| missing("word.b"))?,
            dim: shape[1],
            vocab_size: shape[0],
            dropout,
        })
    }

    /// `Σ_t log p(x_t | x_<t)` over the tokens followed by end-of-sentence.
    pub fn log_likelihood(&self, g: &mut Graph<'_>, tokens: &[usize]) -> Result<Var> {
        if let Some(&w) = tokens.iter().find(|&&w| w >= self.vocab_size) {
            return Err(Error::Range(format!("word id {w} outside vocabulary of {}", self.vocab_size)));
        }
        let (e, b) = (g.param(self.emb), g.param(self.word_b));
        let zero = LstmState::zeros(g, self.dim)?;
        let mut states = [zero, zero];
        let mut out = zero.h;
        let mut terms = Vec::with_capacity(tokens.len() + 1);
        for (t, &w) in tokens.iter().chain(std::iter::once(&EOS)).enumerate() {
            let logits = g.matmul_t(out, e)?;
            let logits = g.add(logits, b)?;
            let lp = g.log_softmax(logits)?;
            terms.push(g.elem(lp, w)?);
            if t == tokens.len() {
                break;
            }
            let x = g.row(e, w)?;
            let x = g.dropout(x, self.dropout)?;
            states[0] = self.layers[0].step(g, x, states[0])?;
            let h = g.dropout(states[0].h, self.dropout)?;
            states[1] = self.layers[1].step(g, h, states[1])?;
            out = g.dropout(states[1].h, self.dropout)?;
        }
        g.sum_scalars(&terms)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{grad_check_params, DEFAULT_STEP, DEFAULT_TOLERANCE};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn uniform_model_loss_is_log_vocab() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut params = ParamSet::new();
        let lm = RnnLm::new(&mut params, 9, 4, 0.0, 0.1, &mut rng).unwrap();
        for name in ["emb.word", "word.b"] {
            let id = params.id(name).unwrap();
            params.get_mut(id).data_mut().fill(0.0);
        }
        let mut g = Graph::eval(&params);
        let ll = lm.log_likelihood(&mut g, &[2, 3, 4]).unwrap();
        assert!((g.scalar(ll) / 4.0 + 9f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut params = ParamSet::new();
        let lm = RnnLm::new(&mut params, 5, 3, 0.0, 0.5, &mut rng).unwrap();
        let ids: Vec<_> = params.ids().collect();
        let r = grad_check_params(&params, &ids, |g| lm.log_likelihood(g, &[2, 4]), DEFAULT_STEP, DEFAULT_TOLERANCE)
            .unwrap();
        assert!(r.passed(), "{}", r.max_rel_err);
    }
}
