//! Parameter set plus the networks that read it.

use rand::Rng;

use crate::autodiff::{Graph, ParamSet};
use crate::config::{Mode, TrainConfig};
use crate::crf::{viterbi, InferenceNetwork, SpanScores};
use crate::error::{Error, Result};
use crate::lm::RnnLm;
use crate::rnng::Rnng;
use crate::treebank::TreeRepr;

#[derive(Clone, Debug)]
pub enum Arch {
    Rnng { gen: Rnng, inf: InferenceNetwork },
    Lm(RnnLm),
}

#[derive(Clone, Debug)]
pub struct Model {
    pub params: ParamSet,
    pub arch: Arch,
}

impl Model {
    /// Fresh parameters for `config.mode`, drawn from `U[-r, r]`.
    pub fn new<R: Rng>(config: &TrainConfig, vocab_size: usize, rng: &mut R) -> Result<Self> {
        let mut params = ParamSet::new();
        let r = config.init_range;
        let arch = if config.mode == Mode::Lm {
            Arch::Lm(RnnLm::new(&mut params, vocab_size, config.word_dim, config.dropout, r, rng)?)
        } else {
            let gen = Rnng::new(&mut params, vocab_size, config.word_dim, config.dropout, r, rng)?;
            let inf = InferenceNetwork::new(
                &mut params,
                config.word_dim,
                config.q_hidden,
                config.mlp_hidden,
                config.max_len,
                config.q_dropout,
                r,
                rng,
            )?;
            Arch::Rnng { gen, inf }
        };
        Ok(Model { params, arch })
    }

    /// Rebuilds the network handles over loaded parameters.
    pub fn from_params(params: ParamSet, config: &TrainConfig) -> Result<Self> {
        let arch = if params.id("lm.l0.w").is_some() {
            Arch::Lm(RnnLm::from_params(&params, config.dropout)?)
        } else {
            Arch::Rnng {
                gen: Rnng::from_params(&params, config.dropout)?,
                inf: InferenceNetwork::from_params(&params, config.q_dropout)?,
            }
        };
        Ok(Model { params, arch })
    }

    pub fn vocab_size(&self) -> usize {
        match &self.arch {
            Arch::Rnng { gen, .. } => gen.vocab_size,
            Arch::Lm(lm) => lm.vocab_size,
        }
    }

    pub fn rnng(&self) -> Result<(&Rnng, &InferenceNetwork)> {
        match &self.arch {
            Arch::Rnng { gen, inf } => Ok((gen, inf)),
            Arch::Lm(_) => Err(Error::Config("operation needs a tree model, not a language model".into())),
        }
    }

    pub fn is_lm(&self) -> bool {
        matches!(self.arch, Arch::Lm(_))
    }

    /// Span scores in evaluation mode.
    pub fn span_scores(&self, tokens: &[usize]) -> Result<SpanScores> {
        let (gen, inf) = self.rnng()?;
        let mut g = Graph::eval(&self.params);
        let s = inf.score_spans(&mut g, gen.emb, tokens)?;
        SpanScores::new(tokens.len(), g.data(s).to_vec())
    }

    /// `(log p(x | z), log p(z | x_<z))` in evaluation mode.
    pub fn joint_terms(&self, tokens: &[usize], tree: &TreeRepr) -> Result<(f64, f64)> {
        let (gen, _) = self.rnng()?;
        let mut g = Graph::eval(&self.params);
        let t = gen.joint_log_likelihood(&mut g, tokens, tree.actions())?;
        Ok((g.scalar(t.terminal), g.scalar(t.action)))
    }

    pub fn log_joint(&self, tokens: &[usize], tree: &TreeRepr) -> Result<f64> {
        let (term, act) = self.joint_terms(tokens, tree)?;
        Ok(term + act)
    }

    /// Exact `log p(x)` of a language model.
    pub fn lm_log_likelihood(&self, tokens: &[usize]) -> Result<f64> {
        match &self.arch {
            Arch::Lm(lm) => {
                let mut g = Graph::eval(&self.params);
                let ll = lm.log_likelihood(&mut g, tokens)?;
                Ok(g.scalar(ll))
            }
            Arch::Rnng { .. } => Err(Error::Config("not a language model".into())),
        }
    }

    /// Viterbi tree under the inference network.
    pub fn parse(&self, tokens: &[usize]) -> Result<TreeRepr> {
        Ok(viterbi(&self.span_scores(tokens)?).0)
    }
}
