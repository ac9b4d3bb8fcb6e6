use rand::Rng;

use super::scores::SpanIndex;
use crate::autodiff::{Graph, Group, ParamId, ParamSet, Var};
use crate::error::{Error, Result};
use crate::layers::{init_param, Linear, LstmCell, LstmState};

/// Span scorer: a bidirectional LSTM over word plus position embeddings,
/// padded with two learned boundary tokens, followed by an MLP on hidden-state
/// differences.
#[derive(Clone, Debug)]
pub struct InferenceNetwork {
    pub pos: ParamId,
    pub boundary: ParamId,
    pub fwd: LstmCell,
    pub bwd: LstmCell,
    pub mlp1: Linear,
    pub ln_gain: ParamId,
    pub ln_bias: ParamId,
    pub mlp2: Linear,
    pub max_len: usize,
    pub dropout: f64,
}

const LN_EPS: f64 = 1e-5;

impl InferenceNetwork {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng>(
        params: &mut ParamSet,
        word_dim: usize,
        hidden: usize,
        mlp_hidden: usize,
        max_len: usize,
        dropout: f64,
        range: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let phi = Group::Phi;
        let pos = init_param(params, "q.pos", phi, &[max_len + 2, word_dim], range, rng)?;
        let boundary = init_param(params, "q.boundary", phi, &[2, word_dim], range, rng)?;
        let fwd = LstmCell::new(params, "q.fwd", phi, word_dim, hidden, range, rng)?;
        let bwd = LstmCell::new(params, "q.bwd", phi, word_dim, hidden, range, rng)?;
        let mlp1 = Linear::new(params, "q.mlp1", phi, 2 * hidden, mlp_hidden, range, rng)?;
        let ln_gain = init_param(params, "q.ln.gain", phi, &[mlp_hidden], range, rng)?;
        let ln_bias = init_param(params, "q.ln.bias", phi, &[mlp_hidden], range, rng)?;
        let mlp2 = Linear::new(params, "q.mlp2", phi, mlp_hidden, 1, range, rng)?;
        Ok(InferenceNetwork {
            pos,
            boundary,
            fwd,
            bwd,
            mlp1,
            ln_gain,
            ln_bias,
            mlp2,
            max_len,
            dropout,
        })
    }

    pub fn from_params(params: &ParamSet, dropout: f64) -> Result<Self> {
        let missing = |name: &str| Error::Checkpoint(format!("missing inference parameter {name}"));
        let id = |name: &str| params.id(name).ok_or_else(|| missing(name));
        let pos = id("q.pos")?;
        Ok(InferenceNetwork {
            pos,
            boundary: id("q.boundary")?,
            fwd: LstmCell::from_params(params, "q.fwd").ok_or_else(|| missing("q.fwd"))?,
            bwd: LstmCell::from_params(params, "q.bwd").ok_or_else(|| missing("q.bwd"))?,
            mlp1: Linear::from_params(params, "q.mlp1").ok_or_else(|| missing("q.mlp1"))?,
            ln_gain: id("q.ln.gain")?,
            ln_bias: id("q.ln.bias")?,
            mlp2: Linear::from_params(params, "q.mlp2").ok_or_else(|| missing("q.mlp2"))?,
            max_len: params.get(pos).shape()[0] - 2,
            dropout,
        })
    }

    /// Scores every span of `tokens`; returns a `[len (len + 1) / 2]` vector in
    /// [`SpanIndex`] order.
    pub fn score_spans(&self, g: &mut Graph<'_>, emb: ParamId, tokens: &[usize]) -> Result<Var> {
        let n = tokens.len();
        if n == 0 {
            return Err(Error::Data("cannot score an empty sentence".into()));
        }
        if n > self.max_len {
            return Err(Error::Range(format!(
                "sentence of length {n} exceeds the position table ({})",
                self.max_len
            )));
        }
        let emb = g.param(emb);
        let words = g.rows(emb, tokens)?;
        let boundary = g.param(self.boundary);
        let pos = g.param(self.pos);
        let positions: Vec<usize> = (0..n + 2).collect();
        let pos = g.rows(pos, &positions)?;

        // x_0 and x_{n+1} are the boundary tokens.
        let mut inputs = Vec::with_capacity(n + 2);
        for t in 0..n + 2 {
            let base = match t {
                0 => g.row(boundary, 0)?,
                t if t == n + 1 => g.row(boundary, 1)?,
                t => g.row(words, t - 1)?,
            };
            let p = g.row(pos, t)?;
            inputs.push(g.add(base, p)?);
        }

        let mut state = LstmState::zeros(g, self.fwd.hidden)?;
        let mut fwd = Vec::with_capacity(n + 2);
        for &x in &inputs {
            state = self.fwd.step(g, x, state)?;
            fwd.push(state.h);
        }
        let mut state = LstmState::zeros(g, self.bwd.hidden)?;
        let mut bwd = vec![state.h; n + 2];
        for t in (0..n + 2).rev() {
            state = self.bwd.step(g, inputs[t], state)?;
            bwd[t] = state.h;
        }
        let fwd = g.stack(&fwd)?;
        let bwd = g.stack(&bwd)?;

        // s_ij = MLP([F_{j+1} - F_i ; B_{i-1} - B_j]), with positions 0..=n+1.
        let index = SpanIndex::new(n);
        let (mut f_hi, mut f_lo, mut b_hi, mut b_lo) = (vec![], vec![], vec![], vec![]);
        for (i, j) in index.spans() {
            f_hi.push(j + 1);
            f_lo.push(i);
            b_hi.push(i - 1);
            b_lo.push(j);
        }
        let a = g.rows(fwd, &f_hi)?;
        let b = g.rows(fwd, &f_lo)?;
        let fd = g.sub(a, b)?;
        let a = g.rows(bwd, &b_hi)?;
        let b = g.rows(bwd, &b_lo)?;
        let bd = g.sub(a, b)?;
        let feats = g.concat(&[fd, bd])?;

        let hidden = self.mlp1.forward(g, feats)?;
        let hidden = g.relu(hidden)?;
        let (gain, bias) = (g.param(self.ln_gain), g.param(self.ln_bias));
        let hidden = g.layer_norm(hidden, gain, bias, LN_EPS)?;
        let hidden = g.dropout(hidden, self.dropout)?;
        let out = self.mlp2.forward(g, hidden)?;
        g.reshape(out, &[index.count()])
    }
}
