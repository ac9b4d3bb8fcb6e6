//! Recurrent cells and small layers composed from graph primitives.

use rand::Rng;

use crate::autodiff::{Graph, Group, ParamId, ParamSet, Tensor, Var};
use crate::error::Result;

pub(crate) fn init_param<R: Rng>(
    params: &mut ParamSet,
    name: &str,
    group: Group,
    shape: &[usize],
    range: f64,
    rng: &mut R,
) -> Result<ParamId> {
    params.add(name, group, Tensor::uniform(shape, range, rng))
}

/// Hidden and cell state of an LSTM.
#[derive(Clone, Copy, Debug)]
pub struct LstmState {
    pub h: Var,
    pub c: Var,
}

impl LstmState {
    pub fn zeros(g: &mut Graph<'_>, dim: usize) -> Result<Self> {
        let h = g.input(Tensor::zeros(&[dim]))?;
        Ok(LstmState { h, c: h })
    }
}

/// LSTM cell with gates ordered input, forget, candidate, output and a single
/// weight matrix over `[x; h]`.
#[derive(Clone, Debug)]
pub struct LstmCell {
    pub w: ParamId,
    pub b: ParamId,
    pub input: usize,
    pub hidden: usize,
}

impl LstmCell {
    pub fn new<R: Rng>(
        params: &mut ParamSet,
        prefix: &str,
        group: Group,
        input: usize,
        hidden: usize,
        range: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let w = init_param(params, &format!("{prefix}.w"), group, &[4 * hidden, input + hidden], range, rng)?;
        let b = init_param(params, &format!("{prefix}.b"), group, &[4 * hidden], range, rng)?;
        Ok(LstmCell { w, b, input, hidden })
    }

    pub fn from_params(params: &ParamSet, prefix: &str) -> Option<Self> {
        let w = params.id(&format!("{prefix}.w"))?;
        let b = params.id(&format!("{prefix}.b"))?;
        let shape = params.get(w).shape();
        let hidden = shape[0] / 4;
        Some(LstmCell {
            w,
            b,
            input: shape[1] - hidden,
            hidden,
        })
    }

    pub fn step(&self, g: &mut Graph<'_>, x: Var, state: LstmState) -> Result<LstmState> {
        let (w, b) = (g.param(self.w), g.param(self.b));
        let xh = g.concat(&[x, state.h])?;
        let pre = g.matmul_t(xh, w)?;
        let gates = g.add_bias(pre, b)?;
        let n = self.hidden;
        let i = g.slice(gates, 0, n)?;
        let f = g.slice(gates, n, n)?;
        let u = g.slice(gates, 2 * n, n)?;
        let o = g.slice(gates, 3 * n, n)?;
        let i = g.sigmoid(i)?;
        let f = g.sigmoid(f)?;
        let u = g.tanh(u)?;
        let o = g.sigmoid(o)?;
        let keep = g.mul(f, state.c)?;
        let write = g.mul(i, u)?;
        let c = g.add(keep, write)?;
        let tc = g.tanh(c)?;
        let h = g.mul(o, tc)?;
        Ok(LstmState { h, c })
    }
}

/// Binary tree-LSTM with separate forget gates for the left and right child.
#[derive(Clone, Debug)]
pub struct TreeLstm {
    pub w: ParamId,
    pub b: ParamId,
    pub dim: usize,
}

impl TreeLstm {
    pub fn new<R: Rng>(
        params: &mut ParamSet,
        prefix: &str,
        group: Group,
        dim: usize,
        range: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let w = init_param(params, &format!("{prefix}.w"), group, &[5 * dim, 2 * dim], range, rng)?;
        let b = init_param(params, &format!("{prefix}.b"), group, &[5 * dim], range, rng)?;
        Ok(TreeLstm { w, b, dim })
    }

    pub fn from_params(params: &ParamSet, prefix: &str) -> Option<Self> {
        let w = params.id(&format!("{prefix}.w"))?;
        let b = params.id(&format!("{prefix}.b"))?;
        let dim = params.get(w).shape()[1] / 2;
        Some(TreeLstm { w, b, dim })
    }

    pub fn compose(&self, g: &mut Graph<'_>, left: LstmState, right: LstmState) -> Result<LstmState> {
        let (w, b) = (g.param(self.w), g.param(self.b));
        let hh = g.concat(&[left.h, right.h])?;
        let pre = g.matmul_t(hh, w)?;
        let gates = g.add_bias(pre, b)?;
        let n = self.dim;
        let i = g.slice(gates, 0, n)?;
        let fl = g.slice(gates, n, n)?;
        let fr = g.slice(gates, 2 * n, n)?;
        let o = g.slice(gates, 3 * n, n)?;
        let u = g.slice(gates, 4 * n, n)?;
        let i = g.sigmoid(i)?;
        let fl = g.sigmoid(fl)?;
        let fr = g.sigmoid(fr)?;
        let o = g.sigmoid(o)?;
        let u = g.tanh(u)?;
        let write = g.mul(i, u)?;
        let keep_l = g.mul(fl, left.c)?;
        let keep_r = g.mul(fr, right.c)?;
        let c = g.add(write, keep_l)?;
        let c = g.add(c, keep_r)?;
        let tc = g.tanh(c)?;
        let h = g.mul(o, tc)?;
        Ok(LstmState { h, c })
    }
}

/// Affine map `x Wᵀ + b` with `W [out, in]`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
}

impl Linear {
    pub fn new<R: Rng>(
        params: &mut ParamSet,
        prefix: &str,
        group: Group,
        input: usize,
        output: usize,
        range: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let w = init_param(params, &format!("{prefix}.w"), group, &[output, input], range, rng)?;
        let b = init_param(params, &format!("{prefix}.b"), group, &[output], range, rng)?;
        Ok(Linear { w, b })
    }

    pub fn from_params(params: &ParamSet, prefix: &str) -> Option<Self> {
        Some(Linear {
            w: params.id(&format!("{prefix}.w"))?,
            b: params.id(&format!("{prefix}.b"))?,
        })
    }

    pub fn forward(&self, g: &mut Graph<'_>, x: Var) -> Result<Var> {
        let (w, b) = (g.param(self.w), g.param(self.b));
        let y = g.matmul_t(x, w)?;
        g.add_bias(y, b)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{grad_check_params, DEFAULT_STEP, DEFAULT_TOLERANCE};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn lstm_step_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut params = ParamSet::new();
        let cell = LstmCell::new(&mut params, "l", Group::Theta, 3, 4, 0.5, &mut rng).unwrap();
        let x = Tensor::uniform(&[3], 1.0, &mut rng);
        let ids: Vec<_> = params.ids().collect();
        let report = grad_check_params(
            &params,
            &ids,
            |g| {
                let xv = g.input(x.clone())?;
                let s0 = LstmState::zeros(g, 4)?;
                let s1 = cell.step(g, xv, s0)?;
                let s2 = cell.step(g, xv, s1)?;
                let both = g.add(s2.h, s2.c)?;
                g.sum(both)
            },
            DEFAULT_STEP,
            DEFAULT_TOLERANCE,
        )
        .unwrap();
        assert!(report.passed(), "max rel err {}", report.max_rel_err);
    }

    #[test]
    fn tree_lstm_is_order_sensitive() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut params = ParamSet::new();
        let tree = TreeLstm::new(&mut params, "t", Group::Theta, 4, 0.5, &mut rng).unwrap();
        let a = Tensor::uniform(&[4], 1.0, &mut rng);
        let b = Tensor::uniform(&[4], 1.0, &mut rng);
        let mut g = Graph::eval(&params);
        let zero = g.input(Tensor::zeros(&[4])).unwrap();
        let av = g.input(a).unwrap();
        let bv = g.input(b).unwrap();
        let l = LstmState { h: av, c: zero };
        let r = LstmState { h: bv, c: zero };
        let ab = tree.compose(&mut g, l, r).unwrap();
        let ba = tree.compose(&mut g, r, l).unwrap();
        assert_ne!(g.data(ab.h), g.data(ba.h));
    }
}
