//! Plain SGD and Adam over subsets of a parameter set.

use crate::autodiff::{Gradients, ParamId, ParamSet};

/// `p -= lr * g` for each listed parameter with a gradient.
pub fn sgd_step(params: &mut ParamSet, grads: &Gradients, ids: &[ParamId], lr: f64) {
    for &id in ids {
        if let Some(g) = grads.get(id) {
            for (p, d) in params.get_mut(id).data_mut().iter_mut().zip(g.data()) {
                *p -= lr * d;
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdamSettings {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

/// Bias-corrected Adam moments, one buffer per parameter (empty for
/// parameters this optimizer never touches).
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub t: u64,
}

impl Adam {
    pub fn new(params: &ParamSet, ids: &[ParamId]) -> Self {
        let mut m = vec![Vec::new(); params.len()];
        for &id in ids {
            m[id.index()] = vec![0.0; params.get(id).len()];
        }
        Adam {
            v: m.clone(),
            m,
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut ParamSet, grads: &Gradients, ids: &[ParamId], s: &AdamSettings) {
        self.t += 1;
        let c1 = 1.0 - s.beta1.powi(self.t as i32);
        let c2 = 1.0 - s.beta2.powi(self.t as i32);
        for &id in ids {
            let n = params.get(id).len();
            let (m, v) = (&mut self.m[id.index()], &mut self.v[id.index()]);
            if m.len() != n {
                m.resize(n, 0.0);
                v.resize(n, 0.0);
            }
            let g = grads.dense(params, id);
            let p = params.get_mut(id).data_mut();
            for k in 0..n {
                m[k] = s.beta1 * m[k] + (1.0 - s.beta1) * g[k];
                v[k] = s.beta2 * v[k] + (1.0 - s.beta2) * g[k] * g[k];
                let mhat = m[k] / c1;
                let vhat = v[k] / c2;
                p[k] -= s.lr * mhat / (vhat.sqrt() + s.eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{Graph, Group, Tensor};

    #[test]
    fn adam_first_step_moves_by_lr() {
        let mut params = ParamSet::new();
        let id = params.add("x", Group::Phi, Tensor::vector(vec![1.0, -2.0])).unwrap();
        let grads = {
            let mut g = Graph::eval(&params);
            let x = g.param(id);
            let y = g.mul(x, x).unwrap();
            let y = g.sum(y).unwrap();
            g.backward(y).unwrap().param_grads()
        };
        let mut adam = Adam::new(&params, &[id]);
        let s = AdamSettings {
            lr: 0.1,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        };
        adam.step(&mut params, &grads, &[id], &s);
        let x = params.get(id).data();
        assert!((x[0] - 0.9).abs() < 1e-6);
        assert!((x[1] + 1.9).abs() < 1e-6);
    }

    #[test]
    fn sgd_moves_against_gradient() {
        let mut params = ParamSet::new();
        let id = params.add("x", Group::Theta, Tensor::vector(vec![1.0])).unwrap();
        let grads = {
            let mut g = Graph::eval(&params);
            let x = g.param(id);
            let y = g.scale(x, 3.0).unwrap();
            let y = g.sum(y).unwrap();
            g.backward(y).unwrap().param_grads()
        };
        sgd_step(&mut params, &grads, &[id], 0.5);
        assert_eq!(params.get(id).data(), &[-0.5]);
    }
}
