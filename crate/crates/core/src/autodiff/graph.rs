//! Dynamic computation records with reverse-mode differentiation.
//!
//! A [`Graph`] is built fresh for every example: each primitive computes its
//! value eagerly and appends a node. Node order is a topological order, so
//! [`Graph::backward`] simply walks the nodes in reverse.

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Gradients, ParamId, ParamSet, Tensor};
use crate::error::{Error, Result};

static NEXT_GRAPH_ID: AtomicU64 = AtomicU64::new(1);

/// Handle to a node of one particular [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var {
    graph: u64,
    idx: usize,
}

enum Value {
    Owned(Vec<f64>),
    Param(ParamId),
}

enum Op {
    Leaf,
    MatMul(Var, Var),
    MatMulT(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddBias(Var, Var),
    Scale(Var, f64),
    Shift(Var),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    Exp(Var),
    Log(Var),
    LogSigmoid(Var),
    Softmax(Var),
    LogSoftmax(Var),
    LogSumExp(Var),
    Sum(Var),
    Concat(Vec<Var>),
    Stack(Vec<Var>),
    Slice {
        x: Var,
        start: usize,
    },
    Rows {
        x: Var,
        rows: Vec<usize>,
    },
    Elem {
        x: Var,
        idx: usize,
    },
    Reshape(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<f64>,
        rstd: Vec<f64>,
    },
    Dropout {
        x: Var,
        mask: Vec<f64>,
    },
}

struct Node {
    shape: Vec<usize>,
    value: Value,
    op: Op,
    requires_grad: bool,
}

/// A computation record. Eval-mode graphs treat dropout as the identity;
/// train-mode graphs draw dropout masks from their own seeded generator.
pub struct Graph<'p> {
    id: u64,
    params: Option<&'p ParamSet>,
    nodes: Vec<Node>,
    param_vars: HashMap<ParamId, Var>,
    dropout_rng: Option<ChaCha8Rng>,
}

impl Default for Graph<'static> {
    fn default() -> Self {
        Graph::standalone()
    }
}

impl Graph<'static> {
    /// A graph without parameters, for computations over explicit inputs.
    pub fn standalone() -> Self {
        Graph::build(None, None)
    }
}

impl<'p> Graph<'p> {
    fn build(params: Option<&'p ParamSet>, dropout_rng: Option<ChaCha8Rng>) -> Self {
        Graph {
            id: NEXT_GRAPH_ID.fetch_add(1, Ordering::Relaxed),
            params,
            nodes: Vec::new(),
            param_vars: HashMap::new(),
            dropout_rng,
        }
    }

    /// Evaluation-mode graph over `params`.
    pub fn eval(params: &'p ParamSet) -> Self {
        Graph::build(Some(params), None)
    }

    /// Training-mode graph; dropout masks come from `seed`.
    pub fn train(params: &'p ParamSet, seed: u64) -> Self {
        Graph::build(Some(params), Some(ChaCha8Rng::seed_from_u64(seed)))
    }

    pub fn is_training(&self) -> bool {
        self.dropout_rng.is_some()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn check(&self, v: Var) -> Result<&Node> {
        if v.graph != self.id || v.idx >= self.nodes.len() {
            return Err(Error::Graph(format!(
                "variable {} does not belong to this computation record",
                v.idx
            )));
        }
        Ok(&self.nodes[v.idx])
    }

    fn node(&self, v: Var) -> &Node {
        &self.nodes[v.idx]
    }

    fn data_of<'a>(&'a self, node: &'a Node) -> &'a [f64] {
        match &node.value {
            Value::Owned(d) => d,
            Value::Param(id) => self
                .params
                .expect("parameter node in a graph without parameters")
                .get(*id)
                .data(),
        }
    }

    /// Values of a node.
    pub fn data(&self, v: Var) -> &[f64] {
        self.data_of(self.node(v))
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.node(v).shape
    }

    pub fn value(&self, v: Var) -> Tensor {
        Tensor::new(self.shape(v).to_vec(), self.data(v).to_vec()).expect("node shape")
    }

    /// Value of a single-element node.
    pub fn scalar(&self, v: Var) -> f64 {
        self.data(v)[0]
    }

    fn push(&mut self, name: &'static str, shape: Vec<usize>, data: Vec<f64>, op: Op) -> Result<Var> {
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { op: name });
        }
        let requires_grad = match &op {
            Op::Leaf => false,
            _ => parents(&op).iter().any(|p| self.nodes[p.idx].requires_grad),
        };
        self.nodes.push(Node {
            shape,
            value: Value::Owned(data),
            op,
            requires_grad,
        });
        Ok(Var {
            graph: self.id,
            idx: self.nodes.len() - 1,
        })
    }

    fn leaf(&mut self, t: Tensor, requires_grad: bool) -> Result<Var> {
        let shape = t.shape().to_vec();
        let v = self.push("input", shape, t.into_data(), Op::Leaf)?;
        self.nodes[v.idx].requires_grad = requires_grad;
        Ok(v)
    }

    /// Constant input; no gradient flows into it.
    pub fn input(&mut self, t: Tensor) -> Result<Var> {
        self.leaf(t, false)
    }

    pub fn constant(&mut self, value: f64) -> Result<Var> {
        self.leaf(Tensor::scalar(value), false)
    }

    /// Differentiable input leaf; query its gradient with [`Backprop::wrt`].
    pub fn variable(&mut self, t: Tensor) -> Result<Var> {
        self.leaf(t, true)
    }

    /// Leaf for a stored parameter. Repeated calls return the same node.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(&v) = self.param_vars.get(&id) {
            return v;
        }
        let params = self.params.expect("graph has no parameter set");
        let shape = params.get(id).shape().to_vec();
        self.nodes.push(Node {
            shape,
            value: Value::Param(id),
            op: Op::Leaf,
            requires_grad: true,
        });
        let v = Var {
            graph: self.id,
            idx: self.nodes.len() - 1,
        };
        self.param_vars.insert(id, v);
        v
    }

    // ----- linear algebra -----

    /// `a [r, k] · b [k, m] -> [r, m]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.check(a)?.shape.clone(), self.check(b)?.shape.clone());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::shape("matmul", &[&sa, &sb]));
        }
        let (r, k, m) = (sa[0], sa[1], sb[1]);
        let (da, db) = (self.data(a), self.data(b));
        let mut out = vec![0.0; r * m];
        for i in 0..r {
            let row = &mut out[i * m..(i + 1) * m];
            for p in 0..k {
                axpy(row, da[i * k + p], &db[p * m..(p + 1) * m]);
            }
        }
        self.push("matmul", vec![r, m], out, Op::MatMul(a, b))
    }

    /// `a [.., k] · bᵀ` with `b [m, k]`, giving `[.., m]`. This is the
    /// affine-layer product with weights stored as `[out, in]`.
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.check(a)?.shape.clone(), self.check(b)?.shape.clone());
        if sa.is_empty() || sb.len() != 2 || sa[sa.len() - 1] != sb[1] {
            return Err(Error::shape("matmul_t", &[&sa, &sb]));
        }
        let k = sb[1];
        let m = sb[0];
        let rows = self.data(a).len() / k;
        let (da, db) = (self.data(a), self.data(b));
        let mut out = vec![0.0; rows * m];
        for r in 0..rows {
            let ar = &da[r * k..(r + 1) * k];
            for j in 0..m {
                out[r * m + j] = dot(ar, &db[j * k..(j + 1) * k]);
            }
        }
        let mut shape = sa.clone();
        *shape.last_mut().unwrap() = m;
        self.push("matmul_t", shape, out, Op::MatMulT(a, b))
    }

    // ----- elementwise -----

    fn same_shape(&self, name: &'static str, a: Var, b: Var) -> Result<Vec<usize>> {
        let (sa, sb) = (&self.check(a)?.shape, &self.check(b)?.shape);
        if sa != sb {
            return Err(Error::shape(name, &[sa, sb]));
        }
        Ok(sa.clone())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let shape = self.same_shape("add", a, b)?;
        let out = zip_map(self.data(a), self.data(b), |x, y| x + y);
        self.push("add", shape, out, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let shape = self.same_shape("sub", a, b)?;
        let out = zip_map(self.data(a), self.data(b), |x, y| x - y);
        self.push("sub", shape, out, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let shape = self.same_shape("mul", a, b)?;
        let out = zip_map(self.data(a), self.data(b), |x, y| x * y);
        self.push("mul", shape, out, Op::Mul(a, b))
    }

    /// Adds `bias [m]` to every row of `x [.., m]`.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (sx, sb) = (self.check(x)?.shape.clone(), self.check(bias)?.shape.clone());
        if sx.is_empty() || sb.len() != 1 || sb[0] != sx[sx.len() - 1] {
            return Err(Error::shape("add_bias", &[&sx, &sb]));
        }
        let m = sb[0];
        let db = self.data(bias);
        let out = self
            .data(x)
            .iter()
            .enumerate()
            .map(|(i, v)| v + db[i % m])
            .collect();
        self.push("add_bias", sx, out, Op::AddBias(x, bias))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Result<Var> {
        let shape = self.check(x)?.shape.clone();
        let out = self.data(x).iter().map(|v| v * c).collect();
        self.push("scale", shape, out, Op::Scale(x, c))
    }

    pub fn shift(&mut self, x: Var, c: f64) -> Result<Var> {
        let shape = self.check(x)?.shape.clone();
        let out = self.data(x).iter().map(|v| v + c).collect();
        self.push("shift", shape, out, Op::Shift(x))
    }

    fn unary(&mut self, name: &'static str, x: Var, f: impl Fn(f64) -> f64, op: Op) -> Result<Var> {
        let shape = self.check(x)?.shape.clone();
        let out = self.data(x).iter().map(|&v| f(v)).collect();
        self.push(name, shape, out, op)
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.unary("sigmoid", x, sigmoid, Op::Sigmoid(x))
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        self.unary("tanh", x, f64::tanh, Op::Tanh(x))
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.unary("relu", x, |v| v.max(0.0), Op::Relu(x))
    }

    pub fn exp(&mut self, x: Var) -> Result<Var> {
        self.unary("exp", x, f64::exp, Op::Exp(x))
    }

    pub fn log(&mut self, x: Var) -> Result<Var> {
        self.unary("log", x, f64::ln, Op::Log(x))
    }

    /// `log σ(x)`, computed without overflow.
    pub fn log_sigmoid(&mut self, x: Var) -> Result<Var> {
        self.unary("log_sigmoid", x, log_sigmoid, Op::LogSigmoid(x))
    }

    // ----- reductions over the last axis -----

    fn last_axis(&self, name: &'static str, x: Var) -> Result<(Vec<usize>, usize)> {
        let shape = self.check(x)?.shape.clone();
        match shape.last() {
            Some(&n) if n > 0 => Ok((shape, n)),
            _ => Err(Error::shape(name, &[&shape])),
        }
    }

    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let (shape, n) = self.last_axis("softmax", x)?;
        let mut out = self.data(x).to_vec();
        for row in out.chunks_mut(n) {
            let lse = log_sum_exp(row);
            row.iter_mut().for_each(|v| *v = (*v - lse).exp());
        }
        self.push("softmax", shape, out, Op::Softmax(x))
    }

    pub fn log_softmax(&mut self, x: Var) -> Result<Var> {
        let (shape, n) = self.last_axis("log_softmax", x)?;
        let mut out = self.data(x).to_vec();
        for row in out.chunks_mut(n) {
            let lse = log_sum_exp(row);
            row.iter_mut().for_each(|v| *v -= lse);
        }
        self.push("log_softmax", shape, out, Op::LogSoftmax(x))
    }

    /// Log-sum-exp over the last axis, which is removed from the shape.
    pub fn log_sum_exp(&mut self, x: Var) -> Result<Var> {
        let (mut shape, n) = self.last_axis("log_sum_exp", x)?;
        shape.pop();
        let out = self.data(x).chunks(n).map(log_sum_exp).collect();
        self.push("log_sum_exp", shape, out, Op::LogSumExp(x))
    }

    /// Sum of all entries, as a scalar.
    pub fn sum(&mut self, x: Var) -> Result<Var> {
        self.check(x)?;
        let total = self.data(x).iter().sum();
        self.push("sum", Vec::new(), vec![total], Op::Sum(x))
    }

    // ----- structural -----

    /// Concatenation along the last axis; leading dimensions must agree.
    pub fn concat(&mut self, xs: &[Var]) -> Result<Var> {
        if xs.is_empty() {
            return Err(Error::Graph("concat of nothing".into()));
        }
        let mut lead: Option<Vec<usize>> = None;
        let mut widths = Vec::with_capacity(xs.len());
        for &x in xs {
            let s = &self.check(x)?.shape;
            let (l, w) = match s.split_last() {
                Some((w, l)) => (l.to_vec(), *w),
                None => (Vec::new(), 1),
            };
            match &lead {
                Some(prev) if *prev != l => {
                    let shapes: Vec<&[usize]> = xs.iter().map(|&v| self.shape(v)).collect();
                    return Err(Error::shape("concat", &shapes));
                }
                _ => lead = Some(l),
            }
            widths.push(w);
        }
        let lead = lead.unwrap();
        let rows: usize = lead.iter().product();
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (&x, &w) in xs.iter().zip(&widths) {
                out.extend_from_slice(&self.data(x)[r * w..(r + 1) * w]);
            }
        }
        let mut shape = lead;
        shape.push(total);
        self.push("concat", shape, out, Op::Concat(xs.to_vec()))
    }

    /// Stacks equally shaped nodes along a new leading axis.
    pub fn stack(&mut self, xs: &[Var]) -> Result<Var> {
        if xs.is_empty() {
            return Err(Error::Graph("stack of nothing".into()));
        }
        let first = self.check(xs[0])?.shape.clone();
        for &x in xs {
            if self.check(x)?.shape != first {
                return Err(Error::shape("stack", &[&first, &self.node(x).shape]));
            }
        }
        let mut out = Vec::with_capacity(xs.len() * first.iter().product::<usize>());
        for &x in xs {
            out.extend_from_slice(self.data(x));
        }
        let mut shape = vec![xs.len()];
        shape.extend_from_slice(&first);
        self.push("stack", shape, out, Op::Stack(xs.to_vec()))
    }

    /// `len` entries of the last axis starting at `start`.
    pub fn slice(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let shape = self.check(x)?.shape.clone();
        let n = match shape.last() {
            Some(&n) if start + len <= n && len > 0 => n,
            _ => {
                return Err(Error::Shape {
                    op: "slice",
                    shapes: format!("{shape:?} [{start}..{}]", start + len),
                })
            }
        };
        let out = self
            .data(x)
            .chunks(n)
            .flat_map(|row| row[start..start + len].iter().copied())
            .collect();
        let mut out_shape = shape;
        *out_shape.last_mut().unwrap() = len;
        self.push("slice", out_shape, out, Op::Slice { x, start })
    }

    fn gather_rows(&mut self, x: Var, rows: &[usize], squeeze: bool) -> Result<Var> {
        let shape = self.check(x)?.shape.clone();
        if shape.len() != 2 || rows.iter().any(|&r| r >= shape[0]) {
            return Err(Error::Shape {
                op: "rows",
                shapes: format!("{shape:?} indexed by {rows:?}"),
            });
        }
        let c = shape[1];
        let d = self.data(x);
        let mut out = Vec::with_capacity(rows.len() * c);
        for &r in rows {
            out.extend_from_slice(&d[r * c..(r + 1) * c]);
        }
        let out_shape = if squeeze { vec![c] } else { vec![rows.len(), c] };
        self.push(
            "rows",
            out_shape,
            out,
            Op::Rows {
                x,
                rows: rows.to_vec(),
            },
        )
    }

    /// Gathers rows of a matrix: `[r, c]` indexed by `n` rows gives `[n, c]`.
    /// This is the embedding lookup.
    pub fn rows(&mut self, x: Var, rows: &[usize]) -> Result<Var> {
        self.gather_rows(x, rows, false)
    }

    /// One row of a matrix as a vector.
    pub fn row(&mut self, x: Var, row: usize) -> Result<Var> {
        self.gather_rows(x, &[row], true)
    }

    /// Single entry by flat row-major index, as a scalar.
    pub fn elem(&mut self, x: Var, idx: usize) -> Result<Var> {
        let n = self.check(x)?;
        if idx >= self.data_of(n).len() {
            return Err(Error::Shape {
                op: "elem",
                shapes: format!("{:?} at flat index {idx}", n.shape),
            });
        }
        let v = self.data(x)[idx];
        self.push("elem", Vec::new(), vec![v], Op::Elem { x, idx })
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let old = self.check(x)?.shape.clone();
        if old.iter().product::<usize>() != shape.iter().product::<usize>() {
            return Err(Error::shape("reshape", &[&old, shape]));
        }
        let out = self.data(x).to_vec();
        self.push("reshape", shape.to_vec(), out, Op::Reshape(x))
    }

    /// Layer normalization over the last axis with learned gain and bias.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let (shape, n) = self.last_axis("layer_norm", x)?;
        let (sg, sb) = (self.check(gain)?.shape.clone(), self.check(bias)?.shape.clone());
        if sg != [n] || sb != [n] {
            return Err(Error::shape("layer_norm", &[&shape, &sg, &sb]));
        }
        let (dg, db) = (self.data(gain), self.data(bias));
        let mut out = Vec::with_capacity(self.data(x).len());
        let mut xhat = Vec::with_capacity(self.data(x).len());
        let mut rstd = Vec::new();
        for row in self.data(x).chunks(n) {
            let mean = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
            let r = 1.0 / (var + eps).sqrt();
            rstd.push(r);
            for (k, v) in row.iter().enumerate() {
                let h = (v - mean) * r;
                xhat.push(h);
                out.push(h * dg[k] + db[k]);
            }
        }
        self.push(
            "layer_norm",
            shape,
            out,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            },
        )
    }

    /// Inverted dropout in training mode; the identity in eval mode.
    pub fn dropout(&mut self, x: Var, rate: f64) -> Result<Var> {
        self.check(x)?;
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::Config(format!("dropout rate {rate} outside [0, 1)")));
        }
        let Some(rng) = self.dropout_rng.as_mut() else {
            return Ok(x);
        };
        if rate == 0.0 {
            return Ok(x);
        }
        let n = self.nodes[x.idx].shape.iter().product::<usize>();
        let keep = 1.0 / (1.0 - rate);
        let mask: Vec<f64> = (0..n)
            .map(|_| if rng.gen::<f64>() < rate { 0.0 } else { keep })
            .collect();
        let shape = self.node(x).shape.clone();
        let out = zip_map(self.data(x), &mask, |a, m| a * m);
        self.push("dropout", shape, out, Op::Dropout { x, mask })
    }

    // ----- conveniences -----

    /// Sum of scalar nodes; `0` for an empty list.
    pub fn sum_scalars(&mut self, xs: &[Var]) -> Result<Var> {
        match xs {
            [] => self.constant(0.0),
            [x] => Ok(*x),
            _ => {
                let s = self.stack(xs)?;
                self.sum(s)
            }
        }
    }

    // ----- backward -----

    /// Reverse pass from a scalar root.
    pub fn backward(&self, root: Var) -> Result<Backprop> {
        let root_node = self.check(root)?;
        if root_node.shape.iter().product::<usize>() != 1 {
            return Err(Error::Graph(format!(
                "backward root must be a scalar, got shape {:?}",
                root_node.shape
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; root.idx + 1];
        if root_node.requires_grad {
            grads[root.idx] = Some(vec![1.0]);
        }
        for i in (0..=root.idx).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backward_node(node, &g, &mut grads);
            grads[i] = Some(g);
        }
        let params = self
            .param_vars
            .iter()
            .map(|(&id, &v)| (id, v.idx))
            .collect();
        Ok(Backprop {
            graph: self.id,
            grads,
            params,
            n_params: self.params.map_or(0, ParamSet::len),
            shapes: self
                .param_vars
                .values()
                .map(|v| (v.idx, self.nodes[v.idx].shape.clone()))
                .collect(),
        })
    }

    fn backward_node(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let out = self.data_of(node);
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (sa, sb) = (&self.node(*a).shape, &self.node(*b).shape);
                let (r, k, m) = (sa[0], sa[1], sb[1]);
                let (da, db) = (self.data(*a), self.data(*b));
                if let Some(ga) = self.acc(grads, *a) {
                    for i in 0..r {
                        let gr = &g[i * m..(i + 1) * m];
                        for p in 0..k {
                            ga[i * k + p] += dot(gr, &db[p * m..(p + 1) * m]);
                        }
                    }
                }
                if let Some(gb) = self.acc(grads, *b) {
                    for i in 0..r {
                        for p in 0..k {
                            axpy(&mut gb[p * m..(p + 1) * m], da[i * k + p], &g[i * m..(i + 1) * m]);
                        }
                    }
                }
            }
            Op::MatMulT(a, b) => {
                let sb = &self.node(*b).shape;
                let (m, k) = (sb[0], sb[1]);
                let (da, db) = (self.data(*a), self.data(*b));
                let rows = da.len() / k;
                if let Some(ga) = self.acc(grads, *a) {
                    for r in 0..rows {
                        let gar = &mut ga[r * k..(r + 1) * k];
                        for j in 0..m {
                            let c = g[r * m + j];
                            if c != 0.0 {
                                axpy(gar, c, &db[j * k..(j + 1) * k]);
                            }
                        }
                    }
                }
                if let Some(gb) = self.acc(grads, *b) {
                    for r in 0..rows {
                        let ar = &da[r * k..(r + 1) * k];
                        for j in 0..m {
                            let c = g[r * m + j];
                            if c != 0.0 {
                                axpy(&mut gb[j * k..(j + 1) * k], c, ar);
                            }
                        }
                    }
                }
            }
            Op::Add(a, b) => {
                if let Some(ga) = self.acc(grads, *a) {
                    axpy(ga, 1.0, g);
                }
                if let Some(gb) = self.acc(grads, *b) {
                    axpy(gb, 1.0, g);
                }
            }
            Op::Sub(a, b) => {
                if let Some(ga) = self.acc(grads, *a) {
                    axpy(ga, 1.0, g);
                }
                if let Some(gb) = self.acc(grads, *b) {
                    axpy(gb, -1.0, g);
                }
            }
            Op::Mul(a, b) => {
                let (da, db) = (self.data(*a), self.data(*b));
                if let Some(ga) = self.acc(grads, *a) {
                    for ((x, gi), y) in ga.iter_mut().zip(g).zip(db) {
                        *x += gi * y;
                    }
                }
                if let Some(gb) = self.acc(grads, *b) {
                    for ((x, gi), y) in gb.iter_mut().zip(g).zip(da) {
                        *x += gi * y;
                    }
                }
            }
            Op::AddBias(x, b) => {
                if let Some(gx) = self.acc(grads, *x) {
                    axpy(gx, 1.0, g);
                }
                if let Some(gb) = self.acc(grads, *b) {
                    let m = gb.len();
                    for row in g.chunks(m) {
                        axpy(gb, 1.0, row);
                    }
                }
            }
            Op::Scale(x, c) => {
                if let Some(gx) = self.acc(grads, *x) {
                    axpy(gx, *c, g);
                }
            }
            Op::Shift(x) | Op::Reshape(x) => {
                if let Some(gx) = self.acc(grads, *x) {
                    axpy(gx, 1.0, g);
                }
            }
            Op::Sigmoid(x) => self.elementwise(grads, *x, g, out, |_, y| y * (1.0 - y)),
            Op::Tanh(x) => self.elementwise(grads, *x, g, out, |_, y| 1.0 - y * y),
            Op::Relu(x) => self.elementwise(grads, *x, g, out, |v, _| if v > 0.0 { 1.0 } else { 0.0 }),
            Op::Exp(x) => self.elementwise(grads, *x, g, out, |_, y| y),
            Op::Log(x) => self.elementwise(grads, *x, g, out, |v, _| 1.0 / v),
            Op::LogSigmoid(x) => self.elementwise(grads, *x, g, out, |_, y| -y.exp_m1()),
            Op::Softmax(x) => {
                let n = *node.shape.last().unwrap();
                if let Some(gx) = self.acc(grads, *x) {
                    for ((gxr, yr), gr) in gx.chunks_mut(n).zip(out.chunks(n)).zip(g.chunks(n)) {
                        let s: f64 = yr.iter().zip(gr).map(|(y, gi)| y * gi).sum();
                        for ((a, y), gi) in gxr.iter_mut().zip(yr).zip(gr) {
                            *a += y * (gi - s);
                        }
                    }
                }
            }
            Op::LogSoftmax(x) => {
                let n = *node.shape.last().unwrap();
                if let Some(gx) = self.acc(grads, *x) {
                    for ((gxr, yr), gr) in gx.chunks_mut(n).zip(out.chunks(n)).zip(g.chunks(n)) {
                        let s: f64 = gr.iter().sum();
                        for ((a, y), gi) in gxr.iter_mut().zip(yr).zip(gr) {
                            *a += gi - y.exp() * s;
                        }
                    }
                }
            }
            Op::LogSumExp(x) => {
                let n = *self.node(*x).shape.last().unwrap();
                let dx = self.data(*x);
                if let Some(gx) = self.acc(grads, *x) {
                    for (r, (gxr, xr)) in gx.chunks_mut(n).zip(dx.chunks(n)).enumerate() {
                        for (a, v) in gxr.iter_mut().zip(xr) {
                            *a += g[r] * (v - out[r]).exp();
                        }
                    }
                }
            }
            Op::Sum(x) => {
                if let Some(gx) = self.acc(grads, *x) {
                    gx.iter_mut().for_each(|a| *a += g[0]);
                }
            }
            Op::Concat(xs) => {
                let total = *node.shape.last().unwrap();
                let rows = g.len() / total;
                let mut offset = 0;
                for &x in xs {
                    let w = self.node(x).shape.last().copied().unwrap_or(1);
                    if let Some(gx) = self.acc(grads, x) {
                        for r in 0..rows {
                            axpy(
                                &mut gx[r * w..(r + 1) * w],
                                1.0,
                                &g[r * total + offset..r * total + offset + w],
                            );
                        }
                    }
                    offset += w;
                }
            }
            Op::Stack(xs) => {
                let n = g.len() / xs.len();
                for (i, &x) in xs.iter().enumerate() {
                    if let Some(gx) = self.acc(grads, x) {
                        axpy(gx, 1.0, &g[i * n..(i + 1) * n]);
                    }
                }
            }
            Op::Slice { x, start } => {
                let len = *node.shape.last().unwrap();
                let n = *self.node(*x).shape.last().unwrap();
                if let Some(gx) = self.acc(grads, *x) {
                    for (gxr, gr) in gx.chunks_mut(n).zip(g.chunks(len)) {
                        axpy(&mut gxr[*start..*start + len], 1.0, gr);
                    }
                }
            }
            Op::Rows { x, rows } => {
                let c = self.node(*x).shape[1];
                if let Some(gx) = self.acc(grads, *x) {
                    for (i, &r) in rows.iter().enumerate() {
                        axpy(&mut gx[r * c..(r + 1) * c], 1.0, &g[i * c..(i + 1) * c]);
                    }
                }
            }
            Op::Elem { x, idx } => {
                if let Some(gx) = self.acc(grads, *x) {
                    gx[*idx] += g[0];
                }
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            } => {
                let n = *node.shape.last().unwrap();
                let dgain = self.data(*gain);
                if let Some(gg) = self.acc(grads, *gain) {
                    for (gr, hr) in g.chunks(n).zip(xhat.chunks(n)) {
                        for ((a, gi), h) in gg.iter_mut().zip(gr).zip(hr) {
                            *a += gi * h;
                        }
                    }
                }
                if let Some(gb) = self.acc(grads, *bias) {
                    for gr in g.chunks(n) {
                        axpy(gb, 1.0, gr);
                    }
                }
                if let Some(gx) = self.acc(grads, *x) {
                    for (r, ((gxr, gr), hr)) in gx
                        .chunks_mut(n)
                        .zip(g.chunks(n))
                        .zip(xhat.chunks(n))
                        .enumerate()
                    {
                        let dh: Vec<f64> = gr.iter().zip(dgain).map(|(a, b)| a * b).collect();
                        let mean_dh = dh.iter().sum::<f64>() / n as f64;
                        let mean_dh_h =
                            dh.iter().zip(hr).map(|(a, b)| a * b).sum::<f64>() / n as f64;
                        for ((a, d), h) in gxr.iter_mut().zip(&dh).zip(hr) {
                            *a += rstd[r] * (d - mean_dh - h * mean_dh_h);
                        }
                    }
                }
            }
            Op::Dropout { x, mask } => {
                if let Some(gx) = self.acc(grads, *x) {
                    for ((a, gi), m) in gx.iter_mut().zip(g).zip(mask) {
                        *a += gi * m;
                    }
                }
            }
        }
    }

    fn elementwise(
        &self,
        grads: &mut [Option<Vec<f64>>],
        x: Var,
        g: &[f64],
        out: &[f64],
        deriv: impl Fn(f64, f64) -> f64,
    ) {
        let dx = self.data(x);
        if let Some(gx) = self.acc(grads, x) {
            for (((a, gi), v), y) in gx.iter_mut().zip(g).zip(dx).zip(out) {
                *a += gi * deriv(*v, *y);
            }
        }
    }

    fn acc<'g>(&self, grads: &'g mut [Option<Vec<f64>>], v: Var) -> Option<&'g mut Vec<f64>> {
        let node = &self.nodes[v.idx];
        if !node.requires_grad {
            return None;
        }
        let n = node.shape.iter().product();
        Some(grads[v.idx].get_or_insert_with(|| vec![0.0; n]))
    }
}

fn parents(op: &Op) -> Vec<Var> {
    match op {
        Op::Leaf => Vec::new(),
        Op::MatMul(a, b)
        | Op::MatMulT(a, b)
        | Op::Add(a, b)
        | Op::Sub(a, b)
        | Op::Mul(a, b)
        | Op::AddBias(a, b) => vec![*a, *b],
        Op::Scale(x, _)
        | Op::Shift(x)
        | Op::Sigmoid(x)
        | Op::Tanh(x)
        | Op::Relu(x)
        | Op::Exp(x)
        | Op::Log(x)
        | Op::LogSigmoid(x)
        | Op::Softmax(x)
        | Op::LogSoftmax(x)
        | Op::LogSumExp(x)
        | Op::Sum(x)
        | Op::Reshape(x)
        | Op::Slice { x, .. }
        | Op::Rows { x, .. }
        | Op::Elem { x, .. }
        | Op::Dropout { x, .. } => vec![*x],
        Op::Concat(xs) | Op::Stack(xs) => xs.clone(),
        Op::LayerNorm { x, gain, bias, .. } => vec![*x, *gain, *bias],
    }
}

/// Gradients produced by [`Graph::backward`].
pub struct Backprop {
    graph: u64,
    grads: Vec<Option<Vec<f64>>>,
    params: Vec<(ParamId, usize)>,
    n_params: usize,
    shapes: HashMap<usize, Vec<usize>>,
}

impl Backprop {
    /// Gradient with respect to any node recorded before the root; `None` when
    /// no path connects them.
    pub fn wrt(&self, v: Var) -> Option<&[f64]> {
        if v.graph != self.graph {
            return None;
        }
        self.grads.get(v.idx).and_then(|g| g.as_deref())
    }

    /// Gradients of every parameter used in the graph.
    pub fn param_grads(&self) -> Gradients {
        let mut out = vec![None; self.n_params];
        for &(id, idx) in &self.params {
            if let Some(Some(g)) = self.grads.get(idx) {
                let shape = self.shapes[&idx].clone();
                out[id.0] = Some(Tensor::new(shape, g.clone()).expect("gradient shape"));
            }
        }
        Gradients::from_vec(out)
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

/// Stable log-sum-exp of a slice; `-inf` for an empty slice.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    max + xs.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

fn zip_map(a: &[f64], b: &[f64], f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect()
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let chunks = a.len() / 4;
    for c in 0..chunks {
        let i = c * 4;
        acc[0] += a[i] * b[i];
        acc[1] += a[i + 1] * b[i + 1];
        acc[2] += a[i + 2] * b[i + 2];
        acc[3] += a[i + 3] * b[i + 3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for i in chunks * 4..a.len() {
        s += a[i] * b[i];
    }
    s
}

#[inline]
fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn log_sum_exp_of_two_zeros_is_log_two() {
        let mut g = Graph::standalone();
        let x = g.input(Tensor::vector(vec![0.0, 0.0])).unwrap();
        let y = g.log_sum_exp(x).unwrap();
        assert!((g.scalar(y) - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn softmax_of_equal_entries_is_uniform() {
        let mut g = Graph::standalone();
        let x = g.input(Tensor::vector(vec![1.7; 3])).unwrap();
        let y = g.softmax(x).unwrap();
        for &p in g.data(y) {
            assert!((p - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn sigmoid_at_zero_and_its_gradient() {
        let mut g = Graph::standalone();
        let w = g.variable(Tensor::scalar(0.0)).unwrap();
        let s = g.sigmoid(w).unwrap();
        let y = g.scale(s, 3.0).unwrap();
        assert_eq!(g.scalar(s), 0.5);
        let bp = g.backward(y).unwrap();
        assert!((bp.wrt(w).unwrap()[0] - 0.75).abs() < 1e-15);
    }

    #[test]
    fn linear_map_gradient_is_outer_product() {
        // root = sum(W x); dW[i][j] = x[j] for every row i.
        let mut g = Graph::standalone();
        let w = g
            .variable(Tensor::new(vec![2, 3], vec![0.1, -0.2, 0.3, 0.4, 0.5, -0.6]).unwrap())
            .unwrap();
        let x = g.input(Tensor::vector(vec![1.0, 2.0, -3.0])).unwrap();
        let y = g.matmul_t(x, w).unwrap();
        let root = g.sum(y).unwrap();
        let bp = g.backward(root).unwrap();
        assert_eq!(bp.wrt(w).unwrap(), &[1.0, 2.0, -3.0, 1.0, 2.0, -3.0]);
    }

    #[test]
    fn shape_mismatch_names_the_primitive() {
        let mut g = Graph::standalone();
        let a = g.input(Tensor::vector(vec![1.0, 2.0])).unwrap();
        let b = g.input(Tensor::vector(vec![1.0, 2.0, 3.0])).unwrap();
        let err = g.add(a, b).unwrap_err().to_string();
        assert!(err.contains("add") && err.contains("[2]") && err.contains("[3]"), "{err}");
    }

    #[test]
    fn non_finite_output_is_an_error() {
        let mut g = Graph::standalone();
        let a = g.input(Tensor::vector(vec![0.0])).unwrap();
        assert!(matches!(g.log(a), Err(Error::NonFinite { op: "log" })));
    }

    #[test]
    fn backward_rejects_non_scalar_and_foreign_roots() {
        let mut g = Graph::standalone();
        let a = g.variable(Tensor::vector(vec![1.0, 2.0])).unwrap();
        assert!(g.backward(a).is_err());
        let mut other = Graph::standalone();
        let b = other.variable(Tensor::scalar(1.0)).unwrap();
        assert!(g.backward(b).is_err());
    }

    #[test]
    fn dropout_is_identity_in_eval_mode() {
        let params = ParamSet::new();
        let mut g = Graph::eval(&params);
        let a = g.input(Tensor::vector(vec![1.0, 2.0])).unwrap();
        assert_eq!(g.dropout(a, 0.5).unwrap(), a);
    }

    #[test]
    fn dropout_masks_are_seeded() {
        let params = ParamSet::new();
        let run = |seed| {
            let mut g = Graph::train(&params, seed);
            let a = g.input(Tensor::filled(&[64], 1.0)).unwrap();
            let d = g.dropout(a, 0.5).unwrap();
            g.data(d).to_vec()
        };
        assert_eq!(run(7), run(7));
        assert_ne!(run(7), run(8));
        assert!(run(7).iter().all(|&v| v == 0.0 || v == 2.0));
    }
}
