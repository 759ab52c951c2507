//! Tape of differentiable operations.
//!
//! A [`Graph`] is built fresh for every forward pass. Nodes are appended in
//! evaluation order, so walking the tape backwards is a reverse topological
//! traversal and every node is visited exactly once. The tape is never
//! mutated by [`Graph::backward`]: each call returns freshly computed
//! gradients, so two calls on the same graph give identical results and
//! nothing accumulates between them.

use std::collections::HashMap;

use crate::error::{DiffError, Result};
use crate::params::{Gradients, ParameterSet};
use crate::tensor::{gemm_acc, gemm_nt_acc, gemm_tn_acc, normalize_row, softmax_row, Tensor};

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Param(usize),
    MatMul(Var, Var),
    AddBias(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    MulCols(Var, Vec<f64>),
    DivCols(Var, Vec<f64>),
    MulConst(Var, Tensor),
    Gelu(Var),
    Tanh(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Softmax(Var),
    Attention {
        q: Var,
        k: Var,
        v: Var,
        batch: usize,
        heads: usize,
        causal: bool,
        probs: Vec<f64>,
    },
    TileRows(Var, usize),
    BatchedGram(Var, usize),
    Reshape(Var),
    Sum(Var),
    SumSquares(Var),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "input",
            Op::Param(_) => "param",
            Op::MatMul(..) => "matmul",
            Op::AddBias(..) => "add_bias",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::MulCols(..) => "mul_cols",
            Op::DivCols(..) => "div_cols",
            Op::MulConst(..) => "mul_const",
            Op::Gelu(_) => "gelu",
            Op::Tanh(_) => "tanh",
            Op::LayerNorm { .. } => "layer_norm",
            Op::Softmax(_) => "softmax",
            Op::Attention { .. } => "attention",
            Op::TileRows(..) => "tile_rows",
            Op::BatchedGram(..) => "batched_gram",
            Op::Reshape(_) => "reshape",
            Op::Sum(_) => "sum",
            Op::SumSquares(_) => "sum_squares",
        }
    }
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    param_vars: HashMap<usize, Var>,
    checked: bool,
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_K: f64 = 0.044_715;

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    /// A graph that rejects any operation producing NaN or infinity.
    pub fn checked() -> Self {
        Self {
            checked: true,
            ..Self::default()
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// First entry of the node's value, for scalar results.
    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value.data()[0]
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Result<Var> {
        if self.checked && !value.is_finite() {
            return Err(DiffError::NonFinite { op: op.name() });
        }
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// A constant input; no gradient flows into it.
    pub fn input(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            needs_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    /// Places a named parameter on the tape. Repeated requests for the same
    /// parameter return the same node.
    pub fn param(&mut self, params: &ParameterSet, name: &str) -> Result<Var> {
        let idx = params.index_of(name)?;
        if let Some(&v) = self.param_vars.get(&idx) {
            return Ok(v);
        }
        let v = self.push(params.by_index(idx).clone(), Op::Param(idx), true)?;
        self.param_vars.insert(idx, v);
        Ok(v)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        let ng = self.ng(a) || self.ng(b);
        self.push(out, Op::MatMul(a, b), ng)
    }

    /// Adds a bias vector to every last-axis slice of `x`.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (xv, bv) = (self.value(x), self.value(bias));
        let n = xv.cols();
        if bv.len() != n {
            return Err(DiffError::Shape {
                op: "add_bias",
                lhs: xv.shape().to_vec(),
                rhs: bv.shape().to_vec(),
            });
        }
        let mut out = xv.clone();
        for row in out.data_mut().chunks_mut(n.max(1)) {
            for (o, b) in row.iter_mut().zip(bv.data()) {
                *o += b;
            }
        }
        let ng = self.ng(x) || self.ng(bias);
        self.push(out, Op::AddBias(x, bias), ng)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).zip_map(self.value(b), "add", |x, y| x + y)?;
        let ng = self.ng(a) || self.ng(b);
        self.push(out, Op::Add(a, b), ng)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).zip_map(self.value(b), "sub", |x, y| x - y)?;
        let ng = self.ng(a) || self.ng(b);
        self.push(out, Op::Sub(a, b), ng)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).zip_map(self.value(b), "mul", |x, y| x * y)?;
        let ng = self.ng(a) || self.ng(b);
        self.push(out, Op::Mul(a, b), ng)
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Result<Var> {
        let out = self.value(x).map(|v| v * factor);
        let ng = self.ng(x);
        self.push(out, Op::Scale(x, factor), ng)
    }

    /// Multiplies column `j` of every last-axis slice by `weights[j]`.
    pub fn mul_cols(&mut self, x: Var, weights: &[f64]) -> Result<Var> {
        let xv = self.value(x);
        let n = xv.cols();
        if weights.len() != n {
            return Err(DiffError::Shape {
                op: "mul_cols",
                lhs: xv.shape().to_vec(),
                rhs: vec![weights.len()],
            });
        }
        let mut out = xv.clone();
        for row in out.data_mut().chunks_mut(n.max(1)) {
            for (o, w) in row.iter_mut().zip(weights) {
                *o *= w;
            }
        }
        let ng = self.ng(x);
        self.push(out, Op::MulCols(x, weights.to_vec()), ng)
    }

    /// Divides column `j` of every last-axis slice by `divisors[j]`.
    pub fn div_cols(&mut self, x: Var, divisors: &[f64]) -> Result<Var> {
        let xv = self.value(x);
        let n = xv.cols();
        if divisors.len() != n {
            return Err(DiffError::Shape {
                op: "div_cols",
                lhs: xv.shape().to_vec(),
                rhs: vec![divisors.len()],
            });
        }
        let mut out = xv.clone();
        for row in out.data_mut().chunks_mut(n.max(1)) {
            for (o, w) in row.iter_mut().zip(divisors) {
                *o /= w;
            }
        }
        let ng = self.ng(x);
        self.push(out, Op::DivCols(x, divisors.to_vec()), ng)
    }

    /// Elementwise product with a constant array of the same shape.
    pub fn mul_const(&mut self, x: Var, c: Tensor) -> Result<Var> {
        let out = self.value(x).zip_map(&c, "mul_const", |a, b| a * b)?;
        let ng = self.ng(x);
        self.push(out, Op::MulConst(x, c), ng)
    }

    pub fn gelu(&mut self, x: Var) -> Result<Var> {
        let out = self
            .value(x)
            .map(|v| 0.5 * v * (1.0 + (GELU_C * (v + GELU_K * v * v * v)).tanh()));
        let ng = self.ng(x);
        self.push(out, Op::Gelu(x), ng)
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).map(f64::tanh);
        let ng = self.ng(x);
        self.push(out, Op::Tanh(x), ng)
    }

    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let (xv, gv, bv) = (self.value(x), self.value(gain), self.value(bias));
        let n = xv.cols();
        if gv.len() != n || bv.len() != n {
            return Err(DiffError::Shape {
                op: "layer_norm",
                lhs: xv.shape().to_vec(),
                rhs: gv.shape().to_vec(),
            });
        }
        let rows = xv.rows();
        let mut xhat = vec![0.0; xv.len()];
        let mut inv_std = vec![0.0; rows];
        let mut out = vec![0.0; xv.len()];
        for r in 0..rows {
            let span = r * n..(r + 1) * n;
            inv_std[r] = normalize_row(&xv.data()[span.clone()], eps, &mut xhat[span.clone()]);
            for j in 0..n {
                out[r * n + j] = xhat[r * n + j] * gv.data()[j] + bv.data()[j];
            }
        }
        let out = Tensor::new(xv.shape().to_vec(), out)?;
        let ng = self.ng(x) || self.ng(gain) || self.ng(bias);
        self.push(
            out,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            },
            ng,
        )
    }

    /// Softmax over the last axis with an optional additive mask (see
    /// [`Tensor::softmax_lastdim`]).
    pub fn softmax(&mut self, x: Var, mask: Option<&Tensor>) -> Result<Var> {
        let out = self.value(x).softmax_lastdim(mask)?;
        let ng = self.ng(x);
        self.push(out, Op::Softmax(x), ng)
    }

    /// Multi-head scaled dot-product attention.
    ///
    /// `q`, `k`, `v` are `[batch·T × d]` with rows grouped per sequence; the
    /// `d` columns split into `heads` contiguous groups. With `causal`, query
    /// `t` only attends to keys `0..=t`.
    pub fn attention(
        &mut self,
        q: Var,
        k: Var,
        v: Var,
        batch: usize,
        heads: usize,
        causal: bool,
    ) -> Result<Var> {
        let (qv, kv, vv) = (self.value(q), self.value(k), self.value(v));
        if qv.shape() != kv.shape() || qv.shape() != vv.shape() || qv.shape().len() != 2 {
            return Err(DiffError::Shape {
                op: "attention",
                lhs: qv.shape().to_vec(),
                rhs: kv.shape().to_vec(),
            });
        }
        let (rows, d) = (qv.shape()[0], qv.shape()[1]);
        if batch == 0 || rows % batch != 0 || heads == 0 || d % heads != 0 {
            return Err(DiffError::Invalid {
                op: "attention",
                reason: format!("rows {rows} / batch {batch}, width {d} / heads {heads}"),
            });
        }
        let t = rows / batch;
        let dh = d / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let (qd, kd, vd) = (qv.data(), kv.data(), vv.data());
        let mut probs = vec![0.0; batch * heads * t * t];
        let mut out = vec![0.0; rows * d];
        let mut scores = vec![0.0; t];
        for b in 0..batch {
            for h in 0..heads {
                let col = h * dh;
                for i in 0..t {
                    let qi = &qd[(b * t + i) * d + col..(b * t + i) * d + col + dh];
                    let jmax = if causal { i + 1 } else { t };
                    for (j, s) in scores[..jmax].iter_mut().enumerate() {
                        let kj = &kd[(b * t + j) * d + col..(b * t + j) * d + col + dh];
                        *s = qi.iter().zip(kj).fold(0.0, |a, (x, y)| a + x * y) * scale;
                    }
                    let base = ((b * heads + h) * t + i) * t;
                    softmax_row(&scores[..jmax], None, &mut probs[base..base + jmax])
                        .map_err(|_| DiffError::NonFinite { op: "attention" })?;
                    let orow = &mut out[(b * t + i) * d + col..(b * t + i) * d + col + dh];
                    for j in 0..jmax {
                        let p = probs[base + j];
                        let vj = &vd[(b * t + j) * d + col..(b * t + j) * d + col + dh];
                        for (o, x) in orow.iter_mut().zip(vj) {
                            *o += p * x;
                        }
                    }
                }
            }
        }
        let out = Tensor::new(vec![rows, d], out)?;
        let ng = self.ng(q) || self.ng(k) || self.ng(v);
        self.push(
            out,
            Op::Attention {
                q,
                k,
                v,
                batch,
                heads,
                causal,
                probs,
            },
            ng,
        )
    }

    /// Stacks `reps` copies of `x` along the first axis.
    pub fn tile_rows(&mut self, x: Var, reps: usize) -> Result<Var> {
        let xv = self.value(x);
        if reps == 0 {
            return Err(DiffError::Invalid {
                op: "tile_rows",
                reason: "reps must be positive".into(),
            });
        }
        let mut shape = xv.shape().to_vec();
        shape[0] *= reps;
        let data = xv.data().repeat(reps);
        let out = Tensor::new(shape, data)?;
        let ng = self.ng(x);
        self.push(out, Op::TileRows(x, reps), ng)
    }

    /// For `x: [batch·T × D]`, stacks the per-sequence products `X_bᵀ·X_b`
    /// into a `[batch·D × D]` array.
    pub fn batched_gram(&mut self, x: Var, batch: usize) -> Result<Var> {
        let xv = self.value(x);
        let (rows, d) = match xv.shape() {
            [r, c] => (*r, *c),
            s => {
                return Err(DiffError::Invalid {
                    op: "batched_gram",
                    reason: format!("expected 2-D input, got {s:?}"),
                })
            }
        };
        if batch == 0 || rows % batch != 0 {
            return Err(DiffError::Invalid {
                op: "batched_gram",
                reason: format!("{rows} rows do not split into {batch} sequences"),
            });
        }
        let t = rows / batch;
        let mut out = vec![0.0; batch * d * d];
        for b in 0..batch {
            let xb = &xv.data()[b * t * d..(b + 1) * t * d];
            gemm_tn_acc(xb, xb, &mut out[b * d * d..(b + 1) * d * d], t, d, d);
        }
        let out = Tensor::new(vec![batch * d, d], out)?;
        let ng = self.ng(x);
        self.push(out, Op::BatchedGram(x, batch), ng)
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(x).clone().reshape(shape)?;
        let ng = self.ng(x);
        self.push(out, Op::Reshape(x), ng)
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let out = Tensor::scalar(self.value(x).sum());
        let ng = self.ng(x);
        self.push(out, Op::Sum(x), ng)
    }

    pub fn sum_squares(&mut self, x: Var) -> Result<Var> {
        let out = Tensor::scalar(self.value(x).sum_squares());
        let ng = self.ng(x);
        self.push(out, Op::SumSquares(x), ng)
    }

    /// Reverse-mode sweep from a scalar `root`. Parameters the root does not
    /// depend on receive zero gradients.
    pub fn backward(&self, root: Var, params: &ParameterSet) -> Result<Gradients> {
        let root_shape = self.shape(root);
        if self.value(root).len() != 1 {
            return Err(DiffError::NonScalarRoot(root_shape.to_vec()));
        }
        let mut pgrads = Gradients::zeros_like(params).into_vec();
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; root.0 + 1];
        grads[root.0] = Some(vec![1.0]);

        for idx in (0..=root.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            match &node.op {
                Op::Leaf => {}
                Op::Param(p) => {
                    for (a, b) in pgrads[*p].data_mut().iter_mut().zip(&g) {
                        *a += b;
                    }
                }
                Op::MatMul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    let (m, k) = (av.shape()[0], av.shape()[1]);
                    let n = bv.shape()[1];
                    if self.ng(*a) {
                        let mut da = vec![0.0; m * k];
                        gemm_nt_acc(&g, bv.data(), &mut da, m, n, k);
                        accumulate(&mut grads, *a, da);
                    }
                    if self.ng(*b) {
                        let mut db = vec![0.0; k * n];
                        gemm_tn_acc(av.data(), &g, &mut db, m, k, n);
                        accumulate(&mut grads, *b, db);
                    }
                }
                Op::AddBias(x, b) => {
                    if self.ng(*b) {
                        let n = self.value(*b).len();
                        let mut db = vec![0.0; n];
                        for row in g.chunks(n.max(1)) {
                            for (d, v) in db.iter_mut().zip(row) {
                                *d += v;
                            }
                        }
                        accumulate(&mut grads, *b, db);
                    }
                    if self.ng(*x) {
                        accumulate(&mut grads, *x, g);
                    }
                }
                Op::Add(a, b) => {
                    if self.ng(*a) {
                        accumulate(&mut grads, *a, g.clone());
                    }
                    if self.ng(*b) {
                        accumulate(&mut grads, *b, g);
                    }
                }
                Op::Sub(a, b) => {
                    if self.ng(*b) {
                        accumulate(&mut grads, *b, g.iter().map(|v| -v).collect());
                    }
                    if self.ng(*a) {
                        accumulate(&mut grads, *a, g);
                    }
                }
                Op::Mul(a, b) => {
                    if self.ng(*a) {
                        let d = zip_with(&g, self.value(*b).data(), |x, y| x * y);
                        accumulate(&mut grads, *a, d);
                    }
                    if self.ng(*b) {
                        let d = zip_with(&g, self.value(*a).data(), |x, y| x * y);
                        accumulate(&mut grads, *b, d);
                    }
                }
                Op::Scale(x, f) => {
                    accumulate(&mut grads, *x, g.iter().map(|v| v * f).collect());
                }
                Op::MulCols(x, w) => {
                    let n = w.len().max(1);
                    let mut d = g;
                    for row in d.chunks_mut(n) {
                        for (o, wj) in row.iter_mut().zip(w) {
                            *o *= wj;
                        }
                    }
                    accumulate(&mut grads, *x, d);
                }
                Op::DivCols(x, w) => {
                    let n = w.len().max(1);
                    let mut d = g;
                    for row in d.chunks_mut(n) {
                        for (o, wj) in row.iter_mut().zip(w) {
                            *o /= wj;
                        }
                    }
                    accumulate(&mut grads, *x, d);
                }
                Op::MulConst(x, c) => {
                    accumulate(&mut grads, *x, zip_with(&g, c.data(), |a, b| a * b));
                }
                Op::Gelu(x) => {
                    let d = zip_with(&g, self.value(*x).data(), |gv, v| {
                        let u = GELU_C * (v + GELU_K * v * v * v);
                        let th = u.tanh();
                        let du = GELU_C * (1.0 + 3.0 * GELU_K * v * v);
                        gv * (0.5 * (1.0 + th) + 0.5 * v * (1.0 - th * th) * du)
                    });
                    accumulate(&mut grads, *x, d);
                }
                Op::Tanh(x) => {
                    let d = zip_with(&g, node.value.data(), |gv, y| gv * (1.0 - y * y));
                    accumulate(&mut grads, *x, d);
                }
                Op::LayerNorm {
                    x,
                    gain,
                    bias,
                    xhat,
                    inv_std,
                } => {
                    let gv = self.value(*gain).data();
                    let n = gv.len();
                    if self.ng(*gain) {
                        let mut dg = vec![0.0; n];
                        for (grow, xrow) in g.chunks(n).zip(xhat.chunks(n)) {
                            for j in 0..n {
                                dg[j] += grow[j] * xrow[j];
                            }
                        }
                        accumulate(&mut grads, *gain, dg);
                    }
                    if self.ng(*bias) {
                        let mut db = vec![0.0; n];
                        for grow in g.chunks(n) {
                            for j in 0..n {
                                db[j] += grow[j];
                            }
                        }
                        accumulate(&mut grads, *bias, db);
                    }
                    if self.ng(*x) {
                        let mut dx = vec![0.0; g.len()];
                        let nf = n as f64;
                        for (r, inv) in inv_std.iter().enumerate() {
                            let span = r * n..(r + 1) * n;
                            let (grow, xrow) = (&g[span.clone()], &xhat[span.clone()]);
                            let mut mean_g = 0.0;
                            let mut mean_gx = 0.0;
                            for j in 0..n {
                                let gh = grow[j] * gv[j];
                                mean_g += gh;
                                mean_gx += gh * xrow[j];
                            }
                            mean_g /= nf;
                            mean_gx /= nf;
                            for j in 0..n {
                                let gh = grow[j] * gv[j];
                                dx[r * n + j] = inv * (gh - mean_g - xrow[j] * mean_gx);
                            }
                        }
                        accumulate(&mut grads, *x, dx);
                    }
                }
                Op::Softmax(x) => {
                    let y = node.value.data();
                    let n = node.value.cols();
                    let mut dx = vec![0.0; y.len()];
                    for ((yr, gr), dr) in y.chunks(n).zip(g.chunks(n)).zip(dx.chunks_mut(n)) {
                        let dot = yr.iter().zip(gr).fold(0.0, |a, (p, q)| a + p * q);
                        for j in 0..n {
                            dr[j] = yr[j] * (gr[j] - dot);
                        }
                    }
                    accumulate(&mut grads, *x, dx);
                }
                Op::Attention {
                    q,
                    k,
                    v,
                    batch,
                    heads,
                    causal,
                    probs,
                } => {
                    let (dq, dk, dv) = self.attention_backward(
                        &g, *q, *k, *v, *batch, *heads, *causal, probs,
                    );
                    if self.ng(*q) {
                        accumulate(&mut grads, *q, dq);
                    }
                    if self.ng(*k) {
                        accumulate(&mut grads, *k, dk);
                    }
                    if self.ng(*v) {
                        accumulate(&mut grads, *v, dv);
                    }
                }
                Op::TileRows(x, reps) => {
                    let n = self.value(*x).len();
                    let mut d = vec![0.0; n];
                    for chunk in g.chunks(n.max(1)).take(*reps) {
                        for (a, b) in d.iter_mut().zip(chunk) {
                            *a += b;
                        }
                    }
                    accumulate(&mut grads, *x, d);
                }
                Op::BatchedGram(x, batch) => {
                    let xv = self.value(*x);
                    let (rows, d) = (xv.shape()[0], xv.shape()[1]);
                    let t = rows / batch;
                    let mut dx = vec![0.0; rows * d];
                    let mut sym = vec![0.0; d * d];
                    for b in 0..*batch {
                        let gb = &g[b * d * d..(b + 1) * d * d];
                        for i in 0..d {
                            for j in 0..d {
                                sym[i * d + j] = gb[i * d + j] + gb[j * d + i];
                            }
                        }
                        let xb = &xv.data()[b * t * d..(b + 1) * t * d];
                        gemm_acc(xb, &sym, &mut dx[b * t * d..(b + 1) * t * d], t, d, d);
                    }
                    accumulate(&mut grads, *x, dx);
                }
                Op::Reshape(x) => accumulate(&mut grads, *x, g),
                Op::Sum(x) => {
                    let n = self.value(*x).len();
                    accumulate(&mut grads, *x, vec![g[0]; n]);
                }
                Op::SumSquares(x) => {
                    let d = self.value(*x).data().iter().map(|v| 2.0 * v * g[0]).collect();
                    accumulate(&mut grads, *x, d);
                }
            }
        }
        Ok(Gradients::from_vec(pgrads))
    }

    #[allow(clippy::too_many_arguments)]
    fn attention_backward(
        &self,
        g: &[f64],
        q: Var,
        k: Var,
        v: Var,
        batch: usize,
        heads: usize,
        causal: bool,
        probs: &[f64],
    ) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let (qv, kv, vv) = (self.value(q), self.value(k), self.value(v));
        let (rows, d) = (qv.shape()[0], qv.shape()[1]);
        let t = rows / batch;
        let dh = d / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let (qd, kd, vd) = (qv.data(), kv.data(), vv.data());
        let mut dq = vec![0.0; rows * d];
        let mut dk = vec![0.0; rows * d];
        let mut dv = vec![0.0; rows * d];
        let mut ds = vec![0.0; t];
        for b in 0..batch {
            for h in 0..heads {
                let col = h * dh;
                for i in 0..t {
                    let jmax = if causal { i + 1 } else { t };
                    let base = ((b * heads + h) * t + i) * t;
                    let p = &probs[base..base + jmax];
                    let gi = &g[(b * t + i) * d + col..(b * t + i) * d + col + dh];
                    let mut dot = 0.0;
                    for j in 0..jmax {
                        let vj = &vd[(b * t + j) * d + col..(b * t + j) * d + col + dh];
                        let dp = gi.iter().zip(vj).fold(0.0, |a, (x, y)| a + x * y);
                        ds[j] = dp;
                        dot += p[j] * dp;
                    }
                    for j in 0..jmax {
                        ds[j] = p[j] * (ds[j] - dot) * scale;
                    }
                    let qi = &qd[(b * t + i) * d + col..(b * t + i) * d + col + dh];
                    for j in 0..jmax {
                        let rj = (b * t + j) * d + col;
                        let kj = &kd[rj..rj + dh];
                        let dqi = &mut dq[(b * t + i) * d + col..(b * t + i) * d + col + dh];
                        for (o, x) in dqi.iter_mut().zip(kj) {
                            *o += ds[j] * x;
                        }
                        for c in 0..dh {
                            dk[rj + c] += ds[j] * qi[c];
                            dv[rj + c] += p[j] * gi[c];
                        }
                    }
                }
            }
        }
        (dq, dk, dv)
    }
}

fn accumulate(grads: &mut [Option<Vec<f64>>], v: Var, g: Vec<f64>) {
    match &mut grads[v.0] {
        Some(existing) => {
            for (a, b) in existing.iter_mut().zip(&g) {
                *a += b;
            }
        }
        slot @ None => *slot = Some(g),
    }
}

fn zip_with(a: &[f64], b: &[f64], f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect()
}
