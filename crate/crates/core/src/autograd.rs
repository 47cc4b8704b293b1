//! Reverse-mode automatic differentiation over a recorded operation graph.
//!
//! Every operation appends a node holding its output value; node indices are
//! therefore already a topological order and the backward sweep simply walks
//! them in reverse. Shapes are checked on every call.

use std::collections::BTreeMap;

use crate::error::{contract, Error, Result};
use crate::tensor::{gemm_acc, gemm_nt_acc, gemm_tn_acc, Tensor};

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Identifies a trainable parameter across graphs.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParamId(pub usize);

#[derive(Debug)]
enum Op {
    Leaf(Option<ParamId>),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddBias(Var, Var),
    MatMul(Var, Var),
    MatMulNT(Var, Var),
    Transpose(Var),
    ConcatCols(Vec<Var>),
    SliceCols(Var, usize),
    ConcatRows(Vec<Var>),
    SliceRows(Var, usize),
    MeanAxis(Var, usize),
    Sum(Var),
    Log(Var, f64),
    Exp(Var),
    Relu(Var),
    Softmax(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        normed: Vec<f64>,
        rstd: Vec<f64>,
    },
    Gather(Var, Vec<usize>),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Gradients of a scalar loss with respect to every registered parameter.
///
/// Parameters that are not on any path to the loss map to an all-zero tensor.
#[derive(Clone, Debug, Default)]
pub struct GradientMap {
    grads: BTreeMap<ParamId, Tensor>,
}

impl GradientMap {
    pub fn get(&self, id: ParamId) -> Option<&Tensor> {
        self.grads.get(&id)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Tensor)> {
        self.grads.iter().map(|(&k, v)| (k, v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (ParamId, &mut Tensor)> {
        self.grads.iter_mut().map(|(&k, v)| (k, v))
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    pub fn insert(&mut self, id: ParamId, grad: Tensor) {
        self.grads.insert(id, grad);
    }

    /// Euclidean norm over all entries of all gradients.
    pub fn global_norm(&self) -> f64 {
        self.grads
            .values()
            .flat_map(|t| t.data())
            .map(|x| x * x)
            .sum::<f64>()
            .sqrt()
    }
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

fn shape_err(op: &'static str, a: &Tensor, b: &Tensor) -> Error {
    Error::Shape {
        op,
        lhs: a.shape().to_vec(),
        rhs: b.shape().to_vec(),
    }
}

fn is_matrix(t: &Tensor) -> bool {
    t.shape().len() == 2
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
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

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// A leaf that never receives a gradient.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf(None), false)
    }

    /// A trainable leaf; its gradient is reported under `id` by [`Graph::backward`].
    pub fn param(&mut self, id: ParamId, t: Tensor) -> Var {
        self.push(t, Op::Leaf(Some(id)), true)
    }

    fn zip_same(&mut self, op: &'static str, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(shape_err(op, ta, tb));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        Ok(Tensor::from_vec(ta.shape(), data))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_same("add", a, b, |x, y| x + y)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_same("sub", a, b, |x, y| x - y)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Sub(a, b), rg))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_same("mul", a, b, |x, y| x * y)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Mul(a, b), rg))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        let out = self.value(a).map(|x| x * c);
        let rg = self.rg(a);
        Ok(self.push(out, Op::Scale(a, c), rg))
    }

    /// Adds a `[n]` bias to every row of an `[m×n]` matrix.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (tx, tb) = (self.value(x), self.value(bias));
        if !is_matrix(tx) || tb.shape() != [tx.cols()] {
            return Err(shape_err("add_bias", tx, tb));
        }
        let n = tx.cols();
        let mut data = tx.data().to_vec();
        for row in data.chunks_mut(n) {
            for (o, &b) in row.iter_mut().zip(tb.data()) {
                *o += b;
            }
        }
        let out = Tensor::from_vec(tx.shape(), data);
        let rg = self.rg(x) || self.rg(bias);
        Ok(self.push(out, Op::AddBias(x, bias), rg))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if !is_matrix(ta) || !is_matrix(tb) || ta.shape()[1] != tb.shape()[0] {
            return Err(shape_err("matmul", ta, tb));
        }
        let (m, k, n) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
        let mut out = vec![0.0; m * n];
        gemm_acc(ta.data(), tb.data(), &mut out, m, k, n);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::from_vec(&[m, n], out), Op::MatMul(a, b), rg))
    }

    /// `a · bᵀ` without materializing the transpose.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if !is_matrix(ta) || !is_matrix(tb) || ta.shape()[1] != tb.shape()[1] {
            return Err(shape_err("matmul_nt", ta, tb));
        }
        let (m, k, n) = (ta.shape()[0], ta.shape()[1], tb.shape()[0]);
        let mut out = vec![0.0; m * n];
        gemm_nt_acc(ta.data(), tb.data(), &mut out, m, k, n);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::from_vec(&[m, n], out), Op::MatMulNT(a, b), rg))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let ta = self.value(a);
        if !is_matrix(ta) {
            return Err(shape_err("transpose", ta, ta));
        }
        let (m, n) = (ta.shape()[0], ta.shape()[1]);
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = ta.data()[i * n + j];
            }
        }
        let rg = self.rg(a);
        Ok(self.push(Tensor::from_vec(&[n, m], out), Op::Transpose(a), rg))
    }

    /// Concatenates matrices with equal row counts along the last axis.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        contract!(!parts.is_empty(), "concat_cols of zero tensors");
        let first = self.value(parts[0]);
        let m = first.rows();
        for &p in parts {
            let t = self.value(p);
            if !is_matrix(t) || t.rows() != m {
                return Err(shape_err("concat_cols", first, t));
            }
        }
        let total: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut out = Vec::with_capacity(m * total);
        for i in 0..m {
            for &p in parts {
                out.extend_from_slice(self.value(p).row(i));
            }
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(Tensor::from_vec(&[m, total], out), Op::ConcatCols(parts.to_vec()), rg))
    }

    /// Columns `start..start + len` of a matrix.
    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let ta = self.value(a);
        if !is_matrix(ta) || len == 0 || start + len > ta.cols() {
            return Err(Error::Shape {
                op: "slice_cols",
                lhs: ta.shape().to_vec(),
                rhs: vec![start, len],
            });
        }
        let out: Vec<f64> = (0..ta.rows())
            .flat_map(|i| ta.row(i)[start..start + len].iter().copied())
            .collect();
        let out = Tensor::from_vec(&[ta.rows(), len], out);
        let rg = self.rg(a);
        Ok(self.push(out, Op::SliceCols(a, start), rg))
    }

    /// Splits the last axis into `parts` equal pieces.
    pub fn split_cols(&mut self, a: Var, parts: usize) -> Result<Vec<Var>> {
        let cols = self.value(a).cols();
        if parts == 0 || !cols.is_multiple_of(parts) {
            return Err(Error::Shape {
                op: "split_cols",
                lhs: self.value(a).shape().to_vec(),
                rhs: vec![parts],
            });
        }
        let w = cols / parts;
        (0..parts).map(|i| self.slice_cols(a, i * w, w)).collect()
    }

    /// Stacks matrices with equal column counts.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        contract!(!parts.is_empty(), "concat_rows of zero tensors");
        let first = self.value(parts[0]);
        let n = first.cols();
        let mut rows = 0;
        for &p in parts {
            let t = self.value(p);
            if !is_matrix(t) || t.cols() != n {
                return Err(shape_err("concat_rows", first, t));
            }
            rows += t.rows();
        }
        let mut out = Vec::with_capacity(rows * n);
        for &p in parts {
            out.extend_from_slice(self.value(p).data());
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(Tensor::from_vec(&[rows, n], out), Op::ConcatRows(parts.to_vec()), rg))
    }

    /// Rows `start..start + len` of a matrix.
    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let ta = self.value(a);
        if !is_matrix(ta) || len == 0 || start + len > ta.rows() {
            return Err(Error::Shape {
                op: "slice_rows",
                lhs: ta.shape().to_vec(),
                rhs: vec![start, len],
            });
        }
        let n = ta.cols();
        let out = Tensor::from_vec(&[len, n], ta.data()[start * n..(start + len) * n].to_vec());
        let rg = self.rg(a);
        Ok(self.push(out, Op::SliceRows(a, start), rg))
    }

    /// Mean of a matrix over `axis` (0 = down columns, 1 = along rows).
    pub fn mean_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        let ta = self.value(a);
        if !is_matrix(ta) || axis > 1 {
            return Err(Error::Shape {
                op: "mean_axis",
                lhs: ta.shape().to_vec(),
                rhs: vec![axis],
            });
        }
        let (m, n) = (ta.shape()[0], ta.shape()[1]);
        let out = if axis == 0 {
            let mut acc = vec![0.0; n];
            for i in 0..m {
                for (o, &x) in acc.iter_mut().zip(ta.row(i)) {
                    *o += x;
                }
            }
            acc.iter().map(|s| s / m as f64).collect::<Vec<_>>()
        } else {
            (0..m)
                .map(|i| ta.row(i).iter().sum::<f64>() / n as f64)
                .collect()
        };
        let len = out.len();
        let rg = self.rg(a);
        Ok(self.push(Tensor::from_vec(&[len], out), Op::MeanAxis(a, axis), rg))
    }

    /// Sum of all entries, as a `[1]` tensor.
    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s = self.value(a).data().iter().sum();
        let rg = self.rg(a);
        Ok(self.push(Tensor::scalar(s), Op::Sum(a), rg))
    }

    /// Mean of all entries.
    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let n = self.value(a).len() as f64;
        let s = self.sum(a)?;
        self.scale(s, 1.0 / n)
    }

    /// Natural log; non-positive input is a contract error.
    pub fn log(&mut self, a: Var) -> Result<Var> {
        contract!(
            self.value(a).data().iter().all(|&x| x > 0.0),
            "log of non-positive value"
        );
        self.log_floor(a, 0.0)
    }

    /// `ln(max(x, floor))`; the gradient is zero where the floor is active.
    pub fn log_floor(&mut self, a: Var, floor: f64) -> Result<Var> {
        let out = self.value(a).map(|x| x.max(floor).ln());
        let rg = self.rg(a);
        Ok(self.push(out, Op::Log(a, floor), rg))
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).map(f64::exp);
        let rg = self.rg(a);
        Ok(self.push(out, Op::Exp(a), rg))
    }

    /// `max(0, x)` with subgradient 0 at the origin.
    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).map(|x| if x > 0.0 { x } else { 0.0 });
        let rg = self.rg(a);
        Ok(self.push(out, Op::Relu(a), rg))
    }

    /// Row-wise softmax with max subtraction.
    pub fn softmax_rows(&mut self, a: Var) -> Result<Var> {
        let ta = self.value(a);
        let n = ta.cols();
        let mut out = ta.data().to_vec();
        for row in out.chunks_mut(n) {
            softmax_in_place(row);
        }
        let out = Tensor::from_vec(ta.shape(), out);
        let rg = self.rg(a);
        Ok(self.push(out, Op::Softmax(a), rg))
    }

    /// Per-row normalization with population variance, then `· gamma + beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        contract!(eps > 0.0, "layer_norm eps must be positive, got {eps}");
        let (tx, tg, tb) = (self.value(x), self.value(gamma), self.value(beta));
        let d = tx.cols();
        if !is_matrix(tx) || tg.shape() != [d] {
            return Err(shape_err("layer_norm", tx, tg));
        }
        if tb.shape() != [d] {
            return Err(shape_err("layer_norm", tx, tb));
        }
        let m = tx.rows();
        let mut normed = vec![0.0; m * d];
        let mut rstd = vec![0.0; m];
        let mut out = vec![0.0; m * d];
        for i in 0..m {
            let row = tx.row(i);
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let r = 1.0 / (var + eps).sqrt();
            rstd[i] = r;
            for j in 0..d {
                let xh = (row[j] - mean) * r;
                normed[i * d + j] = xh;
                out[i * d + j] = xh * tg.data()[j] + tb.data()[j];
            }
        }
        let out = Tensor::from_vec(&[m, d], out);
        let rg = self.rg(x) || self.rg(gamma) || self.rg(beta);
        Ok(self.push(
            out,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                normed,
                rstd,
            },
            rg,
        ))
    }

    /// Rows of `table` selected by `ids`, as an `[ids.len() × d]` matrix.
    pub fn gather_rows(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let t = self.value(table);
        if !is_matrix(t) {
            return Err(shape_err("gather_rows", t, t));
        }
        contract!(!ids.is_empty(), "gather_rows with no ids");
        let vocab = t.rows();
        if let Some(&id) = ids.iter().find(|&&id| id >= vocab) {
            return Err(Error::Vocab {
                id,
                vocab_size: vocab,
            });
        }
        let d = t.cols();
        let mut out = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            out.extend_from_slice(t.row(id));
        }
        let out = Tensor::from_vec(&[ids.len(), d], out);
        let rg = self.rg(table);
        Ok(self.push(out, Op::Gather(table, ids.to_vec()), rg))
    }

    /// Reverse sweep from a scalar `loss`.
    ///
    /// Gradient buffers are created fresh for every call, so calling this twice
    /// returns the same map rather than doubling it.
    pub fn backward(&self, loss: Var) -> Result<GradientMap> {
        contract!(
            self.value(loss).len() == 1,
            "backward needs a scalar loss, got shape {:?}",
            self.value(loss).shape()
        );
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);
        let mut out = GradientMap::default();

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if let Op::Leaf(Some(id)) = node.op {
                let g = grads[i]
                    .take()
                    .unwrap_or_else(|| vec![0.0; node.value.len()]);
                let g = Tensor::from_vec(node.value.shape(), g);
                match out.grads.get_mut(&id) {
                    Some(prev) => {
                        for (p, x) in prev.data_mut().iter_mut().zip(g.data()) {
                            *p += x;
                        }
                    }
                    None => {
                        out.grads.insert(id, g);
                    }
                }
                continue;
            }
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backprop(node, &g, &mut grads);
        }
        Ok(out)
    }

    fn backprop(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let nodes = &self.nodes;

        match &node.op {
            Op::Leaf(_) => {}
            Op::Add(a, b) => {
                if let Some(ga) = acc(nodes, grads, *a) {
                    axpy(ga, g, 1.0);
                }
                if let Some(gb) = acc(nodes, grads, *b) {
                    axpy(gb, g, 1.0);
                }
            }
            Op::Sub(a, b) => {
                if let Some(ga) = acc(nodes, grads, *a) {
                    axpy(ga, g, 1.0);
                }
                if let Some(gb) = acc(nodes, grads, *b) {
                    axpy(gb, g, -1.0);
                }
            }
            Op::Mul(a, b) => {
                let (va, vb) = (nodes[a.0].value.data(), nodes[b.0].value.data());
                if let Some(ga) = acc(nodes, grads, *a) {
                    for ((o, &gi), &y) in ga.iter_mut().zip(g).zip(vb) {
                        *o += gi * y;
                    }
                }
                if let Some(gb) = acc(nodes, grads, *b) {
                    for ((o, &gi), &x) in gb.iter_mut().zip(g).zip(va) {
                        *o += gi * x;
                    }
                }
            }
            Op::Scale(a, c) => {
                if let Some(ga) = acc(nodes, grads, *a) {
                    axpy(ga, g, *c);
                }
            }
            Op::AddBias(x, b) => {
                if let Some(gx) = acc(nodes, grads, *x) {
                    axpy(gx, g, 1.0);
                }
                if let Some(gb) = acc(nodes, grads, *b) {
                    let n = gb.len();
                    for row in g.chunks(n) {
                        for (o, &gi) in gb.iter_mut().zip(row) {
                            *o += gi;
                        }
                    }
                }
            }
            Op::MatMul(a, b) => {
                let (ta, tb) = (&nodes[a.0].value, &nodes[b.0].value);
                let (m, k, n) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
                if let Some(ga) = acc(nodes, grads, *a) {
                    // dA = dC · Bᵀ
                    gemm_nt_acc(g, tb.data(), ga, m, n, k);
                }
                if let Some(gb) = acc(nodes, grads, *b) {
                    // dB = Aᵀ · dC
                    gemm_tn_acc(ta.data(), g, gb, m, k, n);
                }
            }
            Op::MatMulNT(a, b) => {
                let (ta, tb) = (&nodes[a.0].value, &nodes[b.0].value);
                let (m, k, n) = (ta.shape()[0], ta.shape()[1], tb.shape()[0]);
                if let Some(ga) = acc(nodes, grads, *a) {
                    // C = A·Bᵀ: dA = dC · B
                    gemm_acc(g, tb.data(), ga, m, n, k);
                }
                if let Some(gb) = acc(nodes, grads, *b) {
                    // dB = dCᵀ · A
                    gemm_tn_acc(g, ta.data(), gb, m, n, k);
                }
            }
            Op::Transpose(a) => {
                let ta = &nodes[a.0].value;
                let (m, n) = (ta.shape()[0], ta.shape()[1]);
                if let Some(ga) = acc(nodes, grads, *a) {
                    for i in 0..m {
                        for j in 0..n {
                            ga[i * n + j] += g[j * m + i];
                        }
                    }
                }
            }
            Op::ConcatCols(parts) => {
                let total = node.value.cols();
                let mut offset = 0;
                for p in parts {
                    let w = nodes[p.0].value.cols();
                    if let Some(gp) = acc(nodes, grads, *p) {
                        for (i, row) in gp.chunks_mut(w).enumerate() {
                            let src = &g[i * total + offset..i * total + offset + w];
                            for (o, &s) in row.iter_mut().zip(src) {
                                *o += s;
                            }
                        }
                    }
                    offset += w;
                }
            }
            Op::SliceCols(a, start) => {
                let full = nodes[a.0].value.cols();
                let w = node.value.cols();
                if let Some(ga) = acc(nodes, grads, *a) {
                    for (i, row) in g.chunks(w).enumerate() {
                        let dst = &mut ga[i * full + start..i * full + start + w];
                        for (o, &s) in dst.iter_mut().zip(row) {
                            *o += s;
                        }
                    }
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for p in parts {
                    let len = nodes[p.0].value.len();
                    if let Some(gp) = acc(nodes, grads, *p) {
                        axpy(gp, &g[offset..offset + len], 1.0);
                    }
                    offset += len;
                }
            }
            Op::SliceRows(a, start) => {
                let n = node.value.cols();
                if let Some(ga) = acc(nodes, grads, *a) {
                    axpy(&mut ga[start * n..start * n + g.len()], g, 1.0);
                }
            }
            Op::MeanAxis(a, axis) => {
                let ta = &nodes[a.0].value;
                let (m, n) = (ta.shape()[0], ta.shape()[1]);
                if let Some(ga) = acc(nodes, grads, *a) {
                    for i in 0..m {
                        for j in 0..n {
                            ga[i * n + j] += if *axis == 0 {
                                g[j] / m as f64
                            } else {
                                g[i] / n as f64
                            };
                        }
                    }
                }
            }
            Op::Sum(a) => {
                if let Some(ga) = acc(nodes, grads, *a) {
                    for o in ga.iter_mut() {
                        *o += g[0];
                    }
                }
            }
            Op::Log(a, floor) => {
                let va = nodes[a.0].value.data();
                if let Some(ga) = acc(nodes, grads, *a) {
                    for ((o, &gi), &x) in ga.iter_mut().zip(g).zip(va) {
                        if x > *floor {
                            *o += gi / x;
                        }
                    }
                }
            }
            Op::Exp(a) => {
                let y = node.value.data();
                if let Some(ga) = acc(nodes, grads, *a) {
                    for ((o, &gi), &yi) in ga.iter_mut().zip(g).zip(y) {
                        *o += gi * yi;
                    }
                }
            }
            Op::Relu(a) => {
                let va = nodes[a.0].value.data();
                if let Some(ga) = acc(nodes, grads, *a) {
                    for ((o, &gi), &x) in ga.iter_mut().zip(g).zip(va) {
                        if x > 0.0 {
                            *o += gi;
                        }
                    }
                }
            }
            Op::Softmax(a) => {
                let y = node.value.data();
                let n = node.value.cols();
                if let Some(ga) = acc(nodes, grads, *a) {
                    for ((grow, yrow), orow) in g.chunks(n).zip(y.chunks(n)).zip(ga.chunks_mut(n)) {
                        let dot: f64 = grow.iter().zip(yrow).map(|(a, b)| a * b).sum();
                        for ((o, &gi), &yi) in orow.iter_mut().zip(grow).zip(yrow) {
                            *o += yi * (gi - dot);
                        }
                    }
                }
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                normed,
                rstd,
            } => {
                let d = node.value.cols();
                let gam = nodes[gamma.0].value.data();
                if let Some(gb) = acc(nodes, grads, *beta) {
                    for row in g.chunks(d) {
                        axpy(gb, row, 1.0);
                    }
                }
                if let Some(gg) = acc(nodes, grads, *gamma) {
                    for (row, xh) in g.chunks(d).zip(normed.chunks(d)) {
                        for j in 0..d {
                            gg[j] += row[j] * xh[j];
                        }
                    }
                }
                if let Some(gx) = acc(nodes, grads, *x) {
                    let mut dxh = vec![0.0; d];
                    for (i, (row, xh)) in g.chunks(d).zip(normed.chunks(d)).enumerate() {
                        for j in 0..d {
                            dxh[j] = row[j] * gam[j];
                        }
                        let sum_d: f64 = dxh.iter().sum();
                        let sum_dx: f64 = dxh.iter().zip(xh).map(|(a, b)| a * b).sum();
                        let scale = rstd[i] / d as f64;
                        for j in 0..d {
                            gx[i * d + j] += scale * (d as f64 * dxh[j] - sum_d - xh[j] * sum_dx);
                        }
                    }
                }
            }
            Op::Gather(table, ids) => {
                let d = node.value.cols();
                if let Some(gt) = acc(nodes, grads, *table) {
                    for (row, &id) in g.chunks(d).zip(ids) {
                        axpy(&mut gt[id * d..(id + 1) * d], row, 1.0);
                    }
                }
            }
        }
    }
}

/// Accumulator of `v`, or None when it does not need a gradient.
fn acc<'a>(nodes: &[Node], grads: &'a mut [Option<Vec<f64>>], v: Var) -> Option<&'a mut Vec<f64>> {
    let n = &nodes[v.0];
    if !n.requires_grad {
        return None;
    }
    Some(grads[v.0].get_or_insert_with(|| vec![0.0; n.value.len()]))
}

fn axpy(dst: &mut [f64], src: &[f64], c: f64) {
    for (o, &s) in dst.iter_mut().zip(src) {
        *o += c * s;
    }
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for x in row.iter_mut() {
        *x = (*x - max).exp();
        total += *x;
    }
    for x in row.iter_mut() {
        *x /= total;
    }
}
