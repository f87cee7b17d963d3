//! Reverse-mode differentiation over a linear tape.
//!
//! Operations append nodes in execution order, so node inputs always
//! precede the node itself. [`Tape::backward`] walks the nodes in reverse
//! and accumulates gradients only into nodes that require them; a node
//! requires a gradient when any of its inputs does.

use crate::error::{Error, Result};

use super::kernels::{self, log_sum_exp, matmul_raw, sigmoid, softmax_in_place, transpose_raw};
use super::Tensor;

/// Handle to a node recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Linear(Var, Var),
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Silu(Var),
    Sum(Var),
    SoftmaxRows(Var),
    RmsNorm {
        x: Var,
        gain: Var,
        inv_rms: Vec<f64>,
    },
    Rope {
        x: Var,
        head_dim: usize,
        start: usize,
        theta: f64,
    },
    CausalAttention {
        q: Var,
        k: Var,
        v: Var,
        n_heads: usize,
        probs: Vec<f64>,
    },
    Embedding {
        table: Var,
        ids: Vec<usize>,
    },
    Row {
        x: Var,
        index: usize,
    },
    ConcatRows(Vec<Var>),
    WeightedCrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        weights: Vec<f64>,
        probs: Vec<f64>,
        total_weight: f64,
    },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul(..) => "matmul",
            Op::Linear(..) => "linear",
            Op::Add(..) => "add",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::Silu(..) => "silu",
            Op::Sum(..) => "sum",
            Op::SoftmaxRows(..) => "softmax_rows",
            Op::RmsNorm { .. } => "rmsnorm",
            Op::Rope { .. } => "rope",
            Op::CausalAttention { .. } => "causal_attention",
            Op::Embedding { .. } => "embedding",
            Op::Row { .. } => "row",
            Op::ConcatRows(..) => "concat_rows",
            Op::WeightedCrossEntropy { .. } => "weighted_cross_entropy",
        }
    }
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
    grad: Option<Tensor>,
}

/// Ordered record of the operations of one forward pass.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records an input tensor. Only leaves created with
    /// `requires_grad = true` (and nodes derived from them) receive
    /// gradients.
    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Gradient accumulated by the last [`Tape::backward`] call, if any.
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.nodes[v.0].grad.as_ref()
    }

    pub fn take_grad(&mut self, v: Var) -> Option<Tensor> {
        self.nodes[v.0].grad.take()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    fn record(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Result<Var> {
        let value = value.ensure_finite(op.name())?;
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        Ok(self.push(value, op, requires_grad))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = kernels::matmul(self.value(a), self.value(b))?;
        self.record(out, Op::MatMul(a, b), &[a, b])
    }

    /// `x · wᵀ` with `w` stored as `[out × in]`.
    pub fn linear(&mut self, x: Var, w: Var) -> Result<Var> {
        let out = kernels::linear(self.value(x), self.value(w))?;
        self.record(out, Op::Linear(x, w), &[x, w])
    }

    fn same_shape(&self, a: Var, b: Var, op: &str) -> Result<()> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(Error::dim(format!(
                "{op} of {sa:?} and {sb:?}: shapes differ"
            )));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let (ta, tb) = (self.value(a), self.value(b));
        let data = ta
            .data()
            .iter()
            .zip(tb.data())
            .map(|(x, y)| x + y)
            .collect();
        let out = Tensor::from_parts(ta.shape().to_vec(), data);
        self.record(out, Op::Add(a, b), &[a, b])
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let (ta, tb) = (self.value(a), self.value(b));
        let data = ta
            .data()
            .iter()
            .zip(tb.data())
            .map(|(x, y)| x * y)
            .collect();
        let out = Tensor::from_parts(ta.shape().to_vec(), data);
        self.record(out, Op::Mul(a, b), &[a, b])
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Result<Var> {
        let ta = self.value(a);
        let data = ta.data().iter().map(|x| x * factor).collect();
        let out = Tensor::from_parts(ta.shape().to_vec(), data);
        self.record(out, Op::Scale(a, factor), &[a])
    }

    pub fn silu(&mut self, x: Var) -> Result<Var> {
        let out = kernels::silu(self.value(x))?;
        self.record(out, Op::Silu(x), &[x])
    }

    /// Sum of all entries as a one-element tensor.
    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let out = Tensor::from_parts(vec![1], vec![self.value(x).sum()]);
        self.record(out, Op::Sum(x), &[x])
    }

    pub fn softmax_rows(&mut self, x: Var) -> Result<Var> {
        let out = kernels::softmax_rows(self.value(x))?;
        self.record(out, Op::SoftmaxRows(x), &[x])
    }

    pub fn rmsnorm(&mut self, x: Var, gain: Var, eps: f64) -> Result<Var> {
        let (out, inv_rms) = kernels::rmsnorm_with_stats(self.value(x), self.value(gain), eps)?;
        self.record(out, Op::RmsNorm { x, gain, inv_rms }, &[x, gain])
    }

    /// Rotary embedding over a `[seq × (heads·head_dim)]` matrix: row `i`
    /// sits at position `start + i` and each head slice is rotated
    /// independently.
    pub fn rope(&mut self, x: Var, head_dim: usize, start: usize, theta: f64) -> Result<Var> {
        kernels::check_rope_dims(head_dim, theta)?;
        let tx = self.value(x);
        let (_, width) = tx.dims2()?;
        if head_dim == 0 || width % head_dim != 0 {
            return Err(Error::dim(format!(
                "rope head dimension {head_dim} does not divide width {width}"
            )));
        }
        let mut data = tx.data().to_vec();
        for (i, row) in data.chunks_mut(width).enumerate() {
            for head in row.chunks_mut(head_dim) {
                kernels::rotate_pairs(head, start + i, theta, 1.0);
            }
        }
        let out = Tensor::from_parts(tx.shape().to_vec(), data);
        self.record(
            out,
            Op::Rope {
                x,
                head_dim,
                start,
                theta,
            },
            &[x],
        )
    }

    /// Multi-head scaled dot-product attention with a causal mask.
    /// `q`, `k` and `v` are `[seq × width]` with `width = n_heads · head_dim`.
    pub fn causal_attention(&mut self, q: Var, k: Var, v: Var, n_heads: usize) -> Result<Var> {
        self.same_shape(q, k, "attention")?;
        self.same_shape(q, v, "attention")?;
        let (n, width) = self.value(q).dims2()?;
        if n_heads == 0 || width % n_heads != 0 {
            return Err(Error::dim(format!(
                "{n_heads} heads do not divide attention width {width}"
            )));
        }
        let hd = width / n_heads;
        let scale = 1.0 / (hd as f64).sqrt();
        let (tq, tk, tv) = (
            self.value(q).data(),
            self.value(k).data(),
            self.value(v).data(),
        );
        let mut probs = vec![0.0; n_heads * n * n];
        let mut out = vec![0.0; n * width];
        for h in 0..n_heads {
            let off = h * hd;
            let p = &mut probs[h * n * n..(h + 1) * n * n];
            for i in 0..n {
                let qi = &tq[i * width + off..i * width + off + hd];
                let row = &mut p[i * n..i * n + i + 1];
                for (j, s) in row.iter_mut().enumerate() {
                    let kj = &tk[j * width + off..j * width + off + hd];
                    *s = qi.iter().zip(kj).map(|(a, b)| a * b).sum::<f64>() * scale;
                }
                softmax_in_place(row);
                let oi = &mut out[i * width + off..i * width + off + hd];
                for (j, &pij) in row.iter().enumerate() {
                    let vj = &tv[j * width + off..j * width + off + hd];
                    for (o, &vv) in oi.iter_mut().zip(vj) {
                        *o += pij * vv;
                    }
                }
            }
        }
        let out = Tensor::from_parts(vec![n, width], out);
        self.record(
            out,
            Op::CausalAttention {
                q,
                k,
                v,
                n_heads,
                probs,
            },
            &[q, k, v],
        )
    }

    /// Gathers rows of `table` (`[vocab × d]`) for each id.
    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let t = self.value(table);
        let (rows, d) = t.dims2()?;
        if ids.is_empty() {
            return Err(Error::contract("embedding lookup of an empty id sequence"));
        }
        if let Some(&bad) = ids.iter().find(|&&id| id >= rows) {
            return Err(Error::data(format!(
                "token id {bad} is outside the embedding table of {rows} rows"
            )));
        }
        let mut data = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            data.extend_from_slice(t.row(id));
        }
        let out = Tensor::from_parts(vec![ids.len(), d], data);
        self.record(
            out,
            Op::Embedding {
                table,
                ids: ids.to_vec(),
            },
            &[table],
        )
    }

    /// Selects row `index` of a matrix as a `[1 × cols]` matrix.
    pub fn row(&mut self, x: Var, index: usize) -> Result<Var> {
        let t = self.value(x);
        let (rows, cols) = t.dims2()?;
        if index >= rows {
            return Err(Error::dim(format!("row {index} of a {rows}-row matrix")));
        }
        let out = Tensor::from_parts(vec![1, cols], t.row(index).to_vec());
        self.record(out, Op::Row { x, index }, &[x])
    }

    /// Stacks matrices with equal column counts vertically.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::contract("concat_rows of nothing"))?;
        let (_, cols) = self.value(first).dims2()?;
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let (r, c) = self.value(p).dims2()?;
            if c != cols {
                return Err(Error::dim(format!(
                    "concat_rows: {c} columns where {cols} expected"
                )));
            }
            rows += r;
            data.extend_from_slice(self.value(p).data());
        }
        let out = Tensor::from_parts(vec![rows, cols], data);
        self.record(out, Op::ConcatRows(parts.to_vec()), parts)
    }

    /// Class-weighted cross-entropy averaged by the total weight of the
    /// targets: `Σₙ −w[yₙ]·log softmax(xₙ)[yₙ] / Σₙ w[yₙ]`.
    pub fn weighted_cross_entropy(
        &mut self,
        logits: Var,
        targets: &[usize],
        weights: &[f64],
    ) -> Result<Var> {
        let x = self.value(logits);
        let (n, c) = x.dims2()?;
        check_cross_entropy_args(n, c, targets, weights)?;
        let mut probs = x.data().to_vec();
        let mut loss = 0.0;
        let mut total_weight = 0.0;
        for (i, &y) in targets.iter().enumerate() {
            let row = &mut probs[i * c..(i + 1) * c];
            let lse = log_sum_exp(row);
            loss += weights[y] * (lse - row[y]);
            total_weight += weights[y];
            softmax_in_place(row);
        }
        if total_weight <= 0.0 {
            return Err(Error::data(
                "degenerate class weights: the targets carry zero total weight",
            ));
        }
        let out = Tensor::from_parts(vec![1], vec![loss / total_weight]);
        self.record(
            out,
            Op::WeightedCrossEntropy {
                logits,
                targets: targets.to_vec(),
                weights: weights.to_vec(),
                probs,
                total_weight,
            },
            &[logits],
        )
    }

    /// Populates gradients of `loss` with respect to every node that
    /// requires one. Gradients from a previous call are discarded.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let node = &self.nodes[loss.0];
        if node.value.len() != 1 {
            return Err(Error::contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                node.value.shape()
            )));
        }
        if matches!(node.op, Op::Leaf) || !node.requires_grad {
            return Err(Error::EmptyTape(
                "loss is not connected to any recorded operation on a trainable tensor".into(),
            ));
        }
        for n in &mut self.nodes {
            n.grad = None;
        }
        self.nodes[loss.0].grad = Some(Tensor::from_parts(
            node_shape(&self.nodes[loss.0]),
            vec![1.0],
        ));

        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad || matches!(self.nodes[i].op, Op::Leaf) {
                continue;
            }
            let Some(upstream) = self.nodes[i].grad.take() else {
                continue;
            };
            let contributions = self.input_grads(i, &upstream)?;
            self.nodes[i].grad = Some(upstream);
            for (input, g) in contributions {
                self.accumulate(input, g)?;
            }
        }
        Ok(())
    }

    fn accumulate(&mut self, v: Var, g: Vec<f64>) -> Result<()> {
        let node = &mut self.nodes[v.0];
        if !node.requires_grad {
            return Ok(());
        }
        if g.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite { op: "backward" });
        }
        match &mut node.grad {
            Some(existing) => {
                for (e, x) in existing.data_mut().iter_mut().zip(&g) {
                    *e += x;
                }
            }
            None => node.grad = Some(Tensor::from_parts(node.value.shape().to_vec(), g)),
        }
        Ok(())
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Gradient contributions of node `i` to each of its inputs.
    fn input_grads(&self, i: usize, upstream: &Tensor) -> Result<Vec<(Var, Vec<f64>)>> {
        let node = &self.nodes[i];
        let dy = upstream.data();
        let mut out = Vec::new();
        match &node.op {
            Op::Leaf => {}
            &Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(a), self.value(b));
                let (m, n) = ta.dims2()?;
                let (_, p) = tb.dims2()?;
                if self.wants(a) {
                    let bt = transpose_raw(tb.data(), n, p);
                    out.push((a, matmul_raw(dy, &bt, m, p, n)));
                }
                if self.wants(b) {
                    let at = transpose_raw(ta.data(), m, n);
                    out.push((b, matmul_raw(&at, dy, n, m, p)));
                }
            }
            &Op::Linear(x, w) => {
                // y[n×d] = x[n×k] · wᵀ
                let (tx, tw) = (self.value(x), self.value(w));
                let (n, k) = tx.dims2()?;
                let (d, _) = tw.dims2()?;
                if self.wants(x) {
                    out.push((x, matmul_raw(dy, tw.data(), n, d, k)));
                }
                if self.wants(w) {
                    let dyt = transpose_raw(dy, n, d);
                    out.push((w, matmul_raw(&dyt, tx.data(), d, n, k)));
                }
            }
            &Op::Add(a, b) => {
                for v in [a, b] {
                    if self.wants(v) {
                        out.push((v, dy.to_vec()));
                    }
                }
            }
            &Op::Mul(a, b) => {
                let (ta, tb) = (self.value(a).data(), self.value(b).data());
                if self.wants(a) {
                    out.push((a, dy.iter().zip(tb).map(|(g, y)| g * y).collect()));
                }
                if self.wants(b) {
                    out.push((b, dy.iter().zip(ta).map(|(g, x)| g * x).collect()));
                }
            }
            &Op::Scale(a, factor) => out.push((a, dy.iter().map(|g| g * factor).collect())),
            &Op::Silu(x) => {
                let g = self
                    .value(x)
                    .data()
                    .iter()
                    .zip(dy)
                    .map(|(&v, &g)| {
                        let s = sigmoid(v);
                        g * s * (1.0 + v * (1.0 - s))
                    })
                    .collect();
                out.push((x, g));
            }
            &Op::Sum(x) => out.push((x, vec![dy[0]; self.value(x).len()])),
            &Op::SoftmaxRows(x) => {
                let y = node.value.data();
                let c = node.value.last_dim();
                let mut g = vec![0.0; y.len()];
                for ((gr, yr), dyr) in g.chunks_mut(c).zip(y.chunks(c)).zip(dy.chunks(c)) {
                    let dot: f64 = yr.iter().zip(dyr).map(|(a, b)| a * b).sum();
                    for ((o, &yv), &dv) in gr.iter_mut().zip(yr).zip(dyr) {
                        *o = yv * (dv - dot);
                    }
                }
                out.push((x, g));
            }
            Op::RmsNorm { x, gain, inv_rms } => {
                let tx = self.value(*x).data();
                let g = self.value(*gain).data();
                let d = g.len();
                if self.wants(*x) {
                    let mut dx = vec![0.0; tx.len()];
                    for (r, ((dxr, xr), dyr)) in dx
                        .chunks_mut(d)
                        .zip(tx.chunks(d))
                        .zip(dy.chunks(d))
                        .enumerate()
                    {
                        let inv = inv_rms[r];
                        let dot: f64 = (0..d).map(|j| g[j] * dyr[j] * xr[j]).sum();
                        let coef = inv * inv * inv * dot / d as f64;
                        for j in 0..d {
                            dxr[j] = inv * g[j] * dyr[j] - coef * xr[j];
                        }
                    }
                    out.push((*x, dx));
                }
                if self.wants(*gain) {
                    let mut dg = vec![0.0; d];
                    for (r, (xr, dyr)) in tx.chunks(d).zip(dy.chunks(d)).enumerate() {
                        for j in 0..d {
                            dg[j] += dyr[j] * xr[j] * inv_rms[r];
                        }
                    }
                    out.push((*gain, dg));
                }
            }
            &Op::Rope {
                x,
                head_dim,
                start,
                theta,
            } => {
                let width = node.value.last_dim();
                let mut g = dy.to_vec();
                for (i, row) in g.chunks_mut(width).enumerate() {
                    for head in row.chunks_mut(head_dim) {
                        kernels::rotate_pairs(head, start + i, theta, -1.0);
                    }
                }
                out.push((x, g));
            }
            Op::CausalAttention {
                q,
                k,
                v,
                n_heads,
                probs,
            } => {
                let (n, width) = node.value.dims2()?;
                let hd = width / n_heads;
                let scale = 1.0 / (hd as f64).sqrt();
                let (tq, tk, tv) = (
                    self.value(*q).data(),
                    self.value(*k).data(),
                    self.value(*v).data(),
                );
                let mut dq = vec![0.0; n * width];
                let mut dk = vec![0.0; n * width];
                let mut dv = vec![0.0; n * width];
                let mut ds = vec![0.0; n];
                for h in 0..*n_heads {
                    let off = h * hd;
                    let p = &probs[h * n * n..(h + 1) * n * n];
                    for i in 0..n {
                        let pi = &p[i * n..i * n + i + 1];
                        let doi = &dy[i * width + off..i * width + off + hd];
                        // dP[i,j] = dO_i · V_j, then softmax backward.
                        let mut dot = 0.0;
                        for (j, &pij) in pi.iter().enumerate() {
                            let vj = &tv[j * width + off..j * width + off + hd];
                            let dpij: f64 = doi.iter().zip(vj).map(|(a, b)| a * b).sum();
                            ds[j] = dpij;
                            dot += pij * dpij;
                        }
                        for (j, &pij) in pi.iter().enumerate() {
                            ds[j] = pij * (ds[j] - dot) * scale;
                        }
                        let qi_off = i * width + off;
                        for (j, &pij) in pi.iter().enumerate() {
                            let kj_off = j * width + off;
                            let s = ds[j];
                            for t in 0..hd {
                                dv[kj_off + t] += pij * doi[t];
                                dq[qi_off + t] += s * tk[kj_off + t];
                                dk[kj_off + t] += s * tq[qi_off + t];
                            }
                        }
                    }
                }
                for (var, g) in [(*q, dq), (*k, dk), (*v, dv)] {
                    if self.wants(var) {
                        out.push((var, g));
                    }
                }
            }
            Op::Embedding { table, ids } => {
                let (_, d) = self.value(*table).dims2()?;
                let mut g = vec![0.0; self.value(*table).len()];
                for (row, &id) in ids.iter().enumerate() {
                    for j in 0..d {
                        g[id * d + j] += dy[row * d + j];
                    }
                }
                out.push((*table, g));
            }
            &Op::Row { x, index } => {
                let t = self.value(x);
                let cols = t.last_dim();
                let mut g = vec![0.0; t.len()];
                g[index * cols..(index + 1) * cols].copy_from_slice(dy);
                out.push((x, g));
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let len = self.value(p).len();
                    if self.wants(p) {
                        out.push((p, dy[offset..offset + len].to_vec()));
                    }
                    offset += len;
                }
            }
            Op::WeightedCrossEntropy {
                logits,
                targets,
                weights,
                probs,
                total_weight,
            } => {
                let c = self.value(*logits).last_dim();
                let mut g = probs.clone();
                for (row, &y) in g.chunks_mut(c).zip(targets) {
                    let f = dy[0] * weights[y] / total_weight;
                    row[y] -= 1.0;
                    for v in row.iter_mut() {
                        *v *= f;
                    }
                }
                out.push((*logits, g));
            }
        }
        Ok(out)
    }
}

fn node_shape(node: &Node) -> Vec<usize> {
    node.value.shape().to_vec()
}

pub(crate) fn check_cross_entropy_args(
    n: usize,
    c: usize,
    targets: &[usize],
    weights: &[f64],
) -> Result<()> {
    if targets.len() != n {
        return Err(Error::dim(format!(
            "{} targets for {n} logit rows",
            targets.len()
        )));
    }
    if weights.len() != c {
        return Err(Error::dim(format!(
            "{} class weights for {c} classes",
            weights.len()
        )));
    }
    if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
        return Err(Error::config(
            "class weights must be finite and non-negative",
        ));
    }
    if let Some(&y) = targets.iter().find(|&&y| y >= c) {
        return Err(Error::data(format!(
            "target class {y} out of range for {c} classes"
        )));
    }
    Ok(())
}
