use rand::Rng;

use super::tensor::{kernels, Tensor};
use crate::error::{Error, Result};

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Value<'w> {
    Owned(Tensor),
    Borrowed(&'w Tensor),
}

impl Value<'_> {
    fn get(&self) -> &Tensor {
        match self {
            Value::Owned(t) => t,
            Value::Borrowed(t) => t,
        }
    }
}

enum Op {
    Leaf,
    MatMul(Var, Var),
    MatMulBt(Var, Var),
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    MaskMul(Var, Vec<f64>),
    RmsNorm {
        x: Var,
        gain: Var,
        inv_rms: Vec<f64>,
    },
    Silu(Var),
    Sigmoid(Var),
    Softmax {
        x: Var,
        axis: usize,
    },
    CausalSoftmax(Var),
    SliceCols {
        x: Var,
        start: usize,
    },
    ConcatCols(Vec<Var>),
    GatherRows {
        table: Var,
        ids: Vec<usize>,
    },
    GatherCols {
        x: Var,
        cols: Vec<usize>,
    },
    Sum(Var),
    Mean(Var),
    Max {
        x: Var,
        index: usize,
    },
    CrossEntropy {
        logits: Var,
        target: usize,
        probs: Vec<f64>,
    },
    BceWithLogits {
        logits: Var,
        targets: Vec<f64>,
    },
}

/// Tape of executed operations for reverse-mode differentiation.
///
/// Nodes are appended in execution order, so every operation's inputs have
/// smaller indices than the operation itself and the reverse sweep is a
/// plain backwards loop. Leaves may borrow their tensors for the lifetime
/// `'w`, which lets a forward pass reference frozen weights without copying.
///
/// A graph is single-use: [`backward`](Graph::backward) may run once until
/// [`reset_grads`](Graph::reset_grads) is called.
pub struct Graph<'w> {
    values: Vec<Value<'w>>,
    ops: Vec<Op>,
    requires_grad: Vec<bool>,
    grads: Vec<Option<Vec<f64>>>,
    backward_done: bool,
}

impl Default for Graph<'_> {
    fn default() -> Self {
        Self::new()
    }
}

impl<'w> Graph<'w> {
    pub fn new() -> Self {
        Graph {
            values: Vec::new(),
            ops: Vec::new(),
            requires_grad: Vec::new(),
            grads: Vec::new(),
            backward_done: false,
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    fn push(&mut self, value: Value<'w>, op: Op, requires_grad: bool) -> Var {
        self.values.push(value);
        self.ops.push(op);
        self.requires_grad.push(requires_grad);
        self.grads.push(None);
        Var(self.values.len() - 1)
    }

    fn push_op(&mut self, t: Tensor, op: Op, inputs: &[Var]) -> Var {
        let rg = inputs.iter().any(|v| self.requires_grad[v.0]);
        self.push(Value::Owned(t), op, rg)
    }

    /// Owned leaf.
    pub fn leaf(&mut self, t: Tensor, requires_grad: bool) -> Var {
        self.push(Value::Owned(t), Op::Leaf, requires_grad)
    }

    /// Leaf backed by a borrowed tensor.
    pub fn leaf_ref(&mut self, t: &'w Tensor, requires_grad: bool) -> Var {
        self.push(Value::Borrowed(t), Op::Leaf, requires_grad)
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.leaf(t, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        self.values[v.0].get()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.requires_grad[v.0]
    }

    /// Gradient accumulated into `v` by the last backward pass, if any.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.grads[v.0].as_deref()
    }

    pub fn check_finite(&self, v: Var, what: &str) -> Result<()> {
        self.value(v).check_finite(what)
    }

    fn dims2(&self, v: Var, op: &'static str) -> Result<(usize, usize)> {
        let t = self.value(v);
        t.require_2d(op)?;
        Ok((t.shape()[0], t.shape()[1]))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.dims2(a, "matmul")?;
        let (k2, n) = self.dims2(b, "matmul")?;
        if k != k2 {
            return Err(Error::dim("matmul", self.value(a).shape(), self.value(b).shape()));
        }
        let mut out = vec![0.0; m * n];
        kernels::matmul(self.value(a).data(), self.value(b).data(), &mut out, m, k, n);
        let t = Tensor::matrix(m, n, out)?;
        Ok(self.push_op(t, Op::MatMul(a, b), &[a, b]))
    }

    /// `a · bᵀ` with `a: [m×k]`, `b: [n×k]`; the shape of `x · Wᵀ`.
    pub fn matmul_bt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.dims2(a, "matmul_bt")?;
        let (n, k2) = self.dims2(b, "matmul_bt")?;
        if k != k2 {
            return Err(Error::dim("matmul_bt", self.value(a).shape(), self.value(b).shape()));
        }
        let mut out = vec![0.0; m * n];
        kernels::matmul_bt(self.value(a).data(), self.value(b).data(), &mut out, m, k, n);
        let t = Tensor::matrix(m, n, out)?;
        Ok(self.push_op(t, Op::MatMulBt(a, b), &[a, b]))
    }

    /// Elementwise sum of equal-shape tensors. No broadcasting.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(Error::dim("add", ta.shape(), tb.shape()));
        }
        let t = ta.add_scaled(tb, 1.0)?;
        Ok(self.push_op(t, Op::Add(a, b), &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(Error::dim("mul", ta.shape(), tb.shape()));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| x * y).collect();
        let t = Tensor::new(ta.shape().to_vec(), data)?;
        Ok(self.push_op(t, Op::Mul(a, b), &[a, b]))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let ta = self.value(a);
        let data = ta.data().iter().map(|x| x * s).collect();
        let t = Tensor::new(ta.shape().to_vec(), data).expect("same shape");
        self.push_op(t, Op::Scale(a, s), &[a])
    }

    /// Inverted dropout: zero each entry with probability `p`, scale the
    /// survivors by `1/(1-p)`. `p == 0` is the identity and draws nothing.
    pub fn dropout<R: Rng + ?Sized>(&mut self, x: Var, p: f64, rng: &mut R) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::Contract(format!("dropout probability {p} outside [0,1)")));
        }
        if p == 0.0 {
            return Ok(x);
        }
        let keep = 1.0 / (1.0 - p);
        let n = self.value(x).len();
        let mask: Vec<f64> = (0..n)
            .map(|_| if rng.random::<f64>() < p { 0.0 } else { keep })
            .collect();
        let tx = self.value(x);
        let data = tx.data().iter().zip(&mask).map(|(v, m)| v * m).collect();
        let t = Tensor::new(tx.shape().to_vec(), data)?;
        Ok(self.push_op(t, Op::MaskMul(x, mask), &[x]))
    }

    /// Row-wise RMS normalisation scaled by `gain` (length = last dim of `x`).
    pub fn rms_norm(&mut self, x: Var, gain: Var, eps: f64) -> Result<Var> {
        if eps <= 0.0 {
            return Err(Error::Contract("rms_norm eps must be positive".into()));
        }
        let (tx, tg) = (self.value(x), self.value(gain));
        let d = tx.cols();
        if tg.len() != d {
            return Err(Error::dim("rms_norm", tx.shape(), tg.shape()));
        }
        let rows = tx.len() / d;
        let mut out = vec![0.0; tx.len()];
        let mut inv_rms = Vec::with_capacity(rows);
        for r in 0..rows {
            let row = &tx.data()[r * d..(r + 1) * d];
            let ms = row.iter().map(|v| v * v).sum::<f64>() / d as f64;
            let inv = 1.0 / (ms + eps).sqrt();
            inv_rms.push(inv);
            for j in 0..d {
                out[r * d + j] = row[j] * inv * tg.data()[j];
            }
        }
        let t = Tensor::new(tx.shape().to_vec(), out)?;
        Ok(self.push_op(t, Op::RmsNorm { x, gain, inv_rms }, &[x, gain]))
    }

    pub fn silu(&mut self, x: Var) -> Var {
        let tx = self.value(x);
        let data = tx.data().iter().map(|&v| v * sigmoid(v)).collect();
        let t = Tensor::new(tx.shape().to_vec(), data).expect("same shape");
        self.push_op(t, Op::Silu(x), &[x])
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let tx = self.value(x);
        let data = tx.data().iter().map(|&v| sigmoid(v)).collect();
        let t = Tensor::new(tx.shape().to_vec(), data).expect("same shape");
        self.push_op(t, Op::Sigmoid(x), &[x])
    }

    /// Max-subtracted softmax along `axis`.
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let tx = self.value(x);
        if axis >= tx.rank() {
            return Err(Error::Contract(format!(
                "softmax axis {axis} out of range for shape {:?}",
                tx.shape()
            )));
        }
        tx.check_finite("softmax input")?;
        let (outer, len, inner) = axis_split(tx.shape(), axis);
        let src = tx.data();
        let mut out = vec![0.0; src.len()];
        for o in 0..outer {
            for i in 0..inner {
                let idx = |a: usize| (o * len + a) * inner + i;
                let max = (0..len).map(|a| src[idx(a)]).fold(f64::NEG_INFINITY, f64::max);
                let mut z = 0.0;
                for a in 0..len {
                    let e = (src[idx(a)] - max).exp();
                    out[idx(a)] = e;
                    z += e;
                }
                for a in 0..len {
                    out[idx(a)] /= z;
                }
            }
        }
        let t = Tensor::new(tx.shape().to_vec(), out)?;
        Ok(self.push_op(t, Op::Softmax { x, axis }, &[x]))
    }

    /// Row softmax of a square score matrix where row `i` only sees columns
    /// `0..=i`; masked entries are exactly zero.
    pub fn causal_softmax(&mut self, x: Var) -> Result<Var> {
        let (n, m) = self.dims2(x, "causal_softmax")?;
        if n != m {
            return Err(Error::dim("causal_softmax", &[n, m], &[n, n]));
        }
        let src = self.value(x).data();
        let mut out = vec![0.0; n * n];
        for i in 0..n {
            let row = &src[i * n..i * n + i + 1];
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for j in 0..=i {
                let e = (row[j] - max).exp();
                out[i * n + j] = e;
                z += e;
            }
            for j in 0..=i {
                out[i * n + j] /= z;
            }
        }
        let t = Tensor::matrix(n, n, out)?;
        Ok(self.push_op(t, Op::CausalSoftmax(x), &[x]))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (n, m) = self.dims2(x, "slice_cols")?;
        if start + len > m {
            return Err(Error::Contract(format!(
                "slice_cols {start}..{} out of range for {m} columns",
                start + len
            )));
        }
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(n * len);
        for r in 0..n {
            out.extend_from_slice(&src[r * m + start..r * m + start + len]);
        }
        let t = Tensor::matrix(n, len, out)?;
        Ok(self.push_op(t, Op::SliceCols { x, start }, &[x]))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::Contract("concat_cols of nothing".into()))?;
        let (n, _) = self.dims2(first, "concat_cols")?;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (pn, pm) = self.dims2(p, "concat_cols")?;
            if pn != n {
                return Err(Error::dim(
                    "concat_cols",
                    self.value(first).shape(),
                    self.value(p).shape(),
                ));
            }
            widths.push(pm);
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(n * total);
        for r in 0..n {
            for (&p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.value(p).data()[r * w..(r + 1) * w]);
            }
        }
        let t = Tensor::matrix(n, total, out)?;
        Ok(self.push_op(t, Op::ConcatCols(parts.to_vec()), parts))
    }

    /// Rows of a 2-D `table` selected by `ids` (an embedding lookup).
    pub fn gather_rows(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let (n, d) = self.dims2(table, "gather_rows")?;
        let src = self.value(table).data();
        let mut out = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            if id >= n {
                return Err(Error::Data(format!(
                    "row index {id} out of range for table of {n} rows"
                )));
            }
            out.extend_from_slice(&src[id * d..(id + 1) * d]);
        }
        let t = Tensor::matrix(ids.len(), d, out)?;
        Ok(self.push_op(
            t,
            Op::GatherRows {
                table,
                ids: ids.to_vec(),
            },
            &[table],
        ))
    }

    pub fn gather_cols(&mut self, x: Var, cols: &[usize]) -> Result<Var> {
        let (n, m) = self.dims2(x, "gather_cols")?;
        if let Some(&c) = cols.iter().find(|&&c| c >= m) {
            return Err(Error::Contract(format!("column {c} out of range for {m} columns")));
        }
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(n * cols.len());
        for r in 0..n {
            out.extend(cols.iter().map(|&c| src[r * m + c]));
        }
        let t = Tensor::matrix(n, cols.len(), out)?;
        Ok(self.push_op(t, Op::GatherCols { x, cols: cols.to_vec() }, &[x]))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        self.push_op(Tensor::scalar(s), Op::Sum(x), &[x])
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let s = t.data().iter().sum::<f64>() / t.len() as f64;
        self.push_op(Tensor::scalar(s), Op::Mean(x), &[x])
    }

    /// Scalar maximum over all entries; the gradient goes to the first argmax.
    pub fn max(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        if t.is_empty() {
            return Err(Error::Contract("max of empty tensor".into()));
        }
        let (index, &m) =
            t.data().iter().enumerate().fold(
                (0, &f64::NEG_INFINITY),
                |best, cur| if cur.1 > best.1 { cur } else { best },
            );
        Ok(self.push_op(Tensor::scalar(m), Op::Max { x, index }, &[x]))
    }

    /// `-log softmax(logits)[target]` for a single row of logits.
    pub fn cross_entropy(&mut self, logits: Var, target: usize) -> Result<Var> {
        let t = self.value(logits);
        t.check_finite("cross_entropy logits")?;
        let c = t.len();
        if target >= c {
            return Err(Error::Contract(format!("target {target} out of range for {c} classes")));
        }
        let max = t.data().iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = t.data().iter().map(|v| (v - max).exp()).collect();
        let z: f64 = exps.iter().sum();
        let loss = z.ln() + max - t.data()[target];
        let probs = exps.into_iter().map(|e| e / z).collect();
        Ok(self.push_op(
            Tensor::scalar(loss),
            Op::CrossEntropy { logits, target, probs },
            &[logits],
        ))
    }

    /// Mean binary cross-entropy of `sigmoid(logits)` against 0/1 targets.
    pub fn bce_with_logits(&mut self, logits: Var, targets: &[f64]) -> Result<Var> {
        let t = self.value(logits);
        t.check_finite("bce logits")?;
        if t.len() != targets.len() {
            return Err(Error::dim("bce_with_logits", t.shape(), &[targets.len()]));
        }
        let n = targets.len() as f64;
        let loss = t
            .data()
            .iter()
            .zip(targets)
            .map(|(&z, &y)| z.max(0.0) - z * y + (-z.abs()).exp().ln_1p())
            .sum::<f64>()
            / n;
        Ok(self.push_op(
            Tensor::scalar(loss),
            Op::BceWithLogits {
                logits,
                targets: targets.to_vec(),
            },
            &[logits],
        ))
    }

    /// Clears all gradients so the graph can be differentiated again.
    pub fn reset_grads(&mut self) {
        for g in &mut self.grads {
            *g = None;
        }
        self.backward_done = false;
    }

    /// Reverse sweep from a scalar `loss`, populating gradients of every
    /// node that requires one.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if loss.0 >= self.values.len() {
            return Err(Error::Contract("loss is not a node of this graph".into()));
        }
        if self.value(loss).len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        if self.backward_done {
            return Err(Error::State("backward already ran; call reset_grads first".into()));
        }
        self.backward_done = true;
        if !self.requires_grad[loss.0] {
            return Ok(());
        }
        self.grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let Some(g) = self.grads[i].take() else { continue };
            self.backprop_node(i, &g);
            self.grads[i] = Some(g);
        }
        Ok(())
    }

    fn grad_buf(&mut self, v: Var) -> Option<&mut Vec<f64>> {
        if !self.requires_grad[v.0] {
            return None;
        }
        let n = self.values[v.0].get().len();
        Some(self.grads[v.0].get_or_insert_with(|| vec![0.0; n]))
    }

    fn accumulate(&mut self, v: Var, contrib: &[f64]) {
        if let Some(buf) = self.grad_buf(v) {
            for (b, c) in buf.iter_mut().zip(contrib) {
                *b += c;
            }
        }
    }

    fn backprop_node(&mut self, i: usize, g: &[f64]) {
        // Ops are moved out temporarily so the match can borrow `self` mutably.
        let op = std::mem::replace(&mut self.ops[i], Op::Leaf);
        match &op {
            Op::Leaf => {}
            &Op::MatMul(a, b) => {
                let (m, k) = dims_of(self.value(a));
                let n = self.value(b).shape()[1];
                if self.requires_grad[a.0] {
                    let mut da = vec![0.0; m * k];
                    kernels::matmul_bt(g, self.value(b).data(), &mut da, m, n, k);
                    self.accumulate(a, &da);
                }
                if self.requires_grad[b.0] {
                    let mut db = vec![0.0; k * n];
                    kernels::matmul_at(self.value(a).data(), g, &mut db, m, k, n);
                    self.accumulate(b, &db);
                }
            }
            &Op::MatMulBt(a, b) => {
                let (m, k) = dims_of(self.value(a));
                let n = self.value(b).shape()[0];
                if self.requires_grad[a.0] {
                    let mut da = vec![0.0; m * k];
                    kernels::matmul(g, self.value(b).data(), &mut da, m, n, k);
                    self.accumulate(a, &da);
                }
                if self.requires_grad[b.0] {
                    let mut db = vec![0.0; n * k];
                    kernels::matmul_at(g, self.value(a).data(), &mut db, m, n, k);
                    self.accumulate(b, &db);
                }
            }
            &Op::Add(a, b) => {
                self.accumulate(a, g);
                self.accumulate(b, g);
            }
            &Op::Mul(a, b) => {
                if self.requires_grad[a.0] {
                    let da: Vec<f64> = g.iter().zip(self.value(b).data()).map(|(g, y)| g * y).collect();
                    self.accumulate(a, &da);
                }
                if self.requires_grad[b.0] {
                    let db: Vec<f64> = g.iter().zip(self.value(a).data()).map(|(g, x)| g * x).collect();
                    self.accumulate(b, &db);
                }
            }
            &Op::Scale(a, s) => {
                let da: Vec<f64> = g.iter().map(|g| g * s).collect();
                self.accumulate(a, &da);
            }
            Op::MaskMul(a, mask) => {
                let da: Vec<f64> = g.iter().zip(mask).map(|(g, m)| g * m).collect();
                self.accumulate(*a, &da);
            }
            Op::RmsNorm { x, gain, inv_rms } => {
                let (x, gain) = (*x, *gain);
                let tx = self.value(x);
                let tg = self.value(gain);
                let d = tx.cols();
                let rows = tx.len() / d;
                let mut dx = vec![0.0; tx.len()];
                let mut dgain = vec![0.0; d];
                for r in 0..rows {
                    let xr = &tx.data()[r * d..(r + 1) * d];
                    let gr = &g[r * d..(r + 1) * d];
                    let inv = inv_rms[r];
                    let mut dot = 0.0;
                    for j in 0..d {
                        let xhat = xr[j] * inv;
                        dgain[j] += gr[j] * xhat;
                        dot += gr[j] * tg.data()[j] * xhat;
                    }
                    let mean_dot = dot / d as f64;
                    for j in 0..d {
                        let xhat = xr[j] * inv;
                        dx[r * d + j] = inv * (gr[j] * tg.data()[j] - xhat * mean_dot);
                    }
                }
                self.accumulate(x, &dx);
                self.accumulate(gain, &dgain);
            }
            &Op::Silu(x) => {
                let dx: Vec<f64> = self
                    .value(x)
                    .data()
                    .iter()
                    .zip(g)
                    .map(|(&v, g)| {
                        let s = sigmoid(v);
                        g * (s + v * s * (1.0 - s))
                    })
                    .collect();
                self.accumulate(x, &dx);
            }
            &Op::Sigmoid(x) => {
                let dx: Vec<f64> = self.values[i]
                    .get()
                    .data()
                    .iter()
                    .zip(g)
                    .map(|(s, g)| g * s * (1.0 - s))
                    .collect();
                self.accumulate(x, &dx);
            }
            &Op::Softmax { x, axis } => {
                let y = self.values[i].get();
                let (outer, len, inner) = axis_split(y.shape(), axis);
                let yd = y.data();
                let mut dx = vec![0.0; yd.len()];
                for o in 0..outer {
                    for k in 0..inner {
                        let idx = |a: usize| (o * len + a) * inner + k;
                        let dot: f64 = (0..len).map(|a| yd[idx(a)] * g[idx(a)]).sum();
                        for a in 0..len {
                            dx[idx(a)] = yd[idx(a)] * (g[idx(a)] - dot);
                        }
                    }
                }
                self.accumulate(x, &dx);
            }
            &Op::CausalSoftmax(x) => {
                let y = self.values[i].get();
                let n = y.rows();
                let yd = y.data();
                let mut dx = vec![0.0; yd.len()];
                for r in 0..n {
                    let row = r * n;
                    let dot: f64 = (0..=r).map(|j| yd[row + j] * g[row + j]).sum();
                    for j in 0..=r {
                        dx[row + j] = yd[row + j] * (g[row + j] - dot);
                    }
                }
                self.accumulate(x, &dx);
            }
            &Op::SliceCols { x, start } => {
                let (n, m) = dims_of(self.value(x));
                let len = g.len() / n.max(1);
                let mut dx = vec![0.0; n * m];
                for r in 0..n {
                    dx[r * m + start..r * m + start + len].copy_from_slice(&g[r * len..(r + 1) * len]);
                }
                self.accumulate(x, &dx);
            }
            Op::ConcatCols(parts) => {
                let widths: Vec<usize> = parts.iter().map(|&p| self.value(p).cols()).collect();
                let total: usize = widths.iter().sum();
                let n = g.len() / total.max(1);
                let mut offset = 0;
                for (&p, &w) in parts.iter().zip(&widths) {
                    let mut dp = Vec::with_capacity(n * w);
                    for r in 0..n {
                        dp.extend_from_slice(&g[r * total + offset..r * total + offset + w]);
                    }
                    self.accumulate(p, &dp);
                    offset += w;
                }
            }
            Op::GatherRows { table, ids } => {
                let d = self.value(*table).cols();
                if let Some(buf) = self.grad_buf(*table) {
                    for (r, &id) in ids.iter().enumerate() {
                        for j in 0..d {
                            buf[id * d + j] += g[r * d + j];
                        }
                    }
                }
            }
            Op::GatherCols { x, cols } => {
                let m = self.value(*x).cols();
                let k = cols.len();
                if let Some(buf) = self.grad_buf(*x) {
                    for r in 0..g.len() / k.max(1) {
                        for (j, &c) in cols.iter().enumerate() {
                            buf[r * m + c] += g[r * k + j];
                        }
                    }
                }
            }
            &Op::Sum(x) => {
                let n = self.value(x).len();
                self.accumulate(x, &vec![g[0]; n]);
            }
            &Op::Mean(x) => {
                let n = self.value(x).len();
                self.accumulate(x, &vec![g[0] / n as f64; n]);
            }
            &Op::Max { x, index } => {
                if let Some(buf) = self.grad_buf(x) {
                    buf[index] += g[0];
                }
            }
            Op::CrossEntropy { logits, target, probs } => {
                let mut d: Vec<f64> = probs.iter().map(|p| p * g[0]).collect();
                d[*target] -= g[0];
                self.accumulate(*logits, &d);
            }
            Op::BceWithLogits { logits, targets } => {
                let n = targets.len() as f64;
                let d: Vec<f64> = self
                    .value(*logits)
                    .data()
                    .iter()
                    .zip(targets)
                    .map(|(&z, &y)| g[0] * (sigmoid(z) - y) / n)
                    .collect();
                self.accumulate(*logits, &d);
            }
        }
        self.ops[i] = op;
    }
}

fn dims_of(t: &Tensor) -> (usize, usize) {
    (t.shape()[0], t.shape()[1])
}

fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

/// Numerically stable logistic function.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
