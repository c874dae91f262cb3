//! Reverse-mode tape over [`Tensor`] values.
//!
//! Every op appends a node holding its output and whatever the backward rule
//! needs. [`Tape::backward`] walks the nodes in reverse record order, so each
//! op is visited exactly once. Parameters live in a borrowed [`ParamStore`];
//! their gradients are collected on the tape and handed back through
//! [`Tape::take_param_grads`].

use crate::error::{Error, Result};
use crate::kernels::{self, LayerNormCache};
use crate::params::{ParamId, ParamStore};
use crate::tensor::Tensor;

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Param(ParamId),
    Gather { param: ParamId, row: usize },
    MatMul(Var, Var),
    Transpose(Var),
    Outer(Var, Var),
    Mul(Var, Var),
    Add(Var, Var),
    AddRowBias(Var, Var),
    Scale(Var, f64),
    Reshape(Var),
    Relu(Var),
    Sigmoid(Var),
    Conv1d { x: Var, filters: Var, bias: Var },
    MaxPool { x: Var, argmax: Vec<usize> },
    SoftmaxRows(Var),
    LayerNorm { x: Var, gain: Var, shift: Var, cache: LayerNormCache },
    SliceCols { x: Var, start: usize },
    ConcatCols(Vec<Var>),
    StackRows(Vec<Var>),
    MeanRows(Var),
    Sum(Var),
    MeanOf(Vec<Var>),
    Bce { score: Var, label: f64 },
}

#[derive(Debug)]
struct Node {
    // None for parameters, which are read from the store.
    value: Option<Tensor>,
    op: Op,
}

pub struct Tape<'p> {
    params: &'p ParamStore,
    nodes: Vec<Node>,
    leaf_grads: Vec<Option<Vec<f64>>>,
    param_grads: Vec<Option<Vec<f64>>>,
    backward_done: bool,
}

fn node_value<'a>(nodes: &'a [Node], params: &'a ParamStore, v: Var) -> &'a Tensor {
    let n = &nodes[v.0];
    match (&n.value, &n.op) {
        (Some(t), _) => t,
        (None, Op::Param(id)) => params.get(*id),
        _ => unreachable!("node without value"),
    }
}

fn slot(grads: &mut [Option<Vec<f64>>], v: Var, len: usize) -> &mut Vec<f64> {
    grads[v.0].get_or_insert_with(|| vec![0.0; len])
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

impl<'p> Tape<'p> {
    pub fn new(params: &'p ParamStore) -> Self {
        Tape {
            params,
            nodes: Vec::new(),
            leaf_grads: Vec::new(),
            param_grads: vec![None; params.len()],
            backward_done: false,
        }
    }

    /// Clears recorded ops and gradients so the tape can be reused.
    pub fn reset(&mut self) {
        self.nodes.clear();
        self.leaf_grads.clear();
        self.param_grads.iter_mut().for_each(|g| *g = None);
        self.backward_done = false;
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn params(&self) -> &'p ParamStore {
        self.params
    }

    pub fn value(&self, v: Var) -> &Tensor {
        node_value(&self.nodes, self.params, v)
    }

    /// First element of a value; used for scalar losses and logits.
    pub fn scalar(&self, v: Var) -> f64 {
        self.value(v).data()[0]
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node {
            value: Some(value),
            op,
        });
        Var(self.nodes.len() - 1)
    }

    /// Records an input tensor whose gradient can be read back after
    /// [`Tape::backward`].
    pub fn leaf(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        self.nodes.push(Node {
            value: None,
            op: Op::Param(id),
        });
        Var(self.nodes.len() - 1)
    }

    /// Row `row` of an embedding table. The gradient scatters back into that
    /// row only.
    pub fn gather(&mut self, id: ParamId, row: usize) -> Result<Var> {
        let table = self.params.get(id);
        let (rows, _) = table
            .dims2()
            .ok_or_else(|| Error::invalid("gather", format!("table must be a matrix, got {:?}", table.shape())))?;
        if row >= rows {
            return Err(Error::IdOutOfRange {
                kind: "embedding",
                id: row,
                size: rows,
            });
        }
        let value = Tensor::vector(table.row(row).to_vec());
        Ok(self.push(value, Op::Gather { param: id, row }))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = kernels::matmul(self.value(a), self.value(b))?;
        Ok(self.push(out, Op::MatMul(a, b)))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let out = kernels::transpose(self.value(a))?;
        Ok(self.push(out, Op::Transpose(a)))
    }

    pub fn outer(&mut self, p: Var, q: Var) -> Result<Var> {
        let out = kernels::outer(self.value(p), self.value(q))?;
        Ok(self.push(out, Op::Outer(p, q)))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(Error::Shape {
                op,
                lhs: sa.to_vec(),
                rhs: sb.to_vec(),
            });
        }
        Ok(())
    }

    /// Element-wise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let (ta, tb) = (self.value(a), self.value(b));
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| x * y).collect();
        let out = Tensor::from_parts(ta.shape().to_vec(), data);
        Ok(self.push(out, Op::Mul(a, b)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let (ta, tb) = (self.value(a), self.value(b));
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| x + y).collect();
        let out = Tensor::from_parts(ta.shape().to_vec(), data);
        Ok(self.push(out, Op::Add(a, b)))
    }

    /// Adds a length-`n` bias to every row of `x` (`m×n`, or a vector of
    /// length `n`).
    pub fn add_row_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (tx, tb) = (self.value(x), self.value(bias));
        let n = *tx.shape().last().expect("non-empty shape");
        if tb.shape() != [n] {
            return Err(Error::Shape {
                op: "add_row_bias",
                lhs: tx.shape().to_vec(),
                rhs: tb.shape().to_vec(),
            });
        }
        let mut data = tx.data().to_vec();
        for row in data.chunks_mut(n) {
            add_into(row, tb.data());
        }
        let out = Tensor::from_parts(tx.shape().to_vec(), data);
        Ok(self.push(out, Op::AddRowBias(x, bias)))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let tx = self.value(x);
        let out = Tensor::from_parts(tx.shape().to_vec(), tx.data().iter().map(|v| v * c).collect());
        self.push(out, Op::Scale(x, c))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(x).reshaped(shape.to_vec())?;
        Ok(self.push(out, Op::Reshape(x)))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let tx = self.value(x);
        let out = Tensor::from_parts(tx.shape().to_vec(), tx.data().iter().map(|v| v.max(0.0)).collect());
        self.push(out, Op::Relu(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let tx = self.value(x);
        let out = Tensor::from_parts(tx.shape().to_vec(), tx.data().iter().map(|&v| kernels::sigmoid(v)).collect());
        self.push(out, Op::Sigmoid(x))
    }

    pub fn conv1d_valid(&mut self, x: Var, filters: Var, bias: Var) -> Result<Var> {
        let out = kernels::conv1d_valid(self.value(x), self.value(filters), self.value(bias))?;
        Ok(self.push(out, Op::Conv1d { x, filters, bias }))
    }

    pub fn global_max_pool(&mut self, x: Var) -> Result<Var> {
        let (out, argmax) = kernels::global_max_pool(self.value(x))?;
        Ok(self.push(out, Op::MaxPool { x, argmax }))
    }

    pub fn softmax_rows(&mut self, x: Var) -> Var {
        let out = kernels::softmax_rows(self.value(x));
        self.push(out, Op::SoftmaxRows(x))
    }

    /// Layer normalization applied independently to each row.
    pub fn layer_norm(&mut self, x: Var, gain: Var, shift: Var) -> Result<Var> {
        let (out, cache) = kernels::layer_norm_cached(self.value(x), self.value(gain), self.value(shift))?;
        Ok(self.push(out, Op::LayerNorm { x, gain, shift, cache }))
    }

    /// Columns `start..end` of a matrix.
    pub fn slice_cols(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let tx = self.value(x);
        let (m, n) = tx
            .dims2()
            .ok_or_else(|| Error::invalid("slice_cols", format!("expected a matrix, got {:?}", tx.shape())))?;
        if start >= end || end > n {
            return Err(Error::invalid("slice_cols", format!("range {start}..{end} outside {n} columns")));
        }
        let w = end - start;
        let mut data = Vec::with_capacity(m * w);
        for i in 0..m {
            data.extend_from_slice(&tx.row(i)[start..end]);
        }
        let out = Tensor::from_parts(vec![m, w], data);
        Ok(self.push(out, Op::SliceCols { x, start }))
    }

    /// Concatenates matrices with equal row counts along the column axis.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let dims: Vec<(usize, usize)> = parts
            .iter()
            .map(|&p| {
                self.value(p)
                    .dims2()
                    .ok_or_else(|| Error::invalid("concat_cols", "expected matrices"))
            })
            .collect::<Result<_>>()?;
        let m = dims.first().map(|d| d.0).ok_or_else(|| Error::invalid("concat_cols", "nothing to concatenate"))?;
        if dims.iter().any(|d| d.0 != m) {
            return Err(Error::invalid("concat_cols", format!("row counts differ: {dims:?}")));
        }
        let n: usize = dims.iter().map(|d| d.1).sum();
        let mut data = Vec::with_capacity(m * n);
        for i in 0..m {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(i));
            }
        }
        let out = Tensor::from_parts(vec![m, n], data);
        Ok(self.push(out, Op::ConcatCols(parts.to_vec())))
    }

    /// Stacks equal-length vectors as the rows of a matrix.
    pub fn stack_rows(&mut self, rows: &[Var]) -> Result<Var> {
        let n = rows
            .first()
            .map(|&r| self.value(r).len())
            .ok_or_else(|| Error::invalid("stack_rows", "nothing to stack"))?;
        let mut data = Vec::with_capacity(rows.len() * n);
        for &r in rows {
            let t = self.value(r);
            if t.len() != n {
                return Err(Error::Shape {
                    op: "stack_rows",
                    lhs: vec![n],
                    rhs: t.shape().to_vec(),
                });
            }
            data.extend_from_slice(t.data());
        }
        let out = Tensor::from_parts(vec![rows.len(), n], data);
        Ok(self.push(out, Op::StackRows(rows.to_vec())))
    }

    /// Column means of a matrix: `T×w` → `[w]`.
    pub fn mean_rows(&mut self, x: Var) -> Result<Var> {
        let tx = self.value(x);
        let (m, n) = tx
            .dims2()
            .ok_or_else(|| Error::invalid("mean_rows", format!("expected a matrix, got {:?}", tx.shape())))?;
        let mut out = vec![0.0; n];
        for i in 0..m {
            add_into(&mut out, tx.row(i));
        }
        out.iter_mut().for_each(|v| *v /= m as f64);
        Ok(self.push(Tensor::from_parts(vec![n], out), Op::MeanRows(x)))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(x))
    }

    /// Mean of scalar values.
    pub fn mean_of(&mut self, xs: &[Var]) -> Result<Var> {
        if xs.is_empty() {
            return Err(Error::invalid("mean_of", "empty input"));
        }
        let s: f64 = xs.iter().map(|&x| self.scalar(x)).sum();
        Ok(self.push(Tensor::scalar(s / xs.len() as f64), Op::MeanOf(xs.to_vec())))
    }

    /// Binary cross-entropy of a probability `score` against a fixed label.
    pub fn bce(&mut self, score: Var, label: f64) -> Var {
        let l = kernels::bce(self.scalar(score), label);
        self.push(Tensor::scalar(l), Op::Bce { score, label })
    }

    /// Gradient of the last backward pass with respect to a [`Tape::leaf`].
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.leaf_grads.get(v.0).and_then(|g| g.as_deref())
    }

    pub fn param_grads(&self) -> &[Option<Vec<f64>>] {
        &self.param_grads
    }

    pub fn take_param_grads(&mut self) -> Vec<Option<Vec<f64>>> {
        std::mem::replace(&mut self.param_grads, vec![None; self.params.len()])
    }

    /// Backpropagates from a scalar `loss` with seed gradient 1.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.backward_done {
            return Err(Error::BackwardTwice);
        }
        if self.nodes.is_empty() {
            return Err(Error::invalid("backward", "empty tape"));
        }
        if self.value(loss).len() != 1 {
            return Err(Error::invalid("backward", format!("loss must be scalar, got {:?}", self.value(loss).shape())));
        }
        self.backward_done = true;
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);
        self.leaf_grads = vec![None; self.nodes.len()];

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.backward_node(i, &g, &mut grads);
            if matches!(self.nodes[i].op, Op::Leaf) {
                self.leaf_grads[i] = Some(g);
            }
        }
        Ok(())
    }

    fn backward_node(&mut self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        let nodes = &self.nodes[..];
        let params = self.params;
        let val = |v: Var| node_value(nodes, params, v);
        macro_rules! acc {
            ($v:expr) => {{
                let v: Var = $v;
                slot(grads, v, val(v).len())
            }};
        }

        match &node.op {
            Op::Leaf => {}
            Op::Param(id) => {
                let len = params.get(*id).len();
                let slot = self.param_grads[id.0].get_or_insert_with(|| vec![0.0; len]);
                add_into(slot, g);
            }
            Op::Gather { param, row } => {
                let table = params.get(*param);
                let len = table.len();
                let d = g.len();
                let slot = self.param_grads[param.0].get_or_insert_with(|| vec![0.0; len]);
                add_into(&mut slot[row * d..(row + 1) * d], g);
            }
            Op::MatMul(a, b) => {
                let (ta, tb) = (val(*a), val(*b));
                let (m, k) = ta.dims2().unwrap();
                let n = tb.dims2().unwrap().1;
                let (ad, bd) = (ta.data(), tb.data());
                // dA = dC · Bᵀ
                {
                    let ga = acc!(*a);
                    for r in 0..m {
                        let grow = &g[r * n..(r + 1) * n];
                        for p in 0..k {
                            let brow = &bd[p * n..(p + 1) * n];
                            ga[r * k + p] += grow.iter().zip(brow).map(|(x, y)| x * y).sum::<f64>();
                        }
                    }
                }
                // dB = Aᵀ · dC
                let gb = acc!(*b);
                for r in 0..m {
                    let grow = &g[r * n..(r + 1) * n];
                    for p in 0..k {
                        let av = ad[r * k + p];
                        if av == 0.0 {
                            continue;
                        }
                        for (o, x) in gb[p * n..(p + 1) * n].iter_mut().zip(grow) {
                            *o += av * x;
                        }
                    }
                }
            }
            Op::Transpose(a) => {
                let (m, n) = val(*a).dims2().unwrap();
                let ga = acc!(*a);
                for r in 0..m {
                    for c in 0..n {
                        ga[r * n + c] += g[c * m + r];
                    }
                }
            }
            Op::Outer(p, q) => {
                let (pd, qd) = (val(*p).data(), val(*q).data());
                let d = pd.len();
                {
                    let gp = acc!(*p);
                    for r in 0..d {
                        gp[r] += (0..d).map(|c| g[r * d + c] * qd[c]).sum::<f64>();
                    }
                }
                let gq = acc!(*q);
                for c in 0..d {
                    gq[c] += (0..d).map(|r| g[r * d + c] * pd[r]).sum::<f64>();
                }
            }
            Op::Mul(a, b) => {
                let (ad, bd) = (val(*a).data(), val(*b).data());
                {
                    let ga = acc!(*a);
                    for j in 0..g.len() {
                        ga[j] += g[j] * bd[j];
                    }
                }
                let gb = acc!(*b);
                for j in 0..g.len() {
                    gb[j] += g[j] * ad[j];
                }
            }
            Op::Add(a, b) => {
                add_into(acc!(*a), g);
                add_into(acc!(*b), g);
            }
            Op::AddRowBias(x, bias) => {
                add_into(acc!(*x), g);
                let n = val(*bias).len();
                let gb = acc!(*bias);
                for row in g.chunks(n) {
                    add_into(gb, row);
                }
            }
            Op::Scale(x, c) => {
                let gx = acc!(*x);
                for (o, v) in gx.iter_mut().zip(g) {
                    *o += c * v;
                }
            }
            Op::Reshape(x) => add_into(acc!(*x), g),
            Op::Relu(x) => {
                let xd = val(*x).data();
                let gx = acc!(*x);
                for j in 0..g.len() {
                    if xd[j] > 0.0 {
                        gx[j] += g[j];
                    }
                }
            }
            Op::Sigmoid(x) => {
                let y = node.value.as_ref().unwrap().data();
                let gx = acc!(*x);
                for j in 0..g.len() {
                    gx[j] += g[j] * y[j] * (1.0 - y[j]);
                }
            }
            Op::Conv1d { x, filters, bias } => {
                let (xd, fd) = (val(*x).data(), val(*filters).data());
                let (f, k) = val(*filters).dims2().unwrap();
                let t_out = xd.len() - k + 1;
                {
                    let gx = acc!(*x);
                    for fi in 0..f {
                        for t in 0..t_out {
                            let go = g[fi * t_out + t];
                            for j in 0..k {
                                gx[t + j] += go * fd[fi * k + j];
                            }
                        }
                    }
                }
                {
                    let gf = acc!(*filters);
                    for fi in 0..f {
                        for t in 0..t_out {
                            let go = g[fi * t_out + t];
                            for j in 0..k {
                                gf[fi * k + j] += go * xd[t + j];
                            }
                        }
                    }
                }
                let gb = acc!(*bias);
                for fi in 0..f {
                    gb[fi] += g[fi * t_out..(fi + 1) * t_out].iter().sum::<f64>();
                }
            }
            Op::MaxPool { x, argmax } => {
                let t = val(*x).len() / argmax.len();
                let gx = acc!(*x);
                for (fi, &a) in argmax.iter().enumerate() {
                    gx[fi * t + a] += g[fi];
                }
            }
            Op::SoftmaxRows(x) => {
                let y = node.value.as_ref().unwrap();
                let n = *y.shape().last().unwrap();
                let yd = y.data();
                let gx = acc!(*x);
                for (r, (yr, gr)) in yd.chunks(n).zip(g.chunks(n)).enumerate() {
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for j in 0..n {
                        gx[r * n + j] += yr[j] * (gr[j] - dot);
                    }
                }
            }
            Op::LayerNorm { x, gain, shift, cache } => {
                let n = val(*gain).len();
                let gd = val(*gain).data();
                let rows = g.len() / n;
                {
                    let gx = acc!(*x);
                    for r in 0..rows {
                        let xh = &cache.xhat[r * n..(r + 1) * n];
                        let gr = &g[r * n..(r + 1) * n];
                        let dxh: Vec<f64> = gr.iter().zip(gd).map(|(a, b)| a * b).collect();
                        let sum_d: f64 = dxh.iter().sum();
                        let sum_dx: f64 = dxh.iter().zip(xh).map(|(a, b)| a * b).sum();
                        let inv = cache.inv_std[r];
                        for j in 0..n {
                            gx[r * n + j] += inv / n as f64 * (n as f64 * dxh[j] - sum_d - xh[j] * sum_dx);
                        }
                    }
                }
                {
                    let gg = acc!(*gain);
                    for r in 0..rows {
                        for j in 0..n {
                            gg[j] += g[r * n + j] * cache.xhat[r * n + j];
                        }
                    }
                }
                let gs = acc!(*shift);
                for row in g.chunks(n) {
                    add_into(gs, row);
                }
            }
            Op::SliceCols { x, start } => {
                let (m, n) = val(*x).dims2().unwrap();
                let w = g.len() / m;
                let gx = acc!(*x);
                for r in 0..m {
                    add_into(&mut gx[r * n + start..r * n + start + w], &g[r * w..(r + 1) * w]);
                }
            }
            Op::ConcatCols(parts) => {
                let widths: Vec<usize> = parts.iter().map(|&p| val(p).dims2().unwrap().1).collect();
                let total: usize = widths.iter().sum();
                let m = g.len() / total;
                let mut off = 0;
                for (&p, &w) in parts.iter().zip(&widths) {
                    let gp = acc!(p);
                    for r in 0..m {
                        add_into(&mut gp[r * w..(r + 1) * w], &g[r * total + off..r * total + off + w]);
                    }
                    off += w;
                }
            }
            Op::StackRows(rows) => {
                let n = g.len() / rows.len();
                for (r, &v) in rows.iter().enumerate() {
                    add_into(acc!(v), &g[r * n..(r + 1) * n]);
                }
            }
            Op::MeanRows(x) => {
                let (m, n) = val(*x).dims2().unwrap();
                let gx = acc!(*x);
                for r in 0..m {
                    for j in 0..n {
                        gx[r * n + j] += g[j] / m as f64;
                    }
                }
            }
            Op::Sum(x) => {
                let gx = acc!(*x);
                gx.iter_mut().for_each(|v| *v += g[0]);
            }
            Op::MeanOf(xs) => {
                let share = g[0] / xs.len() as f64;
                for &x in xs {
                    acc!(x)[0] += share;
                }
            }
            Op::Bce { score, label } => {
                let s = val(*score).data()[0];
                let d = if s <= kernels::BCE_CLAMP || s >= 1.0 - kernels::BCE_CLAMP {
                    0.0
                } else {
                    -label / s + (1.0 - label) / (1.0 - s)
                };
                acc!(*score)[0] += g[0] * d;
            }
        }
    }
}
