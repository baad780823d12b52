//! Reverse-mode automatic differentiation over [`Tensor`] values.
//!
//! A [`Tape`] is an append-only list of nodes. Every operation validates its
//! operand shapes, computes its value eagerly and records enough to replay
//! the chain rule. Node indices are a topological order by construction, so
//! [`Tape::backward`] is a single reverse sweep.

use crate::error::{Error, Result};
use crate::numerics::tensor::{dot_wide, matmul_into, matmul_nt_acc, matmul_tn_acc, Real, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
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
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    ConcatCols(Vec<Var>),
    SliceCols(Var, usize),
    GatherRows(Var, Vec<usize>),
    Compose(Var, Var),
    SoftmaxXent {
        logits: Var,
        q: Vec<f64>,
        probs: Vec<f64>,
    },
    Sum(Var),
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op,
    needs_grad: bool,
}

#[derive(Debug, Default)]
pub struct Tape<T: Real = f32> {
    nodes: Vec<Node<T>>,
}

/// Gradients of one backward pass, accumulated in `f64`.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient of the root with respect to `v`, or `None` when `v` does
    /// not influence the root.
    pub fn wide(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    pub fn wrt<T: Real>(&self, v: Var) -> Tensor<T> {
        let shape = self.shapes[v.0].clone();
        match self.wide(v) {
            Some(g) => Tensor::new(shape, g.iter().map(|&x| T::of(x)).collect())
                .expect("gradient shape matches node"),
            None => Tensor::zeros(shape),
        }
    }
}

fn slot<'g, T: Real>(grads: &'g mut [Option<Vec<f64>>], nodes: &[Node<T>], v: Var) -> &'g mut Vec<f64> {
    let len = nodes[v.0].value.len();
    grads[v.0].get_or_insert_with(|| vec![0.0; len])
}

fn same_shape<T: Real>(a: &Tensor<T>, b: &Tensor<T>, what: &str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::dim(format!(
            "{what}: shapes {:?} and {:?} differ",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

fn matrix_dims<T: Real>(t: &Tensor<T>, what: &str) -> Result<(usize, usize)> {
    match t.shape() {
        [r, c] => Ok((*r, *c)),
        s => Err(Error::dim(format!("{what}: expected a matrix, got shape {s:?}"))),
    }
}

#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Row-wise softmax in `f64` with max subtraction.
pub fn softmax_rows<T: Real>(logits: &Tensor<T>) -> Vec<f64> {
    let c = logits.cols();
    let mut out = Vec::with_capacity(logits.len());
    for r in 0..logits.rows() {
        let row = logits.row_slice(r);
        let m = row
            .iter()
            .map(|v| v.wide())
            .fold(f64::NEG_INFINITY, f64::max);
        let start = out.len();
        let mut z = 0.0;
        for v in row {
            let e = (v.wide() - m).exp();
            z += e;
            out.push(e);
        }
        for p in &mut out[start..start + c] {
            *p /= z;
        }
    }
    out
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Trainable leaf; gradients are tracked.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = matrix_dims(self.value(a), "matmul lhs")?;
        let (k2, n) = matrix_dims(self.value(b), "matmul rhs")?;
        if k != k2 {
            return Err(Error::dim(format!(
                "matmul: inner dimensions {k} and {k2} disagree"
            )));
        }
        let out = matmul_into(self.value(a).data(), self.value(b).data(), m, k, n);
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(Tensor::new(vec![m, n], out)?, Op::MatMul(a, b), needs))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        same_shape(ta, tb, "add")?;
        let data = ta
            .data()
            .iter()
            .zip(tb.data())
            .map(|(&x, &y)| x + y)
            .collect();
        let value = Tensor::new(ta.shape().to_vec(), data)?;
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(value, Op::Add(a, b), needs))
    }

    /// Adds a bias row (`n` values) to every row of an `m × n` matrix.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(bias));
        let (_, n) = matrix_dims(ta, "add_row")?;
        if tb.len() != n {
            return Err(Error::dim(format!(
                "add_row: bias of {} values for {n} columns",
                tb.len()
            )));
        }
        let b = tb.data();
        let data = ta
            .data()
            .chunks_exact(n)
            .flat_map(|row| row.iter().zip(b).map(|(&x, &y)| x + y))
            .collect();
        let value = Tensor::new(ta.shape().to_vec(), data)?;
        let needs = self.needs(a) || self.needs(bias);
        Ok(self.push(value, Op::AddRow(a, bias), needs))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        same_shape(ta, tb, "mul")?;
        let data = ta
            .data()
            .iter()
            .zip(tb.data())
            .map(|(&x, &y)| x * y)
            .collect();
        let value = Tensor::new(ta.shape().to_vec(), data)?;
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(value, Op::Mul(a, b), needs))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let value = self.value(a).map(|x| T::of(x.wide() * s));
        let needs = self.needs(a);
        self.push(value, Op::Scale(a, s), needs)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|x| T::of(sigmoid(x.wide())));
        let needs = self.needs(a);
        self.push(value, Op::Sigmoid(a), needs)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|x| T::of(x.wide().tanh()));
        let needs = self.needs(a);
        self.push(value, Op::Tanh(a), needs)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self
            .value(a)
            .map(|x| if x > T::ZERO { x } else { T::ZERO });
        let needs = self.needs(a);
        self.push(value, Op::Relu(a), needs)
    }

    /// Joins matrices with equal row counts side by side.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::dim("concat_cols: no operands"));
        }
        let rows = matrix_dims(self.value(parts[0]), "concat_cols")?.0;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (r, c) = matrix_dims(self.value(p), "concat_cols")?;
            if r != rows {
                return Err(Error::dim(format!(
                    "concat_cols: row counts {rows} and {r} differ"
                )));
            }
            widths.push(c);
        }
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (&p, &w) in parts.iter().zip(&widths) {
                data.extend_from_slice(&self.value(p).data()[r * w..(r + 1) * w]);
            }
        }
        let needs = parts.iter().any(|&p| self.needs(p));
        Ok(self.push(
            Tensor::new(vec![rows, total], data)?,
            Op::ConcatCols(parts.to_vec()),
            needs,
        ))
    }

    /// Columns `start..end` of a matrix.
    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let (rows, cols) = matrix_dims(self.value(a), "slice_cols")?;
        if start >= end || end > cols {
            return Err(Error::dim(format!(
                "slice_cols: range {start}..{end} outside {cols} columns"
            )));
        }
        let src = self.value(a).data();
        let mut data = Vec::with_capacity(rows * (end - start));
        for r in 0..rows {
            data.extend_from_slice(&src[r * cols + start..r * cols + end]);
        }
        let needs = self.needs(a);
        Ok(self.push(
            Tensor::new(vec![rows, end - start], data)?,
            Op::SliceCols(a, start),
            needs,
        ))
    }

    /// Selects (and may repeat) rows of a matrix.
    pub fn gather_rows(&mut self, a: Var, rows: &[usize]) -> Result<Var> {
        let (n, cols) = matrix_dims(self.value(a), "gather_rows")?;
        if let Some(&bad) = rows.iter().find(|&&r| r >= n) {
            return Err(Error::OutOfRange { index: bad, len: n });
        }
        let src = self.value(a).data();
        let mut data = Vec::with_capacity(rows.len() * cols);
        for &r in rows {
            data.extend_from_slice(&src[r * cols..(r + 1) * cols]);
        }
        let needs = self.needs(a);
        Ok(self.push(
            Tensor::new(vec![rows.len(), cols], data)?,
            Op::GatherRows(a, rows.to_vec()),
            needs,
        ))
    }

    /// Per-row weighted superposition: `out[b, p] = Σ_k w[b, k] · s[b, k, p]`
    /// for `w: B × K` and `s: B × K × P`.
    pub fn compose(&mut self, weights: Var, slices: Var) -> Result<Var> {
        let (b, k) = matrix_dims(self.value(weights), "compose weights")?;
        let s = self.value(slices);
        let (sb, sk, p) = match s.shape() {
            [sb, sk, p] => (*sb, *sk, *p),
            other => {
                return Err(Error::dim(format!(
                    "compose: slices must be rank 3, got {other:?}"
                )))
            }
        };
        if sb != b || sk != k {
            return Err(Error::dim(format!(
                "compose: {k} weights per row for {sk} slices ({b} vs {sb} rows)"
            )));
        }
        let w = self.value(weights).data();
        let sd = s.data();
        let mut data = Vec::with_capacity(b * p);
        let mut acc = vec![0f64; p];
        for row in 0..b {
            acc.iter_mut().for_each(|v| *v = 0.0);
            for kk in 0..k {
                let wv = w[row * k + kk].wide();
                if wv == 0.0 {
                    continue;
                }
                let slice = &sd[(row * k + kk) * p..(row * k + kk + 1) * p];
                for (a, &x) in acc.iter_mut().zip(slice) {
                    *a += wv * x.wide();
                }
            }
            data.extend(acc.iter().map(|&v| T::of(v)));
        }
        let needs = self.needs(weights) || self.needs(slices);
        Ok(self.push(
            Tensor::new(vec![b, p], data)?,
            Op::Compose(weights, slices),
            needs,
        ))
    }

    /// Weighted softmax cross-entropy summed over rows:
    /// `Σ_b Σ_c q[b, c] · (−log softmax(z_b)_c)`.
    ///
    /// A class-index target is the one-hot row of `q`; the decision loss
    /// uses rows scaled by a per-step reward weight.
    pub fn softmax_xent(&mut self, logits: Var, q: &[f64]) -> Result<Var> {
        let z = self.value(logits);
        let (rows, c) = matrix_dims(z, "softmax_xent")?;
        if c == 0 {
            return Err(Error::dim("softmax_xent: empty logits"));
        }
        if q.len() != rows * c {
            return Err(Error::dim(format!(
                "softmax_xent: {} target weights for {rows}×{c} logits",
                q.len()
            )));
        }
        if q.iter().any(|&w| !(w >= 0.0)) {
            return Err(Error::Validation(
                "softmax_xent: target weights must be nonnegative".into(),
            ));
        }
        let probs = softmax_rows(z);
        let mut loss = 0.0;
        for r in 0..rows {
            let row = z.row_slice(r);
            let m = row
                .iter()
                .map(|v| v.wide())
                .fold(f64::NEG_INFINITY, f64::max);
            let lse = m + row.iter().map(|v| (v.wide() - m).exp()).sum::<f64>().ln();
            for (j, v) in row.iter().enumerate() {
                let w = q[r * c + j];
                if w != 0.0 {
                    loss += w * (lse - v.wide());
                }
            }
        }
        let needs = self.needs(logits);
        Ok(self.push(
            Tensor::scalar(T::of(loss)),
            Op::SoftmaxXent {
                logits,
                q: q.to_vec(),
                probs,
            },
            needs,
        ))
    }

    /// Summed cross-entropy against class indices.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let (rows, c) = matrix_dims(self.value(logits), "cross_entropy")?;
        if targets.len() != rows {
            return Err(Error::dim(format!(
                "cross_entropy: {} targets for {rows} rows",
                targets.len()
            )));
        }
        let mut q = vec![0.0; rows * c];
        for (r, &t) in targets.iter().enumerate() {
            if t >= c {
                return Err(Error::OutOfRange { index: t, len: c });
            }
            q[r * c + t] = 1.0;
        }
        self.softmax_xent(logits, &q)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).sum();
        let needs = self.needs(a);
        self.push(Tensor::scalar(T::of(s)), Op::Sum(a), needs)
    }

    /// Reverse sweep from a single-element root. Accumulators start at zero
    /// on every call.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        if self.value(root).len() != 1 {
            return Err(Error::dim(format!(
                "backward: root must be a scalar, got shape {:?}",
                self.value(root).shape()
            )));
        }
        let n = root.0 + 1;
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[root.0] = Some(vec![1.0]);

        for idx in (0..n).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            self.propagate(node, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Ok(Gradients {
            grads,
            shapes: self.nodes.iter().map(|n| n.value.shape().to_vec()).collect(),
        })
    }

    fn propagate(&self, node: &Node<T>, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let needs = |v: Var| self.nodes[v.0].needs_grad;
        let val = |v: Var| &self.nodes[v.0].value;

        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (val(*a), val(*b));
                let (m, k) = (ta.shape()[0], ta.shape()[1]);
                let n = tb.shape()[1];
                if needs(*a) {
                    matmul_nt_acc(g, tb.data(), m, k, n, slot(grads, &self.nodes, *a));
                }
                if needs(*b) {
                    matmul_tn_acc(ta.data(), g, m, k, n, slot(grads, &self.nodes, *b));
                }
            }
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    if needs(v) {
                        slot(grads, &self.nodes, v).iter_mut().zip(g).for_each(|(o, &x)| *o += x);
                    }
                }
            }
            Op::AddRow(a, bias) => {
                if needs(*a) {
                    slot(grads, &self.nodes, *a).iter_mut().zip(g).for_each(|(o, &x)| *o += x);
                }
                if needs(*bias) {
                    let gb = slot(grads, &self.nodes, *bias);
                    let n = gb.len();
                    for row in g.chunks_exact(n) {
                        gb.iter_mut().zip(row).for_each(|(o, &x)| *o += x);
                    }
                }
            }
            Op::Mul(a, b) => {
                if needs(*a) {
                    let other = val(*b).data();
                    slot(grads, &self.nodes, *a)
                        .iter_mut()
                        .zip(g)
                        .zip(other)
                        .for_each(|((o, &x), y)| *o += x * y.wide());
                }
                if needs(*b) {
                    let other = val(*a).data();
                    slot(grads, &self.nodes, *b)
                        .iter_mut()
                        .zip(g)
                        .zip(other)
                        .for_each(|((o, &x), y)| *o += x * y.wide());
                }
            }
            Op::Scale(a, s) => {
                slot(grads, &self.nodes, *a).iter_mut().zip(g).for_each(|(o, &x)| *o += x * s);
            }
            Op::Sigmoid(a) => {
                let y = node.value.data();
                slot(grads, &self.nodes, *a).iter_mut().zip(g).zip(y).for_each(|((o, &x), y)| {
                    let y = y.wide();
                    *o += x * y * (1.0 - y)
                });
            }
            Op::Tanh(a) => {
                let y = node.value.data();
                slot(grads, &self.nodes, *a).iter_mut().zip(g).zip(y).for_each(|((o, &x), y)| {
                    let y = y.wide();
                    *o += x * (1.0 - y * y)
                });
            }
            Op::Relu(a) => {
                let y = node.value.data();
                slot(grads, &self.nodes, *a).iter_mut().zip(g).zip(y).for_each(|((o, &x), y)| {
                    if *y > T::ZERO {
                        *o += x
                    }
                });
            }
            Op::ConcatCols(parts) => {
                let rows = node.value.shape()[0];
                let total = node.value.shape()[1];
                let mut offset = 0;
                for &p in parts {
                    let w = val(p).shape()[1];
                    if needs(p) {
                        let gp = slot(grads, &self.nodes, p);
                        for r in 0..rows {
                            let src = &g[r * total + offset..r * total + offset + w];
                            gp[r * w..(r + 1) * w]
                                .iter_mut()
                                .zip(src)
                                .for_each(|(o, &x)| *o += x);
                        }
                    }
                    offset += w;
                }
            }
            Op::SliceCols(a, start) => {
                let cols = val(*a).shape()[1];
                let w = node.value.shape()[1];
                let ga = slot(grads, &self.nodes, *a);
                for (r, src) in g.chunks_exact(w).enumerate() {
                    ga[r * cols + start..r * cols + start + w]
                        .iter_mut()
                        .zip(src)
                        .for_each(|(o, &x)| *o += x);
                }
            }
            Op::GatherRows(a, rows) => {
                let cols = node.value.shape()[1];
                let ga = slot(grads, &self.nodes, *a);
                for (src, &r) in g.chunks_exact(cols).zip(rows) {
                    ga[r * cols..(r + 1) * cols]
                        .iter_mut()
                        .zip(src)
                        .for_each(|(o, &x)| *o += x);
                }
            }
            Op::Compose(w, s) => {
                let (b, k) = (val(*w).shape()[0], val(*w).shape()[1]);
                let p = node.value.shape()[1];
                if needs(*w) {
                    let sd = val(*s).data();
                    let gw = slot(grads, &self.nodes, *w);
                    for row in 0..b {
                        let grow = &g[row * p..(row + 1) * p];
                        for kk in 0..k {
                            gw[row * k + kk] +=
                                dot_wide(grow, &sd[(row * k + kk) * p..(row * k + kk + 1) * p]);
                        }
                    }
                }
                if needs(*s) {
                    let wd = val(*w).data();
                    let gs = slot(grads, &self.nodes, *s);
                    for row in 0..b {
                        let grow = &g[row * p..(row + 1) * p];
                        for kk in 0..k {
                            let wv = wd[row * k + kk].wide();
                            gs[(row * k + kk) * p..(row * k + kk + 1) * p]
                                .iter_mut()
                                .zip(grow)
                                .for_each(|(o, &x)| *o += wv * x);
                        }
                    }
                }
            }
            Op::SoftmaxXent { logits, q, probs } => {
                let c = val(*logits).shape()[1];
                let gl = slot(grads, &self.nodes, *logits);
                let g0 = g[0];
                for (r, (qr, pr)) in q.chunks_exact(c).zip(probs.chunks_exact(c)).enumerate() {
                    let total: f64 = qr.iter().sum();
                    if total == 0.0 {
                        continue;
                    }
                    for j in 0..c {
                        gl[r * c + j] += g0 * (total * pr[j] - qr[j]);
                    }
                }
            }
            Op::Sum(a) => {
                let g0 = g[0];
                slot(grads, &self.nodes, *a).iter_mut().for_each(|o| *o += g0);
            }
        }
    }
}
