//! Reverse-mode automatic differentiation over [`Tensor`] values.
//!
//! Operations are appended to a [`Tape`] in execution order and return a
//! [`Var`] handle. [`Tape::backward`] walks the recorded nodes in exact reverse
//! order, accumulating adjoints into per-node buffers whose shapes match the
//! primal values.
//!
//! Matrices are `[rows, cols]`; a vector `[d]` is treated as a single row by
//! the row-wise ops. Per-row scalars (norms, cosines) come back as `[rows, 1]`
//! columns so they can be concatenated with other features.

use super::tensor::{dot, norm, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(usize, usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    AddRow(usize, usize),
    Scale(usize, f64),
    AddScalar(usize),
    Relu(usize),
    Abs(usize),
    ConcatCols(Vec<usize>),
    SliceCols {
        src: usize,
        start: usize,
    },
    ConcatRows(Vec<usize>),
    GatherRows {
        src: usize,
        index: Vec<usize>,
    },
    EmbeddingBag {
        table: usize,
        bags: Vec<Vec<usize>>,
    },
    RowNorm(usize),
    L2NormalizeRows(usize),
    RowCosine {
        a: usize,
        b: usize,
    },
    SoftmaxCrossEntropy {
        logits: usize,
        probs: Tensor,
        targets: Tensor,
    },
    Sum(usize),
    Mean(usize),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

/// Single-writer recording of one forward computation.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Adjoints produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    adjoints: Vec<Option<Tensor>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient of the loss w.r.t. `var`; zeros if the loss does not depend on it.
    pub fn get(&self, var: Var) -> Tensor {
        match &self.adjoints[var.0] {
            Some(t) => t.clone(),
            None => Tensor::zeros(&self.shapes[var.0]),
        }
    }

    pub fn take(&mut self, var: Var) -> Tensor {
        self.adjoints[var.0]
            .take()
            .unwrap_or_else(|| Tensor::zeros(&self.shapes[var.0]))
    }
}

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(op, a.shape(), b.shape()));
    }
    Ok(())
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

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    /// Records an input. Parameters and constants are both leaves; only the
    /// caller decides which adjoints it reads back.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        Ok(self.push(value, Op::MatMul(a.0, b.0)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).zip_map(self.value(b), |x, y| x + y)?;
        Ok(self.push(value, Op::Add(a.0, b.0)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).zip_map(self.value(b), |x, y| x - y)?;
        Ok(self.push(value, Op::Sub(a.0, b.0)))
    }

    /// Elementwise (Hadamard) product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).zip_map(self.value(b), |x, y| x * y)?;
        Ok(self.push(value, Op::Mul(a.0, b.0)))
    }

    /// Adds vector `row` (length `cols`) to every row of `x`.
    pub fn add_row(&mut self, x: Var, row: Var) -> Result<Var> {
        let (xv, rv) = (self.value(x), self.value(row));
        if rv.len() != xv.cols() {
            return Err(Error::shape("add_row", &[xv.cols()], rv.shape()));
        }
        let mut value = xv.clone();
        for i in 0..value.rows() {
            for (o, &r) in value.row_mut(i).iter_mut().zip(rv.data()) {
                *o += r;
            }
        }
        Ok(self.push(value, Op::AddRow(x.0, row.0)))
    }

    /// `x W + b` for a `[n, in]` input, `[in, out]` weight and `[out]` bias.
    pub fn linear(&mut self, x: Var, weight: Var, bias: Var) -> Result<Var> {
        let xw = self.matmul(x, weight)?;
        self.add_row(xw, bias)
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        let value = self.value(x).map(|v| v * factor);
        self.push(value, Op::Scale(x.0, factor))
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Var {
        let value = self.value(x).map(|v| v + c);
        self.push(value, Op::AddScalar(x.0))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let value = self.value(x).map(|v| v.max(0.0));
        self.push(value, Op::Relu(x.0))
    }

    pub fn abs(&mut self, x: Var) -> Var {
        let value = self.value(x).map(f64::abs);
        self.push(value, Op::Abs(x.0))
    }

    /// Column-wise concatenation of matrices with equal row counts.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts.first().ok_or(Error::EmptyInput("concat_cols"))?;
        let rows = self.value(*first).rows();
        let mut total = 0;
        for p in parts {
            let v = self.value(*p);
            if v.rows() != rows {
                return Err(Error::shape("concat_cols", &[rows], &[v.rows()]));
            }
            total += v.cols();
        }
        let mut data = Vec::with_capacity(rows * total);
        for i in 0..rows {
            for p in parts {
                data.extend_from_slice(self.value(*p).row(i));
            }
        }
        let value = Tensor::matrix(rows, total, data)?;
        Ok(self.push(value, Op::ConcatCols(parts.iter().map(|p| p.0).collect())))
    }

    /// Columns `start..end` of `x`.
    pub fn slice_cols(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let xv = self.value(x);
        if start >= end || end > xv.cols() {
            return Err(Error::shape("slice_cols", &[xv.cols()], &[start, end]));
        }
        let rows = xv.rows();
        let mut data = Vec::with_capacity(rows * (end - start));
        for i in 0..rows {
            data.extend_from_slice(&xv.row(i)[start..end]);
        }
        let value = Tensor::matrix(rows, end - start, data)?;
        Ok(self.push(value, Op::SliceCols { src: x.0, start }))
    }

    /// Row-wise concatenation of matrices with equal column counts.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts.first().ok_or(Error::EmptyInput("concat_rows"))?;
        let cols = self.value(*first).cols();
        let mut rows = 0;
        let mut data = Vec::new();
        for p in parts {
            let v = self.value(*p);
            if v.cols() != cols {
                return Err(Error::shape("concat_rows", &[cols], &[v.cols()]));
            }
            rows += v.rows();
            data.extend_from_slice(v.data());
        }
        let value = Tensor::matrix(rows, cols, data)?;
        Ok(self.push(value, Op::ConcatRows(parts.iter().map(|p| p.0).collect())))
    }

    pub fn gather_rows(&mut self, x: Var, index: &[usize]) -> Result<Var> {
        let xv = self.value(x);
        if index.is_empty() {
            return Err(Error::EmptyInput("gather_rows"));
        }
        if let Some(&bad) = index.iter().find(|&&i| i >= xv.rows()) {
            return Err(Error::shape("gather_rows", &[xv.rows()], &[bad]));
        }
        let mut data = Vec::with_capacity(index.len() * xv.cols());
        for &i in index {
            data.extend_from_slice(xv.row(i));
        }
        let value = Tensor::matrix(index.len(), xv.cols(), data)?;
        Ok(self.push(
            value,
            Op::GatherRows {
                src: x.0,
                index: index.to_vec(),
            },
        ))
    }

    /// Mean of the `table` rows named by each bag; one output row per bag.
    pub fn embedding_bag(&mut self, table: Var, bags: &[Vec<usize>]) -> Result<Var> {
        let tv = self.value(table);
        if bags.is_empty() {
            return Err(Error::EmptyInput("embedding_bag"));
        }
        let d = tv.cols();
        let mut data = vec![0.0; bags.len() * d];
        for (b, bag) in bags.iter().enumerate() {
            if bag.is_empty() {
                return Err(Error::EmptyInput("embedding_bag row"));
            }
            let out = &mut data[b * d..(b + 1) * d];
            for &id in bag {
                if id >= tv.rows() {
                    return Err(Error::shape("embedding_bag", &[tv.rows()], &[id]));
                }
                for (o, &e) in out.iter_mut().zip(tv.row(id)) {
                    *o += e;
                }
            }
            let inv = 1.0 / bag.len() as f64;
            out.iter_mut().for_each(|o| *o *= inv);
        }
        let value = Tensor::matrix(bags.len(), d, data)?;
        Ok(self.push(
            value,
            Op::EmbeddingBag {
                table: table.0,
                bags: bags.to_vec(),
            },
        ))
    }

    /// Euclidean norm of each row, as a `[rows, 1]` column.
    pub fn row_norm(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let data: Vec<f64> = (0..xv.rows()).map(|i| norm(xv.row(i))).collect();
        let value = Tensor::matrix(data.len(), 1, data).expect("rows > 0");
        self.push(value, Op::RowNorm(x.0))
    }

    /// Euclidean distance between corresponding rows of `a` and `b`.
    pub fn euclidean_distance(&mut self, a: Var, b: Var) -> Result<Var> {
        let diff = self.sub(a, b)?;
        Ok(self.row_norm(diff))
    }

    /// Scales each row to unit length. Zero rows stay zero.
    pub fn l2_normalize(&mut self, x: Var) -> Var {
        let mut value = self.value(x).clone();
        for i in 0..value.rows() {
            let n = norm(value.row(i));
            if n > 0.0 {
                value.row_mut(i).iter_mut().for_each(|v| *v /= n);
            }
        }
        self.push(value, Op::L2NormalizeRows(x.0))
    }

    /// Cosine similarity of corresponding rows, `[rows, 1]`. A row pair with a
    /// zero-norm side yields 0 and contributes no gradient.
    pub fn row_cosine(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        same_shape("row_cosine", av, bv)?;
        let data: Vec<f64> = (0..av.rows())
            .map(|i| {
                let (x, y) = (av.row(i), bv.row(i));
                let (nx, ny) = (norm(x), norm(y));
                if nx == 0.0 || ny == 0.0 {
                    0.0
                } else {
                    (dot(x, y) / (nx * ny)).clamp(-1.0, 1.0)
                }
            })
            .collect();
        let value = Tensor::matrix(data.len(), 1, data)?;
        Ok(self.push(value, Op::RowCosine { a: a.0, b: b.0 }))
    }

    /// Mean over rows of `-sum_k y_k log softmax(x)_k`. `targets` holds one
    /// probability row per logit row (one-hot for hard labels).
    pub fn softmax_cross_entropy(&mut self, logits: Var, targets: &Tensor) -> Result<Var> {
        let lv = self.value(logits);
        same_shape("softmax_cross_entropy", lv, targets)?;
        let n = lv.rows();
        let mut probs = lv.clone();
        let mut total = 0.0;
        for i in 0..n {
            let row = lv.row(i);
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let sum_exp = row.iter().fold(0.0, |acc, &v| acc + (v - max).exp());
            let log_z = max + sum_exp.ln();
            let mut loss = 0.0;
            for (k, (&l, &y)) in row.iter().zip(targets.row(i)).enumerate() {
                if y != 0.0 {
                    loss -= y * (l - log_z);
                }
                probs.row_mut(i)[k] = (l - log_z).exp();
            }
            total += loss;
        }
        let value = Tensor::scalar(total / n as f64);
        Ok(self.push(
            value,
            Op::SoftmaxCrossEntropy {
                logits: logits.0,
                probs,
                targets: targets.clone(),
            },
        ))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let value = Tensor::scalar(self.value(x).sum());
        self.push(value, Op::Sum(x.0))
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let value = Tensor::scalar(xv.sum() / xv.len() as f64);
        self.push(value, Op::Mean(x.0))
    }

    /// Propagates `d loss / d node` from a single-element `loss` back to
    /// every node, visiting nodes in exact reverse execution order.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(Error::shape("backward", &[1], lv.shape()));
        }
        let mut adj: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        adj[loss.0] = Some(Tensor::filled(lv.shape(), 1.0));

        for idx in (0..=loss.0).rev() {
            let Some(g) = adj[idx].take() else { continue };
            let node = &self.nodes[idx];
            self.propagate(node, &g, &mut adj);
            adj[idx] = Some(g);
        }

        adj.resize(self.nodes.len(), None);
        Ok(Gradients {
            adjoints: adj,
            shapes: self.nodes.iter().map(|n| n.value.shape().to_vec()).collect(),
        })
    }

    fn propagate(&self, node: &Node, g: &Tensor, adj: &mut [Option<Tensor>]) {
        let val = |i: usize| &self.nodes[i].value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                let ga = g.matmul(&bv.transpose()).expect("matmul grad");
                let gb = av.transpose().matmul(g).expect("matmul grad");
                accumulate(adj, *a, reshape_like(ga, av));
                accumulate(adj, *b, reshape_like(gb, bv));
            }
            Op::Add(a, b) => {
                accumulate(adj, *a, g.clone());
                accumulate(adj, *b, g.clone());
            }
            Op::Sub(a, b) => {
                accumulate(adj, *a, g.clone());
                accumulate(adj, *b, g.map(|v| -v));
            }
            Op::Mul(a, b) => {
                let ga = g.zip_map(val(*b), |x, y| x * y).expect("mul grad");
                let gb = g.zip_map(val(*a), |x, y| x * y).expect("mul grad");
                accumulate(adj, *a, ga);
                accumulate(adj, *b, gb);
            }
            Op::AddRow(x, row) => {
                accumulate(adj, *x, g.clone());
                let rv = val(*row);
                let mut gr = vec![0.0; rv.len()];
                for i in 0..g.rows() {
                    for (o, &v) in gr.iter_mut().zip(g.row(i)) {
                        *o += v;
                    }
                }
                accumulate(adj, *row, Tensor::new(rv.shape().to_vec(), gr).expect("bias grad"));
            }
            Op::Scale(x, f) => accumulate(adj, *x, g.map(|v| v * f)),
            Op::AddScalar(x) => accumulate(adj, *x, g.clone()),
            Op::Relu(x) => {
                let gx = g
                    .zip_map(val(*x), |gv, xv| if xv > 0.0 { gv } else { 0.0 })
                    .expect("relu grad");
                accumulate(adj, *x, gx);
            }
            Op::Abs(x) => {
                let gx = g.zip_map(val(*x), |gv, xv| gv * sign(xv)).expect("abs grad");
                accumulate(adj, *x, gx);
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let pv = val(p);
                    let c = pv.cols();
                    let mut data = Vec::with_capacity(pv.len());
                    for i in 0..g.rows() {
                        data.extend_from_slice(&g.row(i)[offset..offset + c]);
                    }
                    offset += c;
                    accumulate(adj, p, Tensor::new(pv.shape().to_vec(), data).expect("concat grad"));
                }
            }
            Op::SliceCols { src, start } => {
                let sv = val(*src);
                let mut gs = Tensor::zeros(sv.shape());
                for i in 0..g.rows() {
                    gs.row_mut(i)[*start..*start + g.cols()].copy_from_slice(g.row(i));
                }
                accumulate(adj, *src, gs);
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let pv = val(p);
                    let data = g.data()[offset..offset + pv.len()].to_vec();
                    offset += pv.len();
                    accumulate(adj, p, Tensor::new(pv.shape().to_vec(), data).expect("concat grad"));
                }
            }
            Op::GatherRows { src, index } => {
                let mut gs = Tensor::zeros(val(*src).shape());
                for (r, &i) in index.iter().enumerate() {
                    for (o, &v) in gs.row_mut(i).iter_mut().zip(g.row(r)) {
                        *o += v;
                    }
                }
                accumulate(adj, *src, gs);
            }
            Op::EmbeddingBag { table, bags } => {
                let mut gt = Tensor::zeros(val(*table).shape());
                for (b, bag) in bags.iter().enumerate() {
                    let inv = 1.0 / bag.len() as f64;
                    for &id in bag {
                        for (o, &v) in gt.row_mut(id).iter_mut().zip(g.row(b)) {
                            *o += v * inv;
                        }
                    }
                }
                accumulate(adj, *table, gt);
            }
            Op::RowNorm(x) => {
                let xv = val(*x);
                let mut gx = Tensor::zeros(xv.shape());
                for i in 0..xv.rows() {
                    let r = node.value.data()[i];
                    if r > 0.0 {
                        let s = g.data()[i] / r;
                        for (o, &v) in gx.row_mut(i).iter_mut().zip(xv.row(i)) {
                            *o = s * v;
                        }
                    }
                }
                accumulate(adj, *x, gx);
            }
            Op::L2NormalizeRows(x) => {
                let xv = val(*x);
                let y = &node.value;
                let mut gx = Tensor::zeros(xv.shape());
                for i in 0..xv.rows() {
                    let n = norm(xv.row(i));
                    if n > 0.0 {
                        let yg = dot(y.row(i), g.row(i));
                        for ((o, &gv), &yv) in gx.row_mut(i).iter_mut().zip(g.row(i)).zip(y.row(i)) {
                            *o = (gv - yv * yg) / n;
                        }
                    }
                }
                accumulate(adj, *x, gx);
            }
            Op::RowCosine { a, b } => {
                let (av, bv) = (val(*a), val(*b));
                let mut ga = Tensor::zeros(av.shape());
                let mut gb = Tensor::zeros(bv.shape());
                for i in 0..av.rows() {
                    let (x, y) = (av.row(i), bv.row(i));
                    let (nx, ny) = (norm(x), norm(y));
                    if nx == 0.0 || ny == 0.0 {
                        continue;
                    }
                    let s = dot(x, y) / (nx * ny);
                    let gi = g.data()[i];
                    for (j, o) in ga.row_mut(i).iter_mut().enumerate() {
                        *o = gi * (y[j] / (nx * ny) - s * x[j] / (nx * nx));
                    }
                    for (j, o) in gb.row_mut(i).iter_mut().enumerate() {
                        *o = gi * (x[j] / (nx * ny) - s * y[j] / (ny * ny));
                    }
                }
                accumulate(adj, *a, ga);
                accumulate(adj, *b, gb);
            }
            Op::SoftmaxCrossEntropy { logits, probs, targets } => {
                let scale = g.data()[0] / probs.rows() as f64;
                let mut gl = probs.clone();
                for i in 0..probs.rows() {
                    let t_sum: f64 = targets.row(i).iter().sum();
                    for (o, &t) in gl.row_mut(i).iter_mut().zip(targets.row(i)) {
                        *o = scale * (*o * t_sum - t);
                    }
                }
                accumulate(adj, *logits, gl);
            }
            Op::Sum(x) => {
                accumulate(adj, *x, Tensor::filled(val(*x).shape(), g.data()[0]));
            }
            Op::Mean(x) => {
                let xv = val(*x);
                let v = g.data()[0] / xv.len() as f64;
                accumulate(adj, *x, Tensor::filled(xv.shape(), v));
            }
        }
    }
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn reshape_like(t: Tensor, like: &Tensor) -> Tensor {
    if t.shape() == like.shape() {
        t
    } else {
        t.reshape(like.shape().to_vec()).expect("same element count")
    }
}

fn accumulate(adj: &mut [Option<Tensor>], idx: usize, g: Tensor) {
    match &mut adj[idx] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}
