//! Dense row-major matrices and a reverse-mode tape over them.

use std::borrow::Cow;

#[derive(Debug, Clone, PartialEq)]
pub struct Mat {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(rows * cols, data.len(), "matrix data length");
        Self { rows, cols, data }
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn add_assign(&mut self, other: &Mat) {
        debug_assert_eq!(self.shape(), other.shape());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// `self · other`
    pub fn matmul(&self, other: &Mat) -> Mat {
        assert_eq!(self.cols, other.rows, "matmul inner dimension");
        let mut out = Mat::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let o = &mut out.data[i * other.cols..(i + 1) * other.cols];
            for (k, &a) in self.row(i).iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                for (x, &b) in o.iter_mut().zip(other.row(k)) {
                    *x += a * b;
                }
            }
        }
        out
    }

    /// `self · otherᵀ`
    pub fn matmul_t(&self, other: &Mat) -> Mat {
        assert_eq!(self.cols, other.cols, "matmul_t inner dimension");
        let mut out = Mat::zeros(self.rows, other.rows);
        for i in 0..self.rows {
            let a = self.row(i);
            for j in 0..other.rows {
                out.data[i * other.rows + j] = dot(a, other.row(j));
            }
        }
        out
    }

    /// `selfᵀ · other`
    pub fn t_matmul(&self, other: &Mat) -> Mat {
        assert_eq!(self.rows, other.rows, "t_matmul inner dimension");
        let mut out = Mat::zeros(self.cols, other.cols);
        for k in 0..self.rows {
            let b = other.row(k);
            for (i, &a) in self.row(k).iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                let o = &mut out.data[i * other.cols..(i + 1) * other.cols];
                for (x, &y) in o.iter_mut().zip(b) {
                    *x += a * y;
                }
            }
        }
        out
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub type NodeId = usize;

/// Which attention scores take part in a row-wise softmax.
#[derive(Debug, Clone)]
pub enum AttnMask {
    None,
    /// Query `i` sees keys `0..=i`.
    Causal,
    /// Per-key visibility, shared by all queries.
    Keys(Vec<bool>),
}

impl AttnMask {
    fn allows(&self, i: usize, j: usize) -> bool {
        match self {
            AttnMask::None => true,
            AttnMask::Causal => j <= i,
            AttnMask::Keys(k) => k[j],
        }
    }
}

const LN_EPS: f64 = 1e-5;

/// Centres and scales `row` to unit variance; returns the inverse std.
pub(crate) fn normalize_row(row: &mut [f64]) -> f64 {
    let n = row.len() as f64;
    let mean = row.iter().sum::<f64>() / n;
    let var = row.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    let inv = 1.0 / (var + LN_EPS).sqrt();
    row.iter_mut().for_each(|x| *x = (*x - mean) * inv);
    inv
}

/// Softmax over the entries `visible` admits; the rest become zero, as does
/// a row with nothing visible.
pub(crate) fn softmax_row(row: &mut [f64], visible: impl Fn(usize) -> bool) {
    let max = row
        .iter()
        .enumerate()
        .filter(|&(j, _)| visible(j))
        .map(|(_, &x)| x)
        .fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        row.iter_mut().for_each(|x| *x = 0.0);
        return;
    }
    let mut sum = 0.0;
    for (j, x) in row.iter_mut().enumerate() {
        if visible(j) {
            *x = (*x - max).exp();
            sum += *x;
        } else {
            *x = 0.0;
        }
    }
    row.iter_mut().for_each(|x| *x /= sum);
}

pub(crate) fn gelu(x: f64) -> f64 {
    const C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
    0.5 * x * (1.0 + (C * (x + 0.044715 * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    const C: f64 = 0.797_884_560_802_865_4;
    let u = C * (x + 0.044715 * x * x * x);
    let t = u.tanh();
    let du = C * (1.0 + 3.0 * 0.044715 * x * x);
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du
}

enum Op {
    Leaf,
    Param(usize),
    Gather { table: NodeId, ids: Vec<usize> },
    MatMul(NodeId, NodeId),
    MatMulT(NodeId, NodeId),
    Add(NodeId, NodeId),
    AddRow(NodeId, NodeId),
    MulRow(NodeId, NodeId),
    Scale(NodeId, f64),
    Gelu(NodeId),
    /// Row normalization without affine terms; keeps inverse std per row.
    Normalize { x: NodeId, inv_std: Vec<f64> },
    Softmax(NodeId),
    SliceCols { x: NodeId, start: usize },
    ConcatCols(Vec<NodeId>),
    Dropout { x: NodeId, keep: Vec<f64> },
    /// Summed negative log-likelihood of gold ids; `None` rows are masked.
    CrossEntropy { logits: NodeId, gold: Vec<Option<usize>>, probs: Mat },
}

struct Node<'p> {
    value: Cow<'p, Mat>,
    op: Op,
    needs_grad: bool,
}

/// Records operations as they are evaluated so gradients can be pulled back
/// through them afterwards.
pub struct Graph<'p> {
    nodes: Vec<Node<'p>>,
}

impl Default for Graph<'_> {
    fn default() -> Self {
        Self::new()
    }
}

impl<'p> Graph<'p> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn value(&self, id: NodeId) -> &Mat {
        &self.nodes[id].value
    }

    fn push(&mut self, value: Mat, op: Op, inputs: &[NodeId]) -> NodeId {
        let needs_grad = inputs.iter().any(|&i| self.nodes[i].needs_grad);
        self.nodes.push(Node {
            value: Cow::Owned(value),
            op,
            needs_grad,
        });
        self.nodes.len() - 1
    }

    pub fn constant(&mut self, value: Mat) -> NodeId {
        self.nodes.push(Node {
            value: Cow::Owned(value),
            op: Op::Leaf,
            needs_grad: false,
        });
        self.nodes.len() - 1
    }

    /// A trainable tensor; its gradient is reported under `index`.
    pub fn param(&mut self, value: &'p Mat, index: usize) -> NodeId {
        self.nodes.push(Node {
            value: Cow::Borrowed(value),
            op: Op::Param(index),
            needs_grad: true,
        });
        self.nodes.len() - 1
    }

    pub fn gather(&mut self, table: NodeId, ids: &[usize]) -> NodeId {
        let t = self.value(table);
        let mut out = Mat::zeros(ids.len(), t.cols);
        for (r, &id) in ids.iter().enumerate() {
            out.row_mut(r).copy_from_slice(t.row(id));
        }
        self.push(out, Op::Gather { table, ids: ids.to_vec() }, &[table])
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.value(a).matmul(self.value(b));
        self.push(v, Op::MatMul(a, b), &[a, b])
    }

    pub fn matmul_t(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.value(a).matmul_t(self.value(b));
        self.push(v, Op::MatMulT(a, b), &[a, b])
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let mut v = self.value(a).clone();
        v.add_assign(self.value(b));
        self.push(v, Op::Add(a, b), &[a, b])
    }

    pub fn add_row(&mut self, a: NodeId, row: NodeId) -> NodeId {
        let r = self.value(row);
        assert_eq!(r.rows, 1);
        let mut v = self.value(a).clone();
        for i in 0..v.rows {
            for (x, y) in v.row_mut(i).iter_mut().zip(&r.data) {
                *x += y;
            }
        }
        self.push(v, Op::AddRow(a, row), &[a, row])
    }

    pub fn mul_row(&mut self, a: NodeId, row: NodeId) -> NodeId {
        let r = self.value(row);
        assert_eq!(r.rows, 1);
        let mut v = self.value(a).clone();
        for i in 0..v.rows {
            for (x, y) in v.row_mut(i).iter_mut().zip(&r.data) {
                *x *= y;
            }
        }
        self.push(v, Op::MulRow(a, row), &[a, row])
    }

    pub fn scale(&mut self, a: NodeId, s: f64) -> NodeId {
        let mut v = self.value(a).clone();
        v.data.iter_mut().for_each(|x| *x *= s);
        self.push(v, Op::Scale(a, s), &[a])
    }

    pub fn gelu(&mut self, a: NodeId) -> NodeId {
        let mut v = self.value(a).clone();
        v.data.iter_mut().for_each(|x| *x = gelu(*x));
        self.push(v, Op::Gelu(a), &[a])
    }

    pub fn normalize(&mut self, x: NodeId) -> NodeId {
        let mut v = self.value(x).clone();
        let mut inv_std = Vec::with_capacity(v.rows);
        for r in 0..v.rows {
            inv_std.push(normalize_row(v.row_mut(r)));
        }
        self.push(v, Op::Normalize { x, inv_std }, &[x])
    }

    /// Row-wise softmax over the entries `mask` allows. Masked entries are
    /// zero; a row with nothing visible is all zeros.
    pub fn softmax(&mut self, x: NodeId, mask: AttnMask) -> NodeId {
        let mut v = self.value(x).clone();
        for i in 0..v.rows {
            softmax_row(v.row_mut(i), |j| mask.allows(i, j));
        }
        self.push(v, Op::Softmax(x), &[x])
    }

    pub fn slice_cols(&mut self, x: NodeId, start: usize, len: usize) -> NodeId {
        let src = self.value(x);
        let mut v = Mat::zeros(src.rows, len);
        for r in 0..src.rows {
            v.row_mut(r).copy_from_slice(&src.row(r)[start..start + len]);
        }
        self.push(v, Op::SliceCols { x, start }, &[x])
    }

    pub fn concat_cols(&mut self, parts: &[NodeId]) -> NodeId {
        let rows = self.value(parts[0]).rows;
        let cols: usize = parts.iter().map(|&p| self.value(p).cols).sum();
        let mut v = Mat::zeros(rows, cols);
        for r in 0..rows {
            let mut off = 0;
            for &p in parts {
                let src = self.value(p);
                v.row_mut(r)[off..off + src.cols].copy_from_slice(src.row(r));
                off += src.cols;
            }
        }
        self.push(v, Op::ConcatCols(parts.to_vec()), parts)
    }

    /// Multiplies elementwise by `keep`, which holds `0` or `1/(1-p)`.
    pub fn dropout(&mut self, x: NodeId, keep: Vec<f64>) -> NodeId {
        let mut v = self.value(x).clone();
        assert_eq!(keep.len(), v.data.len());
        for (a, k) in v.data.iter_mut().zip(&keep) {
            *a *= k;
        }
        self.push(v, Op::Dropout { x, keep }, &[x])
    }

    /// Sum over rows of `-ln softmax(row)[gold]`, as a 1×1 node.
    pub fn cross_entropy(&mut self, logits: NodeId, gold: &[Option<usize>]) -> NodeId {
        let l = self.value(logits);
        assert_eq!(l.rows, gold.len(), "one gold id per logits row");
        let mut probs = Mat::zeros(l.rows, l.cols);
        let mut total = 0.0;
        for (r, g) in gold.iter().enumerate() {
            let Some(g) = *g else { continue };
            let row = l.row(r);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let sum: f64 = row.iter().map(|x| (x - max).exp()).sum();
            let lse = max + sum.ln();
            total += lse - row[g];
            for (p, x) in probs.row_mut(r).iter_mut().zip(row) {
                *p = (x - lse).exp();
            }
        }
        let gold = gold.to_vec();
        self.push(Mat::from_vec(1, 1, vec![total]), Op::CrossEntropy { logits, gold, probs }, &[logits])
    }

    /// Gradients of the scalar node `root` with respect to every parameter,
    /// as `(param index, gradient)` pairs in graph order.
    pub fn backward(&self, root: NodeId) -> Vec<(usize, Mat)> {
        assert_eq!(self.value(root).shape(), (1, 1), "backward needs a scalar root");
        let mut grads: Vec<Option<Mat>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root] = Some(Mat::from_vec(1, 1, vec![1.0]));
        let mut out = Vec::new();

        for id in (0..=root).rev() {
            let node = &self.nodes[id];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            let mut acc = |target: NodeId, delta: Mat| {
                if !self.nodes[target].needs_grad {
                    return;
                }
                match &mut grads[target] {
                    Some(existing) => existing.add_assign(&delta),
                    slot @ None => *slot = Some(delta),
                }
            };
            match &node.op {
                Op::Leaf => {}
                Op::Param(index) => out.push((*index, g)),
                Op::Gather { table, ids } => {
                    let t = self.value(*table);
                    let mut d = Mat::zeros(t.rows, t.cols);
                    for (r, &row_id) in ids.iter().enumerate() {
                        for (x, y) in d.row_mut(row_id).iter_mut().zip(g.row(r)) {
                            *x += y;
                        }
                    }
                    acc(*table, d);
                }
                Op::MatMul(a, b) => {
                    if self.nodes[*a].needs_grad {
                        acc(*a, g.matmul_t(self.value(*b)));
                    }
                    if self.nodes[*b].needs_grad {
                        acc(*b, self.value(*a).t_matmul(&g));
                    }
                }
                Op::MatMulT(a, b) => {
                    // c = a bᵀ: da = g b, db = gᵀ a
                    if self.nodes[*a].needs_grad {
                        acc(*a, g.matmul(self.value(*b)));
                    }
                    if self.nodes[*b].needs_grad {
                        acc(*b, g.t_matmul(self.value(*a)));
                    }
                }
                Op::Add(a, b) => {
                    acc(*a, g.clone());
                    acc(*b, g);
                }
                Op::AddRow(a, row) => {
                    let mut dr = Mat::zeros(1, g.cols);
                    for r in 0..g.rows {
                        for (x, y) in dr.data.iter_mut().zip(g.row(r)) {
                            *x += y;
                        }
                    }
                    acc(*row, dr);
                    acc(*a, g);
                }
                Op::MulRow(a, row) => {
                    let av = self.value(*a);
                    let rv = self.value(*row);
                    let mut dr = Mat::zeros(1, g.cols);
                    let mut da = g.clone();
                    for r in 0..g.rows {
                        for c in 0..g.cols {
                            dr.data[c] += g.get(r, c) * av.get(r, c);
                            da.data[r * g.cols + c] *= rv.data[c];
                        }
                    }
                    acc(*row, dr);
                    acc(*a, da);
                }
                Op::Scale(a, s) => {
                    let mut d = g;
                    d.data.iter_mut().for_each(|x| *x *= s);
                    acc(*a, d);
                }
                Op::Gelu(a) => {
                    let x = self.value(*a);
                    let mut d = g;
                    for (dv, &xv) in d.data.iter_mut().zip(&x.data) {
                        *dv *= gelu_grad(xv);
                    }
                    acc(*a, d);
                }
                Op::Normalize { x, inv_std } => {
                    // y = (x - mean) * inv; dx = inv * (g - mean(g) - y * mean(g * y))
                    let y = &node.value;
                    let n = g.cols as f64;
                    let mut d = Mat::zeros(g.rows, g.cols);
                    for r in 0..g.rows {
                        let gr = g.row(r);
                        let yr = y.row(r);
                        let mg = gr.iter().sum::<f64>() / n;
                        let mgy = gr.iter().zip(yr).map(|(a, b)| a * b).sum::<f64>() / n;
                        for ((dv, &gv), &yv) in d.row_mut(r).iter_mut().zip(gr).zip(yr) {
                            *dv = inv_std[r] * (gv - mg - yv * mgy);
                        }
                    }
                    acc(*x, d);
                }
                Op::Softmax(x) => {
                    let p = &node.value;
                    let mut d = Mat::zeros(g.rows, g.cols);
                    for r in 0..g.rows {
                        let pr = p.row(r);
                        let gr = g.row(r);
                        let s: f64 = pr.iter().zip(gr).map(|(a, b)| a * b).sum();
                        for ((dv, &pv), &gv) in d.row_mut(r).iter_mut().zip(pr).zip(gr) {
                            *dv = pv * (gv - s);
                        }
                    }
                    acc(*x, d);
                }
                Op::SliceCols { x, start } => {
                    let src = self.value(*x);
                    let mut d = Mat::zeros(src.rows, src.cols);
                    for r in 0..g.rows {
                        d.row_mut(r)[*start..*start + g.cols].copy_from_slice(g.row(r));
                    }
                    acc(*x, d);
                }
                Op::ConcatCols(parts) => {
                    let mut off = 0;
                    for &p in parts {
                        let cols = self.value(p).cols;
                        let mut d = Mat::zeros(g.rows, cols);
                        for r in 0..g.rows {
                            d.row_mut(r).copy_from_slice(&g.row(r)[off..off + cols]);
                        }
                        off += cols;
                        acc(p, d);
                    }
                }
                Op::Dropout { x, keep } => {
                    let mut d = g;
                    for (dv, k) in d.data.iter_mut().zip(keep) {
                        *dv *= k;
                    }
                    acc(*x, d);
                }
                Op::CrossEntropy { logits, gold, probs } => {
                    let upstream = g.data[0];
                    let mut d = Mat::zeros(probs.rows, probs.cols);
                    for (r, gid) in gold.iter().enumerate() {
                        let Some(gid) = *gid else { continue };
                        for (dv, &pv) in d.row_mut(r).iter_mut().zip(probs.row(r)) {
                            *dv = upstream * pv;
                        }
                        d.data[r * probs.cols + gid] -= upstream;
                    }
                    acc(*logits, d);
                }
            }
        }
        out
    }
}
