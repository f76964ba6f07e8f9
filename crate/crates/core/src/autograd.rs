//! A small reverse-mode automatic differentiation tape over [`Matrix`].
//!
//! A [`Graph`] is built fresh for every forward pass. Nodes are appended in
//! evaluation order, so the backward sweep simply walks them in reverse.

use std::collections::HashMap;
use std::sync::Arc;

use crate::geometry;
use crate::nn::{ParamId, ParamStore};
use crate::tensor::{gemm, Matrix};

const LN_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Param,
    MatMul { a: Var, b: Var, tb: bool },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    MulCol(Var, Var),
    Scale(Var, f64),
    Gelu(Var),
    Sigmoid(Var),
    Softplus(Var),
    SoftmaxRows(Var),
    LayerNormRows(Var),
    Transpose(Var),
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    SliceRows { x: Var, start: usize },
    SliceCols { x: Var, start: usize },
    GatherRows { x: Var, idx: Vec<usize> },
    SegmentSum { x: Var, seg: Vec<usize> },
    NormalizeRows(Var),
    SumAll(Var),
    MeanAll(Var),
    SoftmaxXent { logits: Var, targets: Vec<usize> },
    Mse { x: Var, target: Arc<Matrix> },
    Mmd { q: Var, prior: Arc<Matrix> },
}

struct Node {
    value: Arc<Matrix>,
    op: Op,
    grad: bool,
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    params: HashMap<ParamId, Var>,
}

/// Gradients produced by [`Graph::backward`].
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
    params: Vec<(ParamId, Var)>,
}

impl Gradients {
    pub fn wrt(&self, v: Var) -> Option<&Matrix> {
        self.grads[v.0].as_ref()
    }

    /// Gradient for every parameter that took part in the pass.
    pub fn params(&self) -> impl Iterator<Item = (ParamId, &Matrix)> + '_ {
        self.params
            .iter()
            .filter_map(|(id, v)| self.grads[v.0].as_ref().map(|g| (*id, g)))
    }
}

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

fn gelu_deriv(x: f64) -> f64 {
    let t = (GELU_C * (x + 0.044715 * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * 0.044715 * x * x)
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^x)` without overflow.
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    row.iter_mut().for_each(|v| *v /= sum);
}

fn accumulate(slot: &mut Option<Matrix>, delta: Matrix) {
    match slot {
        Some(g) => g.add_assign(&delta),
        None => *slot = Some(delta),
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    /// Value of a `1 × 1` node.
    pub fn scalar(&self, v: Var) -> f64 {
        let m = self.value(v);
        debug_assert_eq!(m.shape(), (1, 1));
        m.data()[0]
    }

    fn push(&mut self, value: Matrix, op: Op, grad: bool) -> Var {
        self.push_arc(Arc::new(value), op, grad)
    }

    fn push_arc(&mut self, value: Arc<Matrix>, op: Op, grad: bool) -> Var {
        self.nodes.push(Node { value, op, grad });
        Var(self.nodes.len() - 1)
    }

    fn g(&self, v: Var) -> bool {
        self.nodes[v.0].grad
    }

    /// A leaf that receives a gradient.
    pub fn input(&mut self, m: Matrix) -> Var {
        self.push(m, Op::Leaf, true)
    }

    /// A leaf that never receives a gradient.
    pub fn constant(&mut self, m: Matrix) -> Var {
        self.push(m, Op::Leaf, false)
    }

    pub fn constant_arc(&mut self, m: Arc<Matrix>) -> Var {
        self.push_arc(m, Op::Leaf, false)
    }

    /// Records a parameter, reusing the node if it was already recorded.
    /// Parameters that are not trainable enter as constants.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(v) = self.params.get(&id) {
            return *v;
        }
        let trainable = store.is_trainable(id);
        let v = self.push_arc(store.value_arc(id), Op::Param, trainable);
        self.params.insert(id, v);
        v
    }

    /// Same value, cut from the gradient path.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.nodes[v.0].value.clone();
        self.push_arc(value, Op::Leaf, false)
    }

    /// `a · b`, or `a · bᵀ` when `transpose_b`.
    pub fn matmul_opt(&mut self, a: Var, b: Var, transpose_b: bool) -> Var {
        let (am, bm) = (self.value(a), self.value(b));
        let n = if transpose_b { bm.rows() } else { bm.cols() };
        let mut out = Matrix::zeros(am.rows(), n);
        gemm(1.0, am, false, bm, transpose_b, 0.0, &mut out);
        let grad = self.g(a) || self.g(b);
        self.push(out, Op::MatMul { a, b, tb: transpose_b }, grad)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        self.matmul_opt(a, b, false)
    }

    pub fn matmul_t(&mut self, a: Var, b: Var) -> Var {
        self.matmul_opt(a, b, true)
    }

    fn zip(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Var {
        let (am, bm) = (self.value(a), self.value(b));
        assert_eq!(am.shape(), bm.shape(), "elementwise shape mismatch");
        let data = am.data().iter().zip(bm.data()).map(|(&x, &y)| f(x, y)).collect();
        let out = Matrix::from_vec(am.rows(), am.cols(), data);
        let grad = self.g(a) || self.g(b);
        self.push(out, op, grad)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.zip(a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.zip(a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.zip(a, b, |x, y| x * y, Op::Mul(a, b))
    }

    /// Adds a `1 × n` row to every row of `x`.
    pub fn add_row(&mut self, x: Var, row: Var) -> Var {
        let (xm, rm) = (self.value(x), self.value(row));
        assert_eq!((1, xm.cols()), rm.shape(), "add_row shape");
        let mut out = xm.clone();
        for r in 0..out.rows() {
            for (o, b) in out.row_mut(r).iter_mut().zip(rm.data()) {
                *o += b;
            }
        }
        let grad = self.g(x) || self.g(row);
        self.push(out, Op::AddRow(x, row), grad)
    }

    /// Multiplies every row of `x` elementwise by a `1 × n` row.
    pub fn mul_row(&mut self, x: Var, row: Var) -> Var {
        let (xm, rm) = (self.value(x), self.value(row));
        assert_eq!((1, xm.cols()), rm.shape(), "mul_row shape");
        let mut out = xm.clone();
        for r in 0..out.rows() {
            for (o, b) in out.row_mut(r).iter_mut().zip(rm.data()) {
                *o *= b;
            }
        }
        let grad = self.g(x) || self.g(row);
        self.push(out, Op::MulRow(x, row), grad)
    }

    /// Scales row `i` of `x` by entry `i` of an `n × 1` column.
    pub fn mul_col(&mut self, x: Var, col: Var) -> Var {
        let (xm, cm) = (self.value(x), self.value(col));
        assert_eq!((xm.rows(), 1), cm.shape(), "mul_col shape");
        let mut out = xm.clone();
        for r in 0..out.rows() {
            let c = cm.data()[r];
            out.row_mut(r).iter_mut().for_each(|o| *o *= c);
        }
        let grad = self.g(x) || self.g(col);
        self.push(out, Op::MulCol(x, col), grad)
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Var {
        let out = self.value(x).map(|v| v * s);
        let grad = self.g(x);
        self.push(out, Op::Scale(x, s), grad)
    }

    pub fn gelu(&mut self, x: Var) -> Var {
        let out = self.value(x).map(gelu);
        let grad = self.g(x);
        self.push(out, Op::Gelu(x), grad)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let out = self.value(x).map(sigmoid);
        let grad = self.g(x);
        self.push(out, Op::Sigmoid(x), grad)
    }

    pub fn softplus(&mut self, x: Var) -> Var {
        let out = self.value(x).map(softplus);
        let grad = self.g(x);
        self.push(out, Op::Softplus(x), grad)
    }

    pub fn softmax_rows(&mut self, x: Var) -> Var {
        let mut out = self.value(x).clone();
        for r in 0..out.rows() {
            softmax_in_place(out.row_mut(r));
        }
        let grad = self.g(x);
        self.push(out, Op::SoftmaxRows(x), grad)
    }

    /// Per-row standardization without affine parameters.
    pub fn layer_norm_rows(&mut self, x: Var) -> Var {
        let mut out = self.value(x).clone();
        for r in 0..out.rows() {
            let row = out.row_mut(r);
            let n = row.len() as f64;
            let mean = row.iter().sum::<f64>() / n;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            let inv = 1.0 / (var + LN_EPS).sqrt();
            row.iter_mut().for_each(|v| *v = (*v - mean) * inv);
        }
        let grad = self.g(x);
        self.push(out, Op::LayerNormRows(x), grad)
    }

    pub fn transpose(&mut self, x: Var) -> Var {
        let out = self.value(x).transpose();
        let grad = self.g(x);
        self.push(out, Op::Transpose(x), grad)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let cols = self.value(parts[0]).cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let m = self.value(p);
            assert_eq!(m.cols(), cols, "concat_rows width");
            data.extend_from_slice(m.data());
            rows += m.rows();
        }
        let grad = parts.iter().any(|&p| self.g(p));
        self.push(Matrix::from_vec(rows, cols, data), Op::ConcatRows(parts.to_vec()), grad)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let rows = self.value(parts[0]).rows();
        let cols: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut out = Matrix::zeros(rows, cols);
        let mut off = 0;
        for &p in parts {
            let m = self.value(p);
            assert_eq!(m.rows(), rows, "concat_cols height");
            for r in 0..rows {
                out.row_mut(r)[off..off + m.cols()].copy_from_slice(m.row(r));
            }
            off += m.cols();
        }
        let grad = parts.iter().any(|&p| self.g(p));
        self.push(out, Op::ConcatCols(parts.to_vec()), grad)
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Var {
        let m = self.value(x);
        assert!(start + len <= m.rows(), "slice_rows range");
        let out = Matrix::from_vec(len, m.cols(), m.data()[start * m.cols()..(start + len) * m.cols()].to_vec());
        let grad = self.g(x);
        self.push(out, Op::SliceRows { x, start }, grad)
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Var {
        let m = self.value(x);
        assert!(start + len <= m.cols(), "slice_cols range");
        let mut out = Matrix::zeros(m.rows(), len);
        for r in 0..m.rows() {
            out.row_mut(r).copy_from_slice(&m.row(r)[start..start + len]);
        }
        let grad = self.g(x);
        self.push(out, Op::SliceCols { x, start }, grad)
    }

    /// Row `i` of the output is row `idx[i]` of `x`.
    pub fn gather_rows(&mut self, x: Var, idx: &[usize]) -> Var {
        let m = self.value(x);
        let mut out = Matrix::zeros(idx.len(), m.cols());
        for (i, &j) in idx.iter().enumerate() {
            out.row_mut(i).copy_from_slice(m.row(j));
        }
        let grad = self.g(x);
        self.push(out, Op::GatherRows { x, idx: idx.to_vec() }, grad)
    }

    /// Sums rows of `x` into `segments` output rows; row `i` goes to `seg[i]`.
    pub fn segment_sum(&mut self, x: Var, seg: &[usize], segments: usize) -> Var {
        let m = self.value(x);
        assert_eq!(seg.len(), m.rows(), "segment ids length");
        let mut out = Matrix::zeros(segments, m.cols());
        for (i, &s) in seg.iter().enumerate() {
            for (o, v) in out.row_mut(s).iter_mut().zip(m.row(i)) {
                *o += v;
            }
        }
        let grad = self.g(x);
        self.push(out, Op::SegmentSum { x, seg: seg.to_vec() }, grad)
    }

    /// Divides each row by its sum. Rows must have a positive sum.
    pub fn normalize_rows(&mut self, x: Var) -> Var {
        let mut out = self.value(x).clone();
        for r in 0..out.rows() {
            let row = out.row_mut(r);
            let s: f64 = row.iter().sum();
            row.iter_mut().for_each(|v| *v /= s);
        }
        let grad = self.g(x);
        self.push(out, Op::NormalizeRows(x), grad)
    }

    pub fn sum_all(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        let grad = self.g(x);
        self.push(Matrix::filled(1, 1, s), Op::SumAll(x), grad)
    }

    pub fn mean_all(&mut self, x: Var) -> Var {
        let m = self.value(x);
        let s = m.data().iter().sum::<f64>() / m.len() as f64;
        let grad = self.g(x);
        self.push(Matrix::filled(1, 1, s), Op::MeanAll(x), grad)
    }

    /// Mean softmax cross-entropy of `logits` rows against class `targets`.
    pub fn softmax_xent(&mut self, logits: Var, targets: &[usize]) -> Var {
        let m = self.value(logits);
        assert_eq!(m.rows(), targets.len(), "one target per row");
        let mut total = 0.0;
        for (r, &t) in targets.iter().enumerate() {
            let row = m.row(r);
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            total += lse - row[t];
        }
        let loss = total / targets.len() as f64;
        let grad = self.g(logits);
        self.push(
            Matrix::filled(1, 1, loss),
            Op::SoftmaxXent {
                logits,
                targets: targets.to_vec(),
            },
            grad,
        )
    }

    /// Mean squared error against a constant target.
    pub fn mse(&mut self, x: Var, target: Arc<Matrix>) -> Var {
        let m = self.value(x);
        assert_eq!(m.shape(), target.shape(), "mse shape");
        let loss = m.data().iter().zip(target.data()).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / m.len() as f64;
        let grad = self.g(x);
        self.push(Matrix::filled(1, 1, loss), Op::Mse { x, target }, grad)
    }

    /// Unbiased information-diffusion MMD between the rows of `q` and a
    /// constant batch of prior samples of the same shape.
    pub fn mmd_idk(&mut self, q: Var, prior: Arc<Matrix>) -> crate::error::Result<Var> {
        let m = self.value(q);
        if m.shape() != prior.shape() {
            return Err(crate::error::CwtmError::Shape(format!(
                "MMD batches {:?} vs {:?}",
                m.shape(),
                prior.shape()
            )));
        }
        let v = geometry::mmd_idk_flat(m.data(), prior.data(), m.rows(), m.cols())?;
        let grad = self.g(q);
        Ok(self.push(Matrix::filled(1, 1, v), Op::Mmd { q, prior }, grad))
    }

    /// Reverse sweep from a scalar output.
    pub fn backward(&self, output: Var) -> Gradients {
        assert_eq!(self.value(output).shape(), (1, 1), "backward needs a scalar");
        let mut grads: Vec<Option<Matrix>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[output.0] = Some(Matrix::filled(1, 1, 1.0));
        for i in (0..=output.0).rev() {
            let node = &self.nodes[i];
            if !node.grad {
                continue;
            }
            let Some(dy) = grads[i].take() else { continue };
            self.backprop_node(node, &dy, &mut grads);
            grads[i] = Some(dy);
        }
        let mut params: Vec<(ParamId, Var)> = self.params.iter().map(|(k, v)| (*k, *v)).collect();
        params.sort_by_key(|(id, _)| *id);
        Gradients { grads, params }
    }

    fn backprop_node(&self, node: &Node, dy: &Matrix, grads: &mut [Option<Matrix>]) {
        let y = &*node.value;
        let send = |v: Var, delta: Matrix, grads: &mut [Option<Matrix>]| {
            if self.g(v) {
                accumulate(&mut grads[v.0], delta);
            }
        };
        match &node.op {
            Op::Leaf | Op::Param => {}
            Op::MatMul { a, b, tb } => {
                let (am, bm) = (self.value(*a), self.value(*b));
                if self.g(*a) {
                    let mut da = Matrix::zeros(am.rows(), am.cols());
                    gemm(1.0, dy, false, bm, !tb, 0.0, &mut da);
                    send(*a, da, grads);
                }
                if self.g(*b) {
                    let mut db = Matrix::zeros(bm.rows(), bm.cols());
                    if *tb {
                        gemm(1.0, dy, true, am, false, 0.0, &mut db);
                    } else {
                        gemm(1.0, am, true, dy, false, 0.0, &mut db);
                    }
                    send(*b, db, grads);
                }
            }
            Op::Add(a, b) => {
                send(*a, dy.clone(), grads);
                send(*b, dy.clone(), grads);
            }
            Op::Sub(a, b) => {
                send(*a, dy.clone(), grads);
                send(*b, dy.map(|v| -v), grads);
            }
            Op::Mul(a, b) => {
                let (am, bm) = (self.value(*a), self.value(*b));
                if self.g(*a) {
                    let d = dy.data().iter().zip(bm.data()).map(|(g, y)| g * y).collect();
                    send(*a, Matrix::from_vec(dy.rows(), dy.cols(), d), grads);
                }
                if self.g(*b) {
                    let d = dy.data().iter().zip(am.data()).map(|(g, x)| g * x).collect();
                    send(*b, Matrix::from_vec(dy.rows(), dy.cols(), d), grads);
                }
            }
            Op::AddRow(x, row) => {
                send(*x, dy.clone(), grads);
                if self.g(*row) {
                    let mut d = Matrix::zeros(1, dy.cols());
                    for r in 0..dy.rows() {
                        for (o, g) in d.data_mut().iter_mut().zip(dy.row(r)) {
                            *o += g;
                        }
                    }
                    send(*row, d, grads);
                }
            }
            Op::MulRow(x, row) => {
                let (xm, rm) = (self.value(*x), self.value(*row));
                if self.g(*x) {
                    let mut d = dy.clone();
                    for r in 0..d.rows() {
                        for (o, s) in d.row_mut(r).iter_mut().zip(rm.data()) {
                            *o *= s;
                        }
                    }
                    send(*x, d, grads);
                }
                if self.g(*row) {
                    let mut d = Matrix::zeros(1, dy.cols());
                    for r in 0..dy.rows() {
                        for ((o, g), v) in d.data_mut().iter_mut().zip(dy.row(r)).zip(xm.row(r)) {
                            *o += g * v;
                        }
                    }
                    send(*row, d, grads);
                }
            }
            Op::MulCol(x, col) => {
                let (xm, cm) = (self.value(*x), self.value(*col));
                if self.g(*x) {
                    let mut d = dy.clone();
                    for r in 0..d.rows() {
                        let c = cm.data()[r];
                        d.row_mut(r).iter_mut().for_each(|o| *o *= c);
                    }
                    send(*x, d, grads);
                }
                if self.g(*col) {
                    let d = (0..dy.rows())
                        .map(|r| dy.row(r).iter().zip(xm.row(r)).map(|(g, v)| g * v).sum())
                        .collect();
                    send(*col, Matrix::from_vec(dy.rows(), 1, d), grads);
                }
            }
            Op::Scale(x, s) => send(*x, dy.map(|v| v * s), grads),
            Op::Gelu(x) => {
                let xm = self.value(*x);
                let d = dy.data().iter().zip(xm.data()).map(|(g, v)| g * gelu_deriv(*v)).collect();
                send(*x, Matrix::from_vec(dy.rows(), dy.cols(), d), grads);
            }
            Op::Sigmoid(x) => {
                let d = dy.data().iter().zip(y.data()).map(|(g, s)| g * s * (1.0 - s)).collect();
                send(*x, Matrix::from_vec(dy.rows(), dy.cols(), d), grads);
            }
            Op::Softplus(x) => {
                let xm = self.value(*x);
                let d = dy.data().iter().zip(xm.data()).map(|(g, v)| g * sigmoid(*v)).collect();
                send(*x, Matrix::from_vec(dy.rows(), dy.cols(), d), grads);
            }
            Op::SoftmaxRows(x) => {
                let mut d = Matrix::zeros(dy.rows(), dy.cols());
                for r in 0..dy.rows() {
                    let (g, s) = (dy.row(r), y.row(r));
                    let dot: f64 = g.iter().zip(s).map(|(a, b)| a * b).sum();
                    for ((o, gv), sv) in d.row_mut(r).iter_mut().zip(g).zip(s) {
                        *o = sv * (gv - dot);
                    }
                }
                send(*x, d, grads);
            }
            Op::LayerNormRows(x) => {
                let xm = self.value(*x);
                let mut d = Matrix::zeros(dy.rows(), dy.cols());
                for r in 0..dy.rows() {
                    let row = xm.row(r);
                    let n = row.len() as f64;
                    let mean = row.iter().sum::<f64>() / n;
                    let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
                    let inv = 1.0 / (var + LN_EPS).sqrt();
                    let (g, yr) = (dy.row(r), y.row(r));
                    let g_mean = g.iter().sum::<f64>() / n;
                    let gy_mean = g.iter().zip(yr).map(|(a, b)| a * b).sum::<f64>() / n;
                    for ((o, gv), yv) in d.row_mut(r).iter_mut().zip(g).zip(yr) {
                        *o = inv * (gv - g_mean - yv * gy_mean);
                    }
                }
                send(*x, d, grads);
            }
            Op::Transpose(x) => send(*x, dy.transpose(), grads),
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for &p in parts {
                    let rows = self.value(p).rows();
                    if self.g(p) {
                        let cols = dy.cols();
                        let d = dy.data()[off * cols..(off + rows) * cols].to_vec();
                        send(p, Matrix::from_vec(rows, cols, d), grads);
                    }
                    off += rows;
                }
            }
            Op::ConcatCols(parts) => {
                let mut off = 0;
                for &p in parts {
                    let cols = self.value(p).cols();
                    if self.g(p) {
                        let mut d = Matrix::zeros(dy.rows(), cols);
                        for r in 0..dy.rows() {
                            d.row_mut(r).copy_from_slice(&dy.row(r)[off..off + cols]);
                        }
                        send(p, d, grads);
                    }
                    off += cols;
                }
            }
            Op::SliceRows { x, start } => {
                let xm = self.value(*x);
                let mut d = Matrix::zeros(xm.rows(), xm.cols());
                let c = xm.cols();
                d.data_mut()[start * c..(start + dy.rows()) * c].copy_from_slice(dy.data());
                send(*x, d, grads);
            }
            Op::SliceCols { x, start } => {
                let xm = self.value(*x);
                let mut d = Matrix::zeros(xm.rows(), xm.cols());
                for r in 0..dy.rows() {
                    d.row_mut(r)[*start..start + dy.cols()].copy_from_slice(dy.row(r));
                }
                send(*x, d, grads);
            }
            Op::GatherRows { x, idx } => {
                let xm = self.value(*x);
                let mut d = Matrix::zeros(xm.rows(), xm.cols());
                for (i, &j) in idx.iter().enumerate() {
                    for (o, g) in d.row_mut(j).iter_mut().zip(dy.row(i)) {
                        *o += g;
                    }
                }
                send(*x, d, grads);
            }
            Op::SegmentSum { x, seg } => {
                let xm = self.value(*x);
                let mut d = Matrix::zeros(xm.rows(), xm.cols());
                for (i, &s) in seg.iter().enumerate() {
                    d.row_mut(i).copy_from_slice(dy.row(s));
                }
                send(*x, d, grads);
            }
            Op::NormalizeRows(x) => {
                let xm = self.value(*x);
                let mut d = Matrix::zeros(dy.rows(), dy.cols());
                for r in 0..dy.rows() {
                    let s: f64 = xm.row(r).iter().sum();
                    let (g, yr) = (dy.row(r), y.row(r));
                    let dot: f64 = g.iter().zip(yr).map(|(a, b)| a * b).sum();
                    for (o, gv) in d.row_mut(r).iter_mut().zip(g) {
                        *o = (gv - dot) / s;
                    }
                }
                send(*x, d, grads);
            }
            Op::SumAll(x) => {
                let xm = self.value(*x);
                send(*x, Matrix::filled(xm.rows(), xm.cols(), dy.data()[0]), grads);
            }
            Op::MeanAll(x) => {
                let xm = self.value(*x);
                let g = dy.data()[0] / xm.len() as f64;
                send(*x, Matrix::filled(xm.rows(), xm.cols(), g), grads);
            }
            Op::SoftmaxXent { logits, targets } => {
                let lm = self.value(*logits);
                let scale = dy.data()[0] / targets.len() as f64;
                let mut d = lm.clone();
                for (r, &t) in targets.iter().enumerate() {
                    let row = d.row_mut(r);
                    softmax_in_place(row);
                    row[t] -= 1.0;
                    row.iter_mut().for_each(|v| *v *= scale);
                }
                send(*logits, d, grads);
            }
            Op::Mse { x, target } => {
                let xm = self.value(*x);
                let s = 2.0 * dy.data()[0] / xm.len() as f64;
                let d = xm.data().iter().zip(target.data()).map(|(a, b)| s * (a - b)).collect();
                send(*x, Matrix::from_vec(xm.rows(), xm.cols(), d), grads);
            }
            Op::Mmd { q, prior } => {
                let qm = self.value(*q);
                let (_, g) = geometry::mmd_idk_flat_grad(qm.data(), prior.data(), qm.rows(), qm.cols())
                    .expect("shapes validated when the node was recorded");
                let s = dy.data()[0];
                let d = g.into_iter().map(|v| v * s).collect();
                send(*q, Matrix::from_vec(qm.rows(), qm.cols(), d), grads);
            }
        }
    }
}
