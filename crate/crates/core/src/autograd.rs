//! Tape-based reverse-mode differentiation over [`Tensor`]s.
//!
//! A [`Graph`] records every operation in creation order, so the reverse
//! sweep in [`Graph::backward`] is a plain walk from the loss node down to
//! index zero. Parameter nodes are cached per graph: asking for the same
//! [`ParamId`] twice yields the same [`Var`] and gradients accumulate.

use alloc::vec;
use alloc::vec::Vec;

use crate::nn::{ParamId, ParamStore};
use crate::tensor::{gemm, Op as G, Tensor};

const LN_EPS: f64 = 1e-5;
const NORM_EPS: f64 = 1e-12;

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Param,
    MatMul(Var, Var),
    MatMulNT(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    MulCol(Var, Var),
    MulScalar(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Silu(Var),
    Gelu(Var),
    Exp(Var),
    Abs(Var),
    Square(Var),
    Clamp(Var, f64, f64),
    Mean(Var),
    Sum(Var),
    MeanRows(Var),
    SumCols(Var),
    SoftmaxRows(Var),
    LogSoftmaxRows(Var),
    LayerNormRows(Var),
    L2NormalizeRows(Var),
    Gather(Var, Vec<Option<usize>>),
    Reshape(Var),
    ConcatCols(Vec<Var>),
    SliceCols(Var, usize),
    ConcatRows(Vec<Var>),
    SliceRows(Var, usize),
    Transpose(Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    aux: Vec<f64>,
}

/// Operation tape.
pub struct Graph<'p> {
    params: Option<&'p ParamStore>,
    param_vars: Vec<Option<Var>>,
    nodes: Vec<Node>,
}

impl Default for Graph<'_> {
    fn default() -> Self {
        Self::new()
    }
}

impl<'p> Graph<'p> {
    /// A graph without parameters; only constants can enter it.
    pub fn new() -> Self {
        Self {
            params: None,
            param_vars: Vec::new(),
            nodes: Vec::new(),
        }
    }

    pub fn with_params(params: &'p ParamStore) -> Self {
        Self {
            params: Some(params),
            param_vars: vec![None; params.len()],
            nodes: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.push_aux(value, op, Vec::new())
    }

    fn push_aux(&mut self, value: Tensor, op: Op, aux: Vec<f64>) -> Var {
        self.nodes.push(Node { value, op, aux });
        Var(self.nodes.len() - 1)
    }

    #[inline]
    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_vars[id.index()] {
            return v;
        }
        let store = self.params.expect("graph built without a parameter store");
        let v = self.push(store.get(id).clone(), Op::Param);
        self.param_vars[id.index()] = Some(v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).matmul(self.value(b));
        self.push(value, Op::MatMul(a, b))
    }

    /// `a * b^T`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Var {
        let (m, k) = self.shape(a);
        let (n, k2) = self.shape(b);
        assert_eq!(k, k2, "matmul_nt inner dimension");
        let mut out = Tensor::zeros(m, n);
        gemm(
            G::N,
            G::T,
            m,
            k,
            n,
            self.value(a).data(),
            self.value(b).data(),
            out.data_mut(),
        );
        self.push(out, Op::MatMulNT(a, b))
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) {
        assert_eq!(self.shape(a), self.shape(b), "{what}: shape mismatch");
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.same_shape(a, b, "add");
        let value = self.value(a).zip_map(self.value(b), |x, y| x + y);
        self.push(value, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.same_shape(a, b, "sub");
        let value = self.value(a).zip_map(self.value(b), |x, y| x - y);
        self.push(value, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.same_shape(a, b, "mul");
        let value = self.value(a).zip_map(self.value(b), |x, y| x * y);
        self.push(value, Op::Mul(a, b))
    }

    /// `x + row` with `row` broadcast over the rows of `x`.
    pub fn add_row(&mut self, x: Var, row: Var) -> Var {
        let (m, n) = self.shape(x);
        assert_eq!(self.shape(row), (1, n), "add_row");
        let r = self.value(row).data();
        let mut value = self.value(x).clone();
        for i in 0..m {
            for (v, b) in value.row_mut(i).iter_mut().zip(r) {
                *v += b;
            }
        }
        self.push(value, Op::AddRow(x, row))
    }

    /// `x * row` with `row` broadcast over the rows of `x`.
    pub fn mul_row(&mut self, x: Var, row: Var) -> Var {
        let (m, n) = self.shape(x);
        assert_eq!(self.shape(row), (1, n), "mul_row");
        let r = self.value(row).data();
        let mut value = self.value(x).clone();
        for i in 0..m {
            for (v, b) in value.row_mut(i).iter_mut().zip(r) {
                *v *= b;
            }
        }
        self.push(value, Op::MulRow(x, row))
    }

    /// `x * col` with `col` (`m x 1`) broadcast over the columns of `x`.
    pub fn mul_col(&mut self, x: Var, col: Var) -> Var {
        let (m, _) = self.shape(x);
        assert_eq!(self.shape(col), (m, 1), "mul_col");
        let mut value = self.value(x).clone();
        for i in 0..m {
            let s = self.value(col).data()[i];
            for v in value.row_mut(i) {
                *v *= s;
            }
        }
        self.push(value, Op::MulCol(x, col))
    }

    /// `x * s` for a 1x1 `s`.
    pub fn mul_scalar(&mut self, x: Var, s: Var) -> Var {
        assert_eq!(self.shape(s), (1, 1), "mul_scalar");
        let k = self.value(s).item();
        let value = self.value(x).map(|v| v * k);
        self.push(value, Op::MulScalar(x, s))
    }

    pub fn scale(&mut self, x: Var, k: f64) -> Var {
        let value = self.value(x).map(|v| v * k);
        self.push(value, Op::Scale(x, k))
    }

    pub fn add_scalar(&mut self, x: Var, k: f64) -> Var {
        let value = self.value(x).map(|v| v + k);
        self.push(value, Op::AddScalar(x))
    }

    pub fn silu(&mut self, x: Var) -> Var {
        let value = self.value(x).map(|v| v * sigmoid(v));
        self.push(value, Op::Silu(x))
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, x: Var) -> Var {
        let value = self.value(x).map(|v| gelu(v).0);
        self.push(value, Op::Gelu(x))
    }

    pub fn exp(&mut self, x: Var) -> Var {
        let value = self.value(x).map(libm::exp);
        self.push(value, Op::Exp(x))
    }

    pub fn abs(&mut self, x: Var) -> Var {
        let value = self.value(x).map(libm::fabs);
        self.push(value, Op::Abs(x))
    }

    pub fn square(&mut self, x: Var) -> Var {
        let value = self.value(x).map(|v| v * v);
        self.push(value, Op::Square(x))
    }

    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Var {
        let value = self.value(x).map(|v| v.clamp(lo, hi));
        self.push(value, Op::Clamp(x, lo, hi))
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let value = Tensor::scalar(self.value(x).mean());
        self.push(value, Op::Mean(x))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let value = Tensor::scalar(self.value(x).sum());
        self.push(value, Op::Sum(x))
    }

    /// Column means, `m x n -> 1 x n`.
    pub fn mean_rows(&mut self, x: Var) -> Var {
        let (m, n) = self.shape(x);
        let xv = self.value(x);
        let mut out = Tensor::zeros(1, n);
        for i in 0..m {
            for (o, v) in out.data_mut().iter_mut().zip(xv.row(i)) {
                *o += v;
            }
        }
        for o in out.data_mut() {
            *o /= m as f64;
        }
        self.push(out, Op::MeanRows(x))
    }

    /// Row sums, `m x n -> m x 1`.
    pub fn sum_cols(&mut self, x: Var) -> Var {
        let (m, _) = self.shape(x);
        let xv = self.value(x);
        let data = (0..m).map(|i| xv.row(i).iter().sum()).collect();
        let out = Tensor::from_vec(m, 1, data).expect("shape");
        self.push(out, Op::SumCols(x))
    }

    pub fn softmax_rows(&mut self, x: Var) -> Var {
        let mut value = self.value(x).clone();
        for i in 0..value.rows() {
            softmax_in_place(value.row_mut(i));
        }
        self.push(value, Op::SoftmaxRows(x))
    }

    pub fn log_softmax_rows(&mut self, x: Var) -> Var {
        let mut value = self.value(x).clone();
        for i in 0..value.rows() {
            let row = value.row_mut(i);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + libm::log(row.iter().map(|v| libm::exp(v - max)).sum::<f64>());
            for v in row.iter_mut() {
                *v -= lse;
            }
        }
        self.push(value, Op::LogSoftmaxRows(x))
    }

    /// Per-row standardization without affine parameters.
    pub fn layer_norm_rows(&mut self, x: Var) -> Var {
        let mut value = self.value(x).clone();
        let n = value.cols() as f64;
        let mut inv_std = Vec::with_capacity(value.rows());
        for i in 0..value.rows() {
            let row = value.row_mut(i);
            let mean = row.iter().sum::<f64>() / n;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            let inv = 1.0 / libm::sqrt(var + LN_EPS);
            for v in row.iter_mut() {
                *v = (*v - mean) * inv;
            }
            inv_std.push(inv);
        }
        self.push_aux(value, Op::LayerNormRows(x), inv_std)
    }

    pub fn l2_normalize_rows(&mut self, x: Var) -> Var {
        let mut value = self.value(x).clone();
        let mut norms = Vec::with_capacity(value.rows());
        for i in 0..value.rows() {
            let row = value.row_mut(i);
            let norm = libm::sqrt(row.iter().map(|v| v * v).sum::<f64>() + NORM_EPS);
            for v in row.iter_mut() {
                *v /= norm;
            }
            norms.push(norm);
        }
        self.push_aux(value, Op::L2NormalizeRows(x), norms)
    }

    /// Row gather; `None` produces a zero row.
    pub fn gather_rows(&mut self, x: Var, index: Vec<Option<usize>>) -> Var {
        let src = self.value(x);
        let cols = src.cols();
        let mut out = Tensor::zeros(index.len(), cols);
        for (r, idx) in index.iter().enumerate() {
            if let Some(i) = idx {
                out.row_mut(r).copy_from_slice(src.row(*i));
            }
        }
        self.push(out, Op::Gather(x, index))
    }

    pub fn select_rows(&mut self, x: Var, index: &[usize]) -> Var {
        self.gather_rows(x, index.iter().map(|&i| Some(i)).collect())
    }

    pub fn reshape(&mut self, x: Var, rows: usize, cols: usize) -> Var {
        let value = self.value(x).clone().reshape(rows, cols).expect("reshape");
        self.push(value, Op::Reshape(x))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let m = self.shape(parts[0]).0;
        let n: usize = parts.iter().map(|&p| self.shape(p).1).sum();
        let mut out = Tensor::zeros(m, n);
        for i in 0..m {
            let mut off = 0;
            for &p in parts {
                let row = self.value(p).row(i);
                out.row_mut(i)[off..off + row.len()].copy_from_slice(row);
                off += row.len();
            }
        }
        self.push(out, Op::ConcatCols(parts.to_vec()))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, end: usize) -> Var {
        let src = self.value(x);
        let mut out = Tensor::zeros(src.rows(), end - start);
        for i in 0..src.rows() {
            out.row_mut(i).copy_from_slice(&src.row(i)[start..end]);
        }
        self.push(out, Op::SliceCols(x, start))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let tensors: Vec<&Tensor> = parts.iter().map(|&p| self.value(p)).collect();
        let out = Tensor::concat_rows(&tensors).expect("concat_rows");
        self.push(out, Op::ConcatRows(parts.to_vec()))
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, end: usize) -> Var {
        let out = self.value(x).slice_rows(start, end);
        self.push(out, Op::SliceRows(x, start))
    }

    pub fn transpose(&mut self, x: Var) -> Var {
        let out = self.value(x).transpose();
        self.push(out, Op::Transpose(x))
    }

    /// Reverse sweep from a 1x1 `loss`.
    pub fn backward(&self, loss: Var) -> Grads {
        assert_eq!(self.shape(loss), (1, 1), "backward needs a scalar loss");
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::scalar(1.0));
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        grads.resize(self.nodes.len(), None);
        Grads {
            nodes: grads,
            param_vars: self.param_vars.clone(),
        }
    }

    fn propagate(&self, i: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let node = &self.nodes[i];
        let val = |v: Var| &self.nodes[v.0].value;
        match &node.op {
            Op::Leaf | Op::Param => {}
            Op::MatMul(a, b) => {
                let (m, k) = val(*a).shape();
                let n = val(*b).cols();
                let ga = slot(grads, *a, m, k);
                gemm(G::N, G::T, m, n, k, g.data(), val(*b).data(), ga.data_mut());
                let gb = slot(grads, *b, k, n);
                gemm(G::T, G::N, k, m, n, val(*a).data(), g.data(), gb.data_mut());
            }
            Op::MatMulNT(a, b) => {
                let (m, k) = val(*a).shape();
                let n = val(*b).rows();
                let ga = slot(grads, *a, m, k);
                gemm(G::N, G::N, m, n, k, g.data(), val(*b).data(), ga.data_mut());
                let gb = slot(grads, *b, n, k);
                gemm(G::T, G::N, n, m, k, g.data(), val(*a).data(), gb.data_mut());
            }
            Op::Add(a, b) => {
                accumulate(grads, *a, g);
                accumulate(grads, *b, g);
            }
            Op::Sub(a, b) => {
                accumulate(grads, *a, g);
                let (m, n) = g.shape();
                let gb = slot(grads, *b, m, n);
                for (o, d) in gb.data_mut().iter_mut().zip(g.data()) {
                    *o -= d;
                }
            }
            Op::Mul(a, b) => {
                let (m, n) = g.shape();
                let bv = val(*b);
                let ga = slot(grads, *a, m, n);
                for ((o, d), y) in ga.data_mut().iter_mut().zip(g.data()).zip(bv.data()) {
                    *o += d * y;
                }
                let av = val(*a);
                let gb = slot(grads, *b, m, n);
                for ((o, d), x) in gb.data_mut().iter_mut().zip(g.data()).zip(av.data()) {
                    *o += d * x;
                }
            }
            Op::AddRow(x, r) => {
                accumulate(grads, *x, g);
                let n = g.cols();
                let gr = slot(grads, *r, 1, n);
                for i in 0..g.rows() {
                    for (o, d) in gr.data_mut().iter_mut().zip(g.row(i)) {
                        *o += d;
                    }
                }
            }
            Op::MulRow(x, r) => {
                let (m, n) = g.shape();
                let rv = val(*r).data();
                let gx = slot(grads, *x, m, n);
                for i in 0..m {
                    for ((o, d), s) in gx.row_mut(i).iter_mut().zip(g.row(i)).zip(rv) {
                        *o += d * s;
                    }
                }
                let xv = val(*x);
                let gr = slot(grads, *r, 1, n);
                for i in 0..m {
                    for ((o, d), v) in gr.data_mut().iter_mut().zip(g.row(i)).zip(xv.row(i)) {
                        *o += d * v;
                    }
                }
            }
            Op::MulCol(x, c) => {
                let (m, n) = g.shape();
                let cv = val(*c).data();
                let gx = slot(grads, *x, m, n);
                for i in 0..m {
                    for (o, d) in gx.row_mut(i).iter_mut().zip(g.row(i)) {
                        *o += d * cv[i];
                    }
                }
                let xv = val(*x);
                let gc = slot(grads, *c, m, 1);
                for i in 0..m {
                    let s: f64 = g.row(i).iter().zip(xv.row(i)).map(|(d, v)| d * v).sum();
                    gc.data_mut()[i] += s;
                }
            }
            Op::MulScalar(x, s) => {
                let (m, n) = g.shape();
                let k = val(*s).item();
                let gx = slot(grads, *x, m, n);
                for (o, d) in gx.data_mut().iter_mut().zip(g.data()) {
                    *o += d * k;
                }
                let dot: f64 = g.data().iter().zip(val(*x).data()).map(|(d, v)| d * v).sum();
                slot(grads, *s, 1, 1).data_mut()[0] += dot;
            }
            Op::Scale(x, k) => {
                let (m, n) = g.shape();
                let gx = slot(grads, *x, m, n);
                for (o, d) in gx.data_mut().iter_mut().zip(g.data()) {
                    *o += d * k;
                }
            }
            Op::AddScalar(x) => accumulate(grads, *x, g),
            Op::Silu(x) => unary(grads, *x, g, val(*x), |v| {
                let s = sigmoid(v);
                s * (1.0 + v * (1.0 - s))
            }),
            Op::Gelu(x) => unary(grads, *x, g, val(*x), |v| gelu(v).1),
            Op::Exp(x) => {
                let (m, n) = g.shape();
                let gx = slot(grads, *x, m, n);
                for ((o, d), y) in gx.data_mut().iter_mut().zip(g.data()).zip(node.value.data()) {
                    *o += d * y;
                }
            }
            Op::Abs(x) => unary(grads, *x, g, val(*x), |v| {
                if v > 0.0 {
                    1.0
                } else if v < 0.0 {
                    -1.0
                } else {
                    0.0
                }
            }),
            Op::Square(x) => unary(grads, *x, g, val(*x), |v| 2.0 * v),
            Op::Clamp(x, lo, hi) => {
                let (lo, hi) = (*lo, *hi);
                unary(grads, *x, g, val(*x), |v| if v < lo || v > hi { 0.0 } else { 1.0 })
            }
            Op::Mean(x) => {
                let (m, n) = val(*x).shape();
                let d = g.item() / (m * n) as f64;
                for o in slot(grads, *x, m, n).data_mut() {
                    *o += d;
                }
            }
            Op::Sum(x) => {
                let (m, n) = val(*x).shape();
                let d = g.item();
                for o in slot(grads, *x, m, n).data_mut() {
                    *o += d;
                }
            }
            Op::MeanRows(x) => {
                let (m, n) = val(*x).shape();
                let gx = slot(grads, *x, m, n);
                for i in 0..m {
                    for (o, d) in gx.row_mut(i).iter_mut().zip(g.data()) {
                        *o += d / m as f64;
                    }
                }
            }
            Op::SumCols(x) => {
                let (m, n) = val(*x).shape();
                let gx = slot(grads, *x, m, n);
                for i in 0..m {
                    let d = g.data()[i];
                    for o in gx.row_mut(i) {
                        *o += d;
                    }
                }
            }
            Op::SoftmaxRows(x) => {
                let (m, n) = g.shape();
                let y = &node.value;
                let gx = slot(grads, *x, m, n);
                for i in 0..m {
                    let dot: f64 = g.row(i).iter().zip(y.row(i)).map(|(d, p)| d * p).sum();
                    for ((o, d), p) in gx.row_mut(i).iter_mut().zip(g.row(i)).zip(y.row(i)) {
                        *o += p * (d - dot);
                    }
                }
            }
            Op::LogSoftmaxRows(x) => {
                let (m, n) = g.shape();
                let y = &node.value;
                let gx = slot(grads, *x, m, n);
                for i in 0..m {
                    let total: f64 = g.row(i).iter().sum();
                    for ((o, d), l) in gx.row_mut(i).iter_mut().zip(g.row(i)).zip(y.row(i)) {
                        *o += d - libm::exp(*l) * total;
                    }
                }
            }
            Op::LayerNormRows(x) => {
                let (m, n) = g.shape();
                let y = &node.value;
                let gx = slot(grads, *x, m, n);
                for i in 0..m {
                    let inv = node.aux[i];
                    let gm: f64 = g.row(i).iter().sum::<f64>() / n as f64;
                    let gy: f64 =
                        g.row(i).iter().zip(y.row(i)).map(|(d, v)| d * v).sum::<f64>() / n as f64;
                    for ((o, d), v) in gx.row_mut(i).iter_mut().zip(g.row(i)).zip(y.row(i)) {
                        *o += inv * (d - gm - v * gy);
                    }
                }
            }
            Op::L2NormalizeRows(x) => {
                let (m, n) = g.shape();
                let y = &node.value;
                let gx = slot(grads, *x, m, n);
                for i in 0..m {
                    let norm = node.aux[i];
                    let dot: f64 = g.row(i).iter().zip(y.row(i)).map(|(d, v)| d * v).sum();
                    for ((o, d), v) in gx.row_mut(i).iter_mut().zip(g.row(i)).zip(y.row(i)) {
                        *o += (d - v * dot) / norm;
                    }
                }
            }
            Op::Gather(x, index) => {
                let (m, n) = val(*x).shape();
                let gx = slot(grads, *x, m, n);
                for (r, idx) in index.iter().enumerate() {
                    if let Some(src) = idx {
                        for (o, d) in gx.row_mut(*src).iter_mut().zip(g.row(r)) {
                            *o += d;
                        }
                    }
                }
            }
            Op::Reshape(x) => {
                let (m, n) = val(*x).shape();
                let gx = slot(grads, *x, m, n);
                for (o, d) in gx.data_mut().iter_mut().zip(g.data()) {
                    *o += d;
                }
            }
            Op::ConcatCols(parts) => {
                let mut off = 0;
                for p in parts {
                    let (m, n) = val(*p).shape();
                    let gp = slot(grads, *p, m, n);
                    for i in 0..m {
                        for (o, d) in gp.row_mut(i).iter_mut().zip(&g.row(i)[off..off + n]) {
                            *o += d;
                        }
                    }
                    off += n;
                }
            }
            Op::SliceCols(x, start) => {
                let (m, n) = val(*x).shape();
                let w = g.cols();
                let gx = slot(grads, *x, m, n);
                for i in 0..m {
                    for (o, d) in gx.row_mut(i)[*start..*start + w].iter_mut().zip(g.row(i)) {
                        *o += d;
                    }
                }
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for p in parts {
                    let (m, n) = val(*p).shape();
                    let gp = slot(grads, *p, m, n);
                    for (o, d) in gp.data_mut().iter_mut().zip(&g.data()[off * n..(off + m) * n]) {
                        *o += d;
                    }
                    off += m;
                }
            }
            Op::SliceRows(x, start) => {
                let (m, n) = val(*x).shape();
                let gx = slot(grads, *x, m, n);
                let dst = &mut gx.data_mut()[start * n..start * n + g.len()];
                for (o, d) in dst.iter_mut().zip(g.data()) {
                    *o += d;
                }
            }
            Op::Transpose(x) => {
                let (m, n) = val(*x).shape();
                let gx = slot(grads, *x, m, n);
                for i in 0..m {
                    for j in 0..n {
                        gx.data_mut()[i * n + j] += g.get(j, i);
                    }
                }
            }
        }
    }
}

fn slot(grads: &mut [Option<Tensor>], v: Var, m: usize, n: usize) -> &mut Tensor {
    grads[v.0].get_or_insert_with(|| Tensor::zeros(m, n))
}

fn accumulate(grads: &mut [Option<Tensor>], v: Var, g: &Tensor) {
    match &mut grads[v.0] {
        Some(t) => t.add_assign(g),
        slot @ None => *slot = Some(g.clone()),
    }
}

fn unary(grads: &mut [Option<Tensor>], x: Var, g: &Tensor, xv: &Tensor, d: impl Fn(f64) -> f64) {
    let (m, n) = g.shape();
    let gx = slot(grads, x, m, n);
    for ((o, dy), v) in gx.data_mut().iter_mut().zip(g.data()).zip(xv.data()) {
        *o += dy * d(*v);
    }
}

#[inline]
pub(crate) fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + libm::exp(-v))
}

/// GELU (tanh form) and its derivative.
fn gelu(v: f64) -> (f64, f64) {
    const C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
    let inner = C * (v + 0.044_715 * v * v * v);
    let th = libm::tanh(inner);
    let y = 0.5 * v * (1.0 + th);
    let dinner = C * (1.0 + 3.0 * 0.044_715 * v * v);
    let dy = 0.5 * (1.0 + th) + 0.5 * v * (1.0 - th * th) * dinner;
    (y, dy)
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in row.iter_mut() {
        *v = libm::exp(*v - max);
        total += *v;
    }
    for v in row.iter_mut() {
        *v /= total;
    }
}

/// Gradients produced by [`Graph::backward`].
pub struct Grads {
    nodes: Vec<Option<Tensor>>,
    param_vars: Vec<Option<Var>>,
}

impl Grads {
    pub fn wrt(&self, v: Var) -> Option<&Tensor> {
        self.nodes.get(v.0).and_then(Option::as_ref)
    }

    pub fn param(&self, id: ParamId) -> Option<&Tensor> {
        self.param_vars
            .get(id.index())
            .copied()
            .flatten()
            .and_then(|v| self.wrt(v))
    }

    /// Gradient per parameter of the store the graph was built on.
    pub fn into_param_grads(mut self) -> Vec<Option<Tensor>> {
        self.param_vars
            .iter()
            .map(|v| v.and_then(|v| self.nodes[v.0].take()))
            .collect()
    }
}
