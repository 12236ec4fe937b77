//! Eager reverse-mode differentiation over matrix-valued nodes.
//!
//! Every operation evaluates immediately and appends a node recording its
//! parents. [`Tape::backward`] walks the nodes in reverse creation order, which
//! is a valid topological order because a node can only reference earlier
//! nodes.
//!
//! The op set is deliberately narrow: the primitives a recurrent matching
//! network needs, plus a few fused kernels (LSTM gates, perspective cosines)
//! whose hand-written adjoints keep the graph small.

use super::params::{Gradients, ParamId, ParamStore};
use super::tensor::{axpy, dot, Tensor};

/// Norm below which a cosine is defined as zero.
pub const COS_EPS: f64 = 1e-12;

/// Row sums with absolute value below this make a guarded row division yield zero.
pub const DIV_EPS: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

enum Value {
    Owned(Tensor),
    Param(ParamId),
}

enum Op {
    Leaf,
    Param(ParamId),
    MatMul(NodeId, NodeId),
    MatMulNT(NodeId, NodeId),
    AddBias(NodeId, NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    MulConst(NodeId, Tensor),
    Scale(NodeId, f64),
    Sigmoid(NodeId),
    Tanh(NodeId),
    Relu(NodeId),
    ConcatCols(Vec<NodeId>),
    StackRows(Vec<NodeId>),
    SliceRows(NodeId, usize),
    SliceCols(NodeId, usize),
    Transpose(NodeId),
    SumRows(NodeId),
    SumCols(NodeId),
    SoftmaxRows(NodeId),
    LogSoftmaxRows(NodeId),
    GatherRows(NodeId, Vec<usize>),
    LstmCell { pre: NodeId, c_prev: Option<NodeId> },
    LstmHidden { pre: NodeId, c: NodeId },
    CosMatrix(NodeId, NodeId),
    Perspective { x: NodeId, y: NodeId, w: NodeId },
    PerspectiveMax { x: NodeId, y: NodeId, w: NodeId, arg: Vec<usize> },
    DivRowsGuarded(NodeId, NodeId),
    DotConst(NodeId, Tensor),
}

struct Node {
    value: Value,
    op: Op,
}

/// A recording of one forward computation against a borrowed parameter store.
pub struct Tape<'p> {
    store: &'p ParamStore,
    nodes: Vec<Node>,
    param_nodes: Vec<Option<NodeId>>,
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

/// Weighted cosine `cos(w∘x, w∘y)` with the zero-norm guard.
/// Returns `(cos, |w∘x|, |w∘y|)`.
#[inline]
fn weighted_cos(x: &[f64], y: &[f64], w: Option<&[f64]>) -> (f64, f64, f64) {
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    match w {
        Some(w) => {
            for l in 0..x.len() {
                let w2 = w[l] * w[l];
                sxy += w2 * x[l] * y[l];
                sxx += w2 * x[l] * x[l];
                syy += w2 * y[l] * y[l];
            }
        }
        None => {
            for l in 0..x.len() {
                sxy += x[l] * y[l];
                sxx += x[l] * x[l];
                syy += y[l] * y[l];
            }
        }
    }
    let (na, nb) = (sxx.sqrt(), syy.sqrt());
    if na < COS_EPS || nb < COS_EPS {
        return (0.0, na, nb);
    }
    ((sxy / (na * nb)).clamp(-1.0, 1.0), na, nb)
}

/// Accumulates `g · ∂cos/∂(x, y, w)` for one weighted cosine.
#[allow(clippy::too_many_arguments)]
#[inline]
fn weighted_cos_backward(
    g: f64,
    x: &[f64],
    y: &[f64],
    w: Option<&[f64]>,
    (c, na, nb): (f64, f64, f64),
    dx: &mut [f64],
    dy: &mut [f64],
    dw: Option<&mut [f64]>,
) {
    if na < COS_EPS || nb < COS_EPS || g == 0.0 {
        return;
    }
    let inv_ab = 1.0 / (na * nb);
    let inv_aa = c / (na * na);
    let inv_bb = c / (nb * nb);
    match (w, dw) {
        (Some(w), Some(dw)) => {
            for l in 0..x.len() {
                let w2 = w[l] * w[l];
                dx[l] += g * w2 * (y[l] * inv_ab - x[l] * inv_aa);
                dy[l] += g * w2 * (x[l] * inv_ab - y[l] * inv_bb);
                dw[l] += g
                    * w[l]
                    * (2.0 * x[l] * y[l] * inv_ab - x[l] * x[l] * inv_aa - y[l] * y[l] * inv_bb);
            }
        }
        (Some(w), None) => {
            for l in 0..x.len() {
                let w2 = w[l] * w[l];
                dx[l] += g * w2 * (y[l] * inv_ab - x[l] * inv_aa);
                dy[l] += g * w2 * (x[l] * inv_ab - y[l] * inv_bb);
            }
        }
        (None, _) => {
            for l in 0..x.len() {
                dx[l] += g * (y[l] * inv_ab - x[l] * inv_aa);
                dy[l] += g * (x[l] * inv_ab - y[l] * inv_bb);
            }
        }
    }
}

impl<'p> Tape<'p> {
    pub fn new(store: &'p ParamStore) -> Self {
        Self {
            store,
            nodes: Vec::with_capacity(4096),
            param_nodes: vec![None; store.len()],
        }
    }

    pub fn store(&self) -> &'p ParamStore {
        self.store
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    #[inline]
    pub fn value(&self, id: NodeId) -> &Tensor {
        match &self.nodes[id.0].value {
            Value::Owned(t) => t,
            Value::Param(p) => self.store.get(*p),
        }
    }

    #[inline]
    pub fn shape(&self, id: NodeId) -> (usize, usize) {
        self.value(id).shape()
    }

    /// Scalar value of a `1 × 1` node.
    pub fn scalar(&self, id: NodeId) -> f64 {
        let v = self.value(id);
        assert_eq!(v.shape(), (1, 1), "scalar() on non-scalar node");
        v.data()[0]
    }

    fn push(&mut self, value: Tensor, op: Op) -> NodeId {
        self.nodes.push(Node {
            value: Value::Owned(value),
            op,
        });
        NodeId(self.nodes.len() - 1)
    }

    /// Constant input; receives no gradient.
    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push(value, Op::Leaf)
    }

    /// Leaf bound to a stored parameter; one node per parameter per tape.
    pub fn param(&mut self, id: ParamId) -> NodeId {
        if let Some(n) = self.param_nodes[id.0] {
            return n;
        }
        self.nodes.push(Node {
            value: Value::Param(id),
            op: Op::Param(id),
        });
        let n = NodeId(self.nodes.len() - 1);
        self.param_nodes[id.0] = Some(n);
        n
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (av, bv) = (self.value(a), self.value(b));
        let (m, k) = av.shape();
        let (k2, n) = bv.shape();
        assert_eq!(k, k2, "matmul inner dims {k} vs {k2}");
        let mut out = Tensor::zeros(m, n);
        for i in 0..m {
            let arow = av.row(i);
            let orow = out.row_mut(i);
            for (p, &aip) in arow.iter().enumerate() {
                if aip == 0.0 {
                    continue;
                }
                for (o, &b) in orow.iter_mut().zip(bv.row(p)) {
                    *o += aip * b;
                }
            }
        }
        self.push(out, Op::MatMul(a, b))
    }

    /// `a · bᵀ` for `a: m×k`, `b: n×k`.
    pub fn matmul_nt(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (av, bv) = (self.value(a), self.value(b));
        let (m, k) = av.shape();
        let (n, k2) = bv.shape();
        assert_eq!(k, k2, "matmul_nt inner dims {k} vs {k2}");
        let mut out = vec![0.0; m * n];
        for j in 0..n {
            let brow = bv.row(j);
            for i in 0..m {
                out[i * n + j] = dot(av.row(i), brow);
            }
        }
        self.push(Tensor::from_vec(m, n, out), Op::MatMulNT(a, b))
    }

    /// Adds a `1 × n` bias to every row of `a`.
    pub fn add_bias(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (av, bv) = (self.value(a), self.value(b));
        assert_eq!(bv.rows(), 1, "bias must be a row vector");
        assert_eq!(av.cols(), bv.cols(), "bias width mismatch");
        let mut out = av.clone();
        for i in 0..out.rows() {
            for (o, b) in out.row_mut(i).iter_mut().zip(bv.data()) {
                *o += b;
            }
        }
        self.push(out, Op::AddBias(a, b))
    }

    fn zip_with(&self, a: NodeId, b: NodeId, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let (av, bv) = (self.value(a), self.value(b));
        assert_eq!(av.shape(), bv.shape(), "elementwise shape mismatch");
        let data = av.data().iter().zip(bv.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::from_vec(av.rows(), av.cols(), data)
    }

    fn map(&self, a: NodeId, f: impl Fn(f64) -> f64) -> Tensor {
        let av = self.value(a);
        Tensor::from_vec(av.rows(), av.cols(), av.data().iter().map(|&x| f(x)).collect())
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let out = self.zip_with(a, b, |x, y| x + y);
        self.push(out, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let out = self.zip_with(a, b, |x, y| x - y);
        self.push(out, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let out = self.zip_with(a, b, |x, y| x * y);
        self.push(out, Op::Mul(a, b))
    }

    /// Elementwise product with a constant mask (used for dropout).
    pub fn mul_const(&mut self, a: NodeId, mask: Tensor) -> NodeId {
        let av = self.value(a);
        assert_eq!(av.shape(), mask.shape(), "mask shape mismatch");
        let data = av.data().iter().zip(mask.data()).map(|(x, m)| x * m).collect();
        let out = Tensor::from_vec(av.rows(), av.cols(), data);
        self.push(out, Op::MulConst(a, mask))
    }

    pub fn scale(&mut self, a: NodeId, f: f64) -> NodeId {
        let out = self.map(a, |x| x * f);
        self.push(out, Op::Scale(a, f))
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        let out = self.map(a, sigmoid);
        self.push(out, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        let out = self.map(a, f64::tanh);
        self.push(out, Op::Tanh(a))
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let out = self.map(a, |x| x.max(0.0));
        self.push(out, Op::Relu(a))
    }

    pub fn concat_cols(&mut self, parts: &[NodeId]) -> NodeId {
        assert!(!parts.is_empty());
        let rows = self.value(parts[0]).rows();
        let cols: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut out = Tensor::zeros(rows, cols);
        let mut off = 0;
        for &p in parts {
            let pv = self.value(p);
            assert_eq!(pv.rows(), rows, "concat_cols row mismatch");
            for i in 0..rows {
                out.row_mut(i)[off..off + pv.cols()].copy_from_slice(pv.row(i));
            }
            off += pv.cols();
        }
        self.push(out, Op::ConcatCols(parts.to_vec()))
    }

    pub fn stack_rows(&mut self, parts: &[NodeId]) -> NodeId {
        assert!(!parts.is_empty());
        let cols = self.value(parts[0]).cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let pv = self.value(p);
            assert_eq!(pv.cols(), cols, "stack_rows col mismatch");
            data.extend_from_slice(pv.data());
            rows += pv.rows();
        }
        self.push(Tensor::from_vec(rows, cols, data), Op::StackRows(parts.to_vec()))
    }

    pub fn slice_rows(&mut self, a: NodeId, start: usize, len: usize) -> NodeId {
        let av = self.value(a);
        assert!(start + len <= av.rows(), "slice_rows out of range");
        let cols = av.cols();
        let out = Tensor::from_vec(len, cols, av.data()[start * cols..(start + len) * cols].to_vec());
        self.push(out, Op::SliceRows(a, start))
    }

    pub fn row(&mut self, a: NodeId, i: usize) -> NodeId {
        self.slice_rows(a, i, 1)
    }

    pub fn slice_cols(&mut self, a: NodeId, start: usize, len: usize) -> NodeId {
        let av = self.value(a);
        assert!(start + len <= av.cols(), "slice_cols out of range");
        let mut out = Tensor::zeros(av.rows(), len);
        for i in 0..av.rows() {
            out.row_mut(i).copy_from_slice(&av.row(i)[start..start + len]);
        }
        self.push(out, Op::SliceCols(a, start))
    }

    pub fn transpose(&mut self, a: NodeId) -> NodeId {
        let av = self.value(a);
        let mut out = Tensor::zeros(av.cols(), av.rows());
        for i in 0..av.rows() {
            for j in 0..av.cols() {
                out.set(j, i, av.get(i, j));
            }
        }
        self.push(out, Op::Transpose(a))
    }

    /// Sum over rows: `m × n → 1 × n`.
    pub fn sum_rows(&mut self, a: NodeId) -> NodeId {
        let av = self.value(a);
        let mut out = Tensor::zeros(1, av.cols());
        for i in 0..av.rows() {
            for (o, v) in out.data_mut().iter_mut().zip(av.row(i)) {
                *o += v;
            }
        }
        self.push(out, Op::SumRows(a))
    }

    /// Sum over columns: `m × n → m × 1`.
    pub fn sum_cols(&mut self, a: NodeId) -> NodeId {
        let av = self.value(a);
        let data = (0..av.rows()).map(|i| av.row(i).iter().sum()).collect();
        self.push(Tensor::from_vec(av.rows(), 1, data), Op::SumCols(a))
    }

    pub fn softmax_rows(&mut self, a: NodeId) -> NodeId {
        let mut out = self.value(a).clone();
        for i in 0..out.rows() {
            softmax_in_place(out.row_mut(i));
        }
        self.push(out, Op::SoftmaxRows(a))
    }

    pub fn log_softmax_rows(&mut self, a: NodeId) -> NodeId {
        let mut out = self.value(a).clone();
        for i in 0..out.rows() {
            let row = out.row_mut(i);
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            for v in row.iter_mut() {
                *v -= lse;
            }
        }
        self.push(out, Op::LogSoftmaxRows(a))
    }

    pub fn gather_rows(&mut self, a: NodeId, idx: Vec<usize>) -> NodeId {
        let av = self.value(a);
        let cols = av.cols();
        let mut data = Vec::with_capacity(idx.len() * cols);
        for &r in &idx {
            data.extend_from_slice(av.row(r));
        }
        let out = Tensor::from_vec(idx.len(), cols, data);
        self.push(out, Op::GatherRows(a, idx))
    }

    /// Cell state of a standard LSTM from gate pre-activations laid out as
    /// `[input, forget, candidate, output]`.
    pub fn lstm_cell_state(&mut self, pre: NodeId, c_prev: Option<NodeId>) -> NodeId {
        let pv = self.value(pre);
        let (m, four_h) = pv.shape();
        assert_eq!(four_h % 4, 0);
        let h = four_h / 4;
        let mut out = Tensor::zeros(m, h);
        for r in 0..m {
            let p = pv.row(r);
            for k in 0..h {
                let i = sigmoid(p[k]);
                let g = p[2 * h + k].tanh();
                let mut c = i * g;
                if let Some(cp) = c_prev {
                    c += sigmoid(p[h + k]) * self.value(cp).get(r, k);
                }
                out.set(r, k, c);
            }
        }
        self.push(out, Op::LstmCell { pre, c_prev })
    }

    /// Hidden state `σ(o) ∘ tanh(c)`.
    pub fn lstm_hidden(&mut self, pre: NodeId, c: NodeId) -> NodeId {
        let (pv, cv) = (self.value(pre), self.value(c));
        let (m, h) = cv.shape();
        assert_eq!(pv.shape(), (m, 4 * h));
        let mut out = Tensor::zeros(m, h);
        for r in 0..m {
            for k in 0..h {
                out.set(r, k, sigmoid(pv.get(r, 3 * h + k)) * cv.get(r, k).tanh());
            }
        }
        self.push(out, Op::LstmHidden { pre, c })
    }

    /// Pairwise guarded cosine: `x: m×d`, `y: n×d` → `m×n`.
    pub fn cos_matrix(&mut self, x: NodeId, y: NodeId) -> NodeId {
        let (xv, yv) = (self.value(x), self.value(y));
        assert_eq!(xv.cols(), yv.cols(), "cos_matrix dim mismatch");
        let mut out = Tensor::zeros(xv.rows(), yv.rows());
        for i in 0..xv.rows() {
            for j in 0..yv.rows() {
                out.set(i, j, weighted_cos(xv.row(i), yv.row(j), None).0);
            }
        }
        self.push(out, Op::CosMatrix(x, y))
    }

    /// Row-wise multi-perspective cosine: `out[i,k] = cos(w_k∘x_i, w_k∘y_i)`.
    /// A single-row `y` is broadcast against every row of `x`.
    pub fn perspective(&mut self, x: NodeId, y: NodeId, w: NodeId) -> NodeId {
        let (xv, yv, wv) = (self.value(x), self.value(y), self.value(w));
        let d = xv.cols();
        assert_eq!(yv.cols(), d, "perspective: x/y dim mismatch");
        assert_eq!(wv.cols(), d, "perspective: weight dim mismatch");
        assert!(yv.rows() == 1 || yv.rows() == xv.rows(), "perspective: y rows");
        let n = wv.rows();
        let mut out = Tensor::zeros(xv.rows(), n);
        for i in 0..xv.rows() {
            let yi = if yv.rows() == 1 { 0 } else { i };
            for k in 0..n {
                out.set(i, k, weighted_cos(xv.row(i), yv.row(yi), Some(wv.row(k))).0);
            }
        }
        self.push(out, Op::Perspective { x, y, w })
    }

    /// `out[i,k] = max_j cos(w_k∘x_i, w_k∘y_j)`; ties pick the lowest `j`.
    pub fn perspective_max(&mut self, x: NodeId, y: NodeId, w: NodeId) -> NodeId {
        let (xv, yv, wv) = (self.value(x), self.value(y), self.value(w));
        let d = xv.cols();
        assert_eq!(yv.cols(), d, "perspective_max: x/y dim mismatch");
        assert_eq!(wv.cols(), d, "perspective_max: weight dim mismatch");
        assert!(yv.rows() >= 1, "perspective_max over empty sequence");
        let n = wv.rows();
        let mut out = Tensor::zeros(xv.rows(), n);
        let mut arg = vec![0usize; xv.rows() * n];
        for i in 0..xv.rows() {
            for k in 0..n {
                let mut best = f64::NEG_INFINITY;
                let mut best_j = 0;
                for j in 0..yv.rows() {
                    let c = weighted_cos(xv.row(i), yv.row(j), Some(wv.row(k))).0;
                    if c > best {
                        best = c;
                        best_j = j;
                    }
                }
                out.set(i, k, best);
                arg[i * n + k] = best_j;
            }
        }
        self.push(out, Op::PerspectiveMax { x, y, w, arg })
    }

    /// Divides row `i` of `a` by `s[i]`; rows whose divisor is (near) zero become zero.
    pub fn div_rows_guarded(&mut self, a: NodeId, s: NodeId) -> NodeId {
        let (av, sv) = (self.value(a), self.value(s));
        assert_eq!(sv.shape(), (av.rows(), 1), "div_rows_guarded divisor shape");
        let mut out = Tensor::zeros(av.rows(), av.cols());
        for i in 0..av.rows() {
            let d = sv.get(i, 0);
            if d.abs() < DIV_EPS {
                continue;
            }
            for (o, v) in out.row_mut(i).iter_mut().zip(av.row(i)) {
                *o = v / d;
            }
        }
        self.push(out, Op::DivRowsGuarded(a, s))
    }

    /// `Σ a ∘ coeff` as a `1 × 1` node.
    pub fn dot_const(&mut self, a: NodeId, coeff: Tensor) -> NodeId {
        let av = self.value(a);
        assert_eq!(av.shape(), coeff.shape(), "dot_const shape mismatch");
        let s = dot(av.data(), coeff.data());
        self.push(Tensor::from_vec(1, 1, vec![s]), Op::DotConst(a, coeff))
    }

    /// Affine map `x Wᵀ + b` for `x: m×in`, `W: out×in`.
    pub fn affine(&mut self, x: NodeId, w: NodeId, b: Option<NodeId>) -> NodeId {
        let y = self.matmul_nt(x, w);
        match b {
            Some(b) => self.add_bias(y, b),
            None => y,
        }
    }

    /// Reverse sweep from a scalar root; returns gradients of every trainable
    /// parameter that the root depends on.
    pub fn backward(&self, root: NodeId) -> Gradients {
        assert_eq!(self.shape(root), (1, 1), "backward root must be scalar");
        let mut grads: Vec<Option<Tensor>> = Vec::with_capacity(root.0 + 1);
        grads.resize_with(root.0 + 1, || None);
        grads[root.0] = Some(Tensor::filled(1, 1, 1.0));
        let mut out = Gradients::new(self.store.len());

        for idx in (0..=root.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            let y = self.value(NodeId(idx));
            match &node.op {
                Op::Leaf => {}
                Op::Param(p) => {
                    if !self.store.is_frozen(*p) {
                        out.accumulate(*p, &g);
                    }
                }
                Op::MatMul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    let (m, k) = av.shape();
                    {
                        let da = slot(&mut grads, *a, av.shape());
                        for i in 0..m {
                            for p in 0..k {
                                da.data_mut()[i * k + p] += dot(g.row(i), bv.row(p));
                            }
                        }
                    }
                    let db = slot(&mut grads, *b, bv.shape());
                    for i in 0..m {
                        let grow = g.row(i);
                        for p in 0..k {
                            let aip = av.get(i, p);
                            if aip == 0.0 {
                                continue;
                            }
                            for (d, &gv) in db.row_mut(p).iter_mut().zip(grow) {
                                *d += aip * gv;
                            }
                        }
                    }
                }
                Op::MatMulNT(a, b) => {
                    // y = a bᵀ; da = g b; db = gᵀ a
                    let (av, bv) = (self.value(*a), self.value(*b));
                    let (m, k) = av.shape();
                    let n = bv.rows();
                    let mut da = take_slot(&mut grads, *a, (m, k));
                    if a == b {
                        for j in 0..n {
                            for i in 0..m {
                                let gij = g.get(i, j);
                                if gij != 0.0 {
                                    axpy(&mut da.data_mut()[i * k..(i + 1) * k], gij, bv.row(j));
                                    axpy(&mut da.data_mut()[j * k..(j + 1) * k], gij, av.row(i));
                                }
                            }
                        }
                    } else {
                        let mut db = take_slot(&mut grads, *b, (n, k));
                        for j in 0..n {
                            let brow = bv.row(j);
                            let dbrow = db.row_mut(j);
                            for i in 0..m {
                                let gij = g.get(i, j);
                                if gij != 0.0 {
                                    axpy(&mut da.data_mut()[i * k..(i + 1) * k], gij, brow);
                                    axpy(dbrow, gij, av.row(i));
                                }
                            }
                        }
                        grads[b.0] = Some(db);
                    }
                    grads[a.0] = Some(da);
                }
                Op::AddBias(a, b) => {
                    let ashape = self.shape(*a);
                    let bshape = self.shape(*b);
                    slot(&mut grads, *a, ashape).add_assign(&g);
                    let db = slot(&mut grads, *b, bshape);
                    for i in 0..g.rows() {
                        for (d, v) in db.data_mut().iter_mut().zip(g.row(i)) {
                            *d += v;
                        }
                    }
                }
                Op::Add(a, b) => {
                    let s = g.shape();
                    slot(&mut grads, *a, s).add_assign(&g);
                    slot(&mut grads, *b, s).add_assign(&g);
                }
                Op::Sub(a, b) => {
                    let s = g.shape();
                    slot(&mut grads, *a, s).add_assign(&g);
                    let db = slot(&mut grads, *b, s);
                    for (d, v) in db.data_mut().iter_mut().zip(g.data()) {
                        *d -= v;
                    }
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    let s = g.shape();
                    {
                        let da = slot(&mut grads, *a, s);
                        for ((d, gv), bv) in da.data_mut().iter_mut().zip(g.data()).zip(bv.data()) {
                            *d += gv * bv;
                        }
                    }
                    let db = slot(&mut grads, *b, s);
                    for ((d, gv), av) in db.data_mut().iter_mut().zip(g.data()).zip(av.data()) {
                        *d += gv * av;
                    }
                }
                Op::MulConst(a, mask) => {
                    let da = slot(&mut grads, *a, g.shape());
                    for ((d, gv), m) in da.data_mut().iter_mut().zip(g.data()).zip(mask.data()) {
                        *d += gv * m;
                    }
                }
                Op::Scale(a, f) => {
                    let da = slot(&mut grads, *a, g.shape());
                    for (d, gv) in da.data_mut().iter_mut().zip(g.data()) {
                        *d += gv * f;
                    }
                }
                Op::Sigmoid(a) => {
                    let da = slot(&mut grads, *a, g.shape());
                    for ((d, gv), yv) in da.data_mut().iter_mut().zip(g.data()).zip(y.data()) {
                        *d += gv * yv * (1.0 - yv);
                    }
                }
                Op::Tanh(a) => {
                    let da = slot(&mut grads, *a, g.shape());
                    for ((d, gv), yv) in da.data_mut().iter_mut().zip(g.data()).zip(y.data()) {
                        *d += gv * (1.0 - yv * yv);
                    }
                }
                Op::Relu(a) => {
                    let da = slot(&mut grads, *a, g.shape());
                    for ((d, gv), yv) in da.data_mut().iter_mut().zip(g.data()).zip(y.data()) {
                        if *yv > 0.0 {
                            *d += gv;
                        }
                    }
                }
                Op::ConcatCols(parts) => {
                    let mut off = 0;
                    for &p in parts {
                        let ps = self.shape(p);
                        let dp = slot(&mut grads, p, ps);
                        for i in 0..ps.0 {
                            for (d, v) in dp.row_mut(i).iter_mut().zip(&g.row(i)[off..off + ps.1]) {
                                *d += v;
                            }
                        }
                        off += ps.1;
                    }
                }
                Op::StackRows(parts) => {
                    let mut off = 0;
                    for &p in parts {
                        let ps = self.shape(p);
                        let dp = slot(&mut grads, p, ps);
                        let cols = ps.1;
                        for (d, v) in dp
                            .data_mut()
                            .iter_mut()
                            .zip(&g.data()[off * cols..(off + ps.0) * cols])
                        {
                            *d += v;
                        }
                        off += ps.0;
                    }
                }
                Op::SliceRows(a, start) => {
                    let s = self.shape(*a);
                    let da = slot(&mut grads, *a, s);
                    let cols = s.1;
                    for (d, v) in da.data_mut()[start * cols..(start + g.rows()) * cols]
                        .iter_mut()
                        .zip(g.data())
                    {
                        *d += v;
                    }
                }
                Op::SliceCols(a, start) => {
                    let s = self.shape(*a);
                    let da = slot(&mut grads, *a, s);
                    for i in 0..g.rows() {
                        for (d, v) in da.row_mut(i)[*start..start + g.cols()].iter_mut().zip(g.row(i)) {
                            *d += v;
                        }
                    }
                }
                Op::Transpose(a) => {
                    let s = self.shape(*a);
                    let da = slot(&mut grads, *a, s);
                    for i in 0..s.0 {
                        for j in 0..s.1 {
                            da.data_mut()[i * s.1 + j] += g.get(j, i);
                        }
                    }
                }
                Op::SumRows(a) => {
                    let s = self.shape(*a);
                    let da = slot(&mut grads, *a, s);
                    for i in 0..s.0 {
                        for (d, v) in da.row_mut(i).iter_mut().zip(g.data()) {
                            *d += v;
                        }
                    }
                }
                Op::SumCols(a) => {
                    let s = self.shape(*a);
                    let da = slot(&mut grads, *a, s);
                    for i in 0..s.0 {
                        let gi = g.get(i, 0);
                        for d in da.row_mut(i) {
                            *d += gi;
                        }
                    }
                }
                Op::SoftmaxRows(a) => {
                    let da = slot(&mut grads, *a, g.shape());
                    for i in 0..g.rows() {
                        let (gr, yr) = (g.row(i), y.row(i));
                        let s = dot(gr, yr);
                        for ((d, gv), yv) in da.row_mut(i).iter_mut().zip(gr).zip(yr) {
                            *d += yv * (gv - s);
                        }
                    }
                }
                Op::LogSoftmaxRows(a) => {
                    let da = slot(&mut grads, *a, g.shape());
                    for i in 0..g.rows() {
                        let (gr, yr) = (g.row(i), y.row(i));
                        let s: f64 = gr.iter().sum();
                        for ((d, gv), yv) in da.row_mut(i).iter_mut().zip(gr).zip(yr) {
                            *d += gv - yv.exp() * s;
                        }
                    }
                }
                Op::GatherRows(a, idx) => {
                    let s = self.shape(*a);
                    let da = slot(&mut grads, *a, s);
                    for (r, &src) in idx.iter().enumerate() {
                        for (d, v) in da.row_mut(src).iter_mut().zip(g.row(r)) {
                            *d += v;
                        }
                    }
                }
                Op::LstmCell { pre, c_prev } => {
                    let pv = self.value(*pre);
                    let (m, h) = g.shape();
                    let mut dpre = Tensor::zeros(m, 4 * h);
                    let mut dc_prev = c_prev.map(|_| Tensor::zeros(m, h));
                    for r in 0..m {
                        let p = pv.row(r);
                        for k in 0..h {
                            let dc = g.get(r, k);
                            let i = sigmoid(p[k]);
                            let gg = p[2 * h + k].tanh();
                            dpre.data_mut()[r * 4 * h + k] = dc * gg * i * (1.0 - i);
                            dpre.data_mut()[r * 4 * h + 2 * h + k] = dc * i * (1.0 - gg * gg);
                            if let (Some(cp), Some(dcp)) = (c_prev, dc_prev.as_mut()) {
                                let f = sigmoid(p[h + k]);
                                let cpv = self.value(*cp).get(r, k);
                                dpre.data_mut()[r * 4 * h + h + k] = dc * cpv * f * (1.0 - f);
                                dcp.data_mut()[r * h + k] = dc * f;
                            }
                        }
                    }
                    slot(&mut grads, *pre, (m, 4 * h)).add_assign(&dpre);
                    if let (Some(cp), Some(dcp)) = (c_prev, dc_prev) {
                        slot(&mut grads, *cp, (m, h)).add_assign(&dcp);
                    }
                }
                Op::LstmHidden { pre, c } => {
                    let (pv, cv) = (self.value(*pre), self.value(*c));
                    let (m, h) = g.shape();
                    let mut dpre = Tensor::zeros(m, 4 * h);
                    let mut dc = Tensor::zeros(m, h);
                    for r in 0..m {
                        for k in 0..h {
                            let dh = g.get(r, k);
                            let o = sigmoid(pv.get(r, 3 * h + k));
                            let tc = cv.get(r, k).tanh();
                            dpre.data_mut()[r * 4 * h + 3 * h + k] = dh * tc * o * (1.0 - o);
                            dc.data_mut()[r * h + k] = dh * o * (1.0 - tc * tc);
                        }
                    }
                    slot(&mut grads, *pre, (m, 4 * h)).add_assign(&dpre);
                    slot(&mut grads, *c, (m, h)).add_assign(&dc);
                }
                Op::CosMatrix(x, yn) => {
                    let (xv, yv) = (self.value(*x), self.value(*yn));
                    let mut dx = Tensor::zeros(xv.rows(), xv.cols());
                    let mut dy = Tensor::zeros(yv.rows(), yv.cols());
                    for i in 0..xv.rows() {
                        for j in 0..yv.rows() {
                            let gij = g.get(i, j);
                            if gij == 0.0 {
                                continue;
                            }
                            let stats = weighted_cos(xv.row(i), yv.row(j), None);
                            weighted_cos_backward(
                                gij,
                                xv.row(i),
                                yv.row(j),
                                None,
                                stats,
                                dx.row_mut(i),
                                dy.row_mut(j),
                                None,
                            );
                        }
                    }
                    slot(&mut grads, *x, xv.shape()).add_assign(&dx);
                    slot(&mut grads, *yn, yv.shape()).add_assign(&dy);
                }
                Op::Perspective { x, y: yn, w } => {
                    let (xv, yv, wv) = (self.value(*x), self.value(*yn), self.value(*w));
                    let mut dx = Tensor::zeros(xv.rows(), xv.cols());
                    let mut dy = Tensor::zeros(yv.rows(), yv.cols());
                    let mut dw = Tensor::zeros(wv.rows(), wv.cols());
                    let d = xv.cols();
                    for i in 0..xv.rows() {
                        let yi = if yv.rows() == 1 { 0 } else { i };
                        for k in 0..wv.rows() {
                            let gik = g.get(i, k);
                            if gik == 0.0 {
                                continue;
                            }
                            let stats = weighted_cos(xv.row(i), yv.row(yi), Some(wv.row(k)));
                            let dxi = &mut dx.data_mut()[i * d..(i + 1) * d];
                            let dyi = &mut dy.data_mut()[yi * d..(yi + 1) * d];
                            let dwk = &mut dw.data_mut()[k * d..(k + 1) * d];
                            weighted_cos_backward(
                                gik,
                                xv.row(i),
                                yv.row(yi),
                                Some(wv.row(k)),
                                stats,
                                dxi,
                                dyi,
                                Some(dwk),
                            );
                        }
                    }
                    slot(&mut grads, *x, xv.shape()).add_assign(&dx);
                    slot(&mut grads, *yn, yv.shape()).add_assign(&dy);
                    slot(&mut grads, *w, wv.shape()).add_assign(&dw);
                }
                Op::PerspectiveMax { x, y: yn, w, arg } => {
                    let (xv, yv, wv) = (self.value(*x), self.value(*yn), self.value(*w));
                    let mut dx = Tensor::zeros(xv.rows(), xv.cols());
                    let mut dy = Tensor::zeros(yv.rows(), yv.cols());
                    let mut dw = Tensor::zeros(wv.rows(), wv.cols());
                    let d = xv.cols();
                    let n = wv.rows();
                    for i in 0..xv.rows() {
                        for k in 0..n {
                            let gik = g.get(i, k);
                            if gik == 0.0 {
                                continue;
                            }
                            let j = arg[i * n + k];
                            let stats = weighted_cos(xv.row(i), yv.row(j), Some(wv.row(k)));
                            let dxi = &mut dx.data_mut()[i * d..(i + 1) * d];
                            let dyj = &mut dy.data_mut()[j * d..(j + 1) * d];
                            let dwk = &mut dw.data_mut()[k * d..(k + 1) * d];
                            weighted_cos_backward(
                                gik,
                                xv.row(i),
                                yv.row(j),
                                Some(wv.row(k)),
                                stats,
                                dxi,
                                dyj,
                                Some(dwk),
                            );
                        }
                    }
                    slot(&mut grads, *x, xv.shape()).add_assign(&dx);
                    slot(&mut grads, *yn, yv.shape()).add_assign(&dy);
                    slot(&mut grads, *w, wv.shape()).add_assign(&dw);
                }
                Op::DivRowsGuarded(a, s) => {
                    let (av, sv) = (self.value(*a), self.value(*s));
                    let mut da = Tensor::zeros(av.rows(), av.cols());
                    let mut ds = Tensor::zeros(sv.rows(), 1);
                    for i in 0..av.rows() {
                        let d = sv.get(i, 0);
                        if d.abs() < DIV_EPS {
                            continue;
                        }
                        let mut acc = 0.0;
                        for ((dv, gv), avv) in da.row_mut(i).iter_mut().zip(g.row(i)).zip(av.row(i)) {
                            *dv = gv / d;
                            acc += gv * avv;
                        }
                        ds.set(i, 0, -acc / (d * d));
                    }
                    slot(&mut grads, *a, av.shape()).add_assign(&da);
                    slot(&mut grads, *s, sv.shape()).add_assign(&ds);
                }
                Op::DotConst(a, coeff) => {
                    let gv = g.data()[0];
                    let da = slot(&mut grads, *a, coeff.shape());
                    for (d, c) in da.data_mut().iter_mut().zip(coeff.data()) {
                        *d += gv * c;
                    }
                }
            }
        }
        out
    }
}

#[inline]
fn slot(grads: &mut [Option<Tensor>], id: NodeId, shape: (usize, usize)) -> &mut Tensor {
    grads[id.0].get_or_insert_with(|| Tensor::zeros(shape.0, shape.1))
}

fn take_slot(grads: &mut [Option<Tensor>], id: NodeId, shape: (usize, usize)) -> Tensor {
    grads[id.0].take().unwrap_or_else(|| Tensor::zeros(shape.0, shape.1))
}
