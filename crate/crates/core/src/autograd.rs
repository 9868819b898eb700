//! Tape-based reverse-mode differentiation over [`Tensor`] values.
//!
//! Every operation appends a node holding its forward value; `backward`
//! walks the tape in reverse. Nodes that do not depend on a parameter (or on
//! a leaf created with [`Tape::leaf_grad`]) are skipped entirely.

use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Ordering;
use core::ops::Range;

use crate::math;
use crate::nn::{ParamId, ParamStore};
use crate::tensor::{dot, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var(pub usize);

pub const MASKED_LOGIT: f64 = -1e9;
const LN_EPS: f64 = 1e-5;

/// Segment-local multi-head scaled dot-product attention. Query segment `s`
/// attends only to key/value segment `s`.
#[derive(Debug, Clone)]
pub struct AttnSpec {
    pub q_segments: Vec<Range<usize>>,
    pub kv_segments: Vec<Range<usize>>,
    pub heads: usize,
    pub scale: f64,
    /// `true` marks a key row as padding.
    pub key_mask: Option<Vec<bool>>,
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Param,
    MatMul(Var, Var),
    MatMulNT(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    MulCol(Var, Var),
    ScaleBy(Var, Var),
    Affine(Var, f64),
    Relu(Var),
    Sigmoid(Var),
    Tanh(Var),
    Gelu(Var),
    Exp(Var),
    ClampMax(Var, f64),
    LogSoftmaxRows(Var),
    LayerNormRows(Var),
    RowNormalize(Var),
    VecNorms(Var),
    Repeat3(Var),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols(Var, usize),
    GatherRows(Var, Vec<usize>),
    SegmentSum(Var, Vec<usize>),
    Diag(Var),
    SumAll(Var),
    MeanAll(Var),
    Attention { q: Var, k: Var, v: Var, spec: AttnSpec, probs: Vec<f64> },
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

pub struct Tape {
    nodes: Vec<Node>,
    params: Vec<(ParamId, Var)>,
    param_slots: Vec<Option<Var>>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    params: Vec<(ParamId, Var)>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads[v.0].as_ref()
    }

    /// Parameter gradients in first-use order; unused parameters are absent.
    pub fn params(&self) -> Vec<(ParamId, &Tensor)> {
        self.params
            .iter()
            .filter_map(|&(id, v)| self.grads[v.0].as_ref().map(|g| (id, g)))
            .collect()
    }

    pub fn param(&self, id: ParamId) -> Option<&Tensor> {
        self.params.iter().find(|(p, _)| *p == id).and_then(|&(_, v)| self.grads[v.0].as_ref())
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new(), params: Vec::new(), param_slots: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn leaf(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// A constant input whose gradient is still tracked (for tests and for
    /// gradients with respect to inputs).
    pub fn leaf_grad(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(Some(v)) = self.param_slots.get(id.0) {
            return *v;
        }
        let v = self.push(store.get(id).clone(), Op::Param, true);
        if self.param_slots.len() <= id.0 {
            self.param_slots.resize(id.0 + 1, None);
        }
        self.param_slots[id.0] = Some(v);
        self.params.push((id, v));
        v
    }

    /// A parameter read as a constant: no gradient flows into it.
    pub fn frozen(&mut self, store: &ParamStore, id: ParamId) -> Var {
        self.leaf(store.get(id).clone())
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).matmul(self.value(b));
        let ng = self.ng(a) || self.ng(b);
        self.push(v, Op::MatMul(a, b), ng)
    }

    /// `a · bᵀ`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).matmul_nt(self.value(b));
        let ng = self.ng(a) || self.ng(b);
        self.push(v, Op::MatMulNT(a, b), ng)
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let v = self.value(a).transpose();
        let ng = self.ng(a);
        self.push(v, Op::Transpose(a), ng)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).zip(self.value(b), |x, y| x + y);
        let ng = self.ng(a) || self.ng(b);
        self.push(v, Op::Add(a, b), ng)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).zip(self.value(b), |x, y| x - y);
        let ng = self.ng(a) || self.ng(b);
        self.push(v, Op::Sub(a, b), ng)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).zip(self.value(b), |x, y| x * y);
        let ng = self.ng(a) || self.ng(b);
        self.push(v, Op::Mul(a, b), ng)
    }

    /// Broadcast-add a `1 x cols` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let (x, r) = (self.value(a), self.value(row));
        assert_eq!((1, x.cols), r.shape(), "add_row shape");
        let mut v = x.clone();
        for i in 0..v.rows {
            for (o, &b) in v.row_mut(i).iter_mut().zip(&r.data) {
                *o += b;
            }
        }
        let ng = self.ng(a) || self.ng(row);
        self.push(v, Op::AddRow(a, row), ng)
    }

    pub fn mul_row(&mut self, a: Var, row: Var) -> Var {
        let (x, r) = (self.value(a), self.value(row));
        assert_eq!((1, x.cols), r.shape(), "mul_row shape");
        let mut v = x.clone();
        for i in 0..v.rows {
            for (o, &b) in v.row_mut(i).iter_mut().zip(&r.data) {
                *o *= b;
            }
        }
        let ng = self.ng(a) || self.ng(row);
        self.push(v, Op::MulRow(a, row), ng)
    }

    /// Scale row `i` of `a` by `col[i]` (`col` is `rows x 1`).
    pub fn mul_col(&mut self, a: Var, col: Var) -> Var {
        let (x, c) = (self.value(a), self.value(col));
        assert_eq!((x.rows, 1), c.shape(), "mul_col shape");
        let mut v = x.clone();
        for i in 0..v.rows {
            let s = c.data[i];
            for o in v.row_mut(i) {
                *o *= s;
            }
        }
        let ng = self.ng(a) || self.ng(col);
        self.push(v, Op::MulCol(a, col), ng)
    }

    /// Multiply by a `1 x 1` variable.
    pub fn scale_by(&mut self, a: Var, s: Var) -> Var {
        let k = self.value(s).item();
        let v = self.value(a).scale(k);
        let ng = self.ng(a) || self.ng(s);
        self.push(v, Op::ScaleBy(a, s), ng)
    }

    /// `mul * a + add`.
    pub fn affine(&mut self, a: Var, mul: f64, add: f64) -> Var {
        let v = self.value(a).map(|x| mul * x + add);
        let ng = self.ng(a);
        self.push(v, Op::Affine(a, mul), ng)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| if x > 0.0 { x } else { 0.0 });
        let ng = self.ng(a);
        self.push(v, Op::Relu(a), ng)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = self.value(a).map(math::sigmoid);
        let ng = self.ng(a);
        self.push(v, Op::Sigmoid(a), ng)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = self.value(a).map(math::tanh);
        let ng = self.ng(a);
        self.push(v, Op::Tanh(a), ng)
    }

    /// Tanh approximation of the Gaussian error linear unit.
    pub fn gelu(&mut self, a: Var) -> Var {
        let v = self.value(a).map(gelu);
        let ng = self.ng(a);
        self.push(v, Op::Gelu(a), ng)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let v = self.value(a).map(math::exp);
        let ng = self.ng(a);
        self.push(v, Op::Exp(a), ng)
    }

    pub fn clamp_max(&mut self, a: Var, max: f64) -> Var {
        let v = self.value(a).map(|x| x.min(max));
        let ng = self.ng(a);
        self.push(v, Op::ClampMax(a, max), ng)
    }

    pub fn log_softmax_rows(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let mut v = x.clone();
        for i in 0..v.rows {
            let row = v.row_mut(i);
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + math::ln(row.iter().map(|&z| math::exp(z - m)).sum::<f64>());
            for z in row.iter_mut() {
                *z -= lse;
            }
        }
        let ng = self.ng(a);
        self.push(v, Op::LogSoftmaxRows(a), ng)
    }

    /// Per-row standardization (no affine part).
    pub fn layer_norm_rows(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let mut v = x.clone();
        let n = x.cols as f64;
        for i in 0..v.rows {
            let row = v.row_mut(i);
            let mean = row.iter().sum::<f64>() / n;
            let var = row.iter().map(|&z| (z - mean) * (z - mean)).sum::<f64>() / n;
            let inv = 1.0 / math::sqrt(var + LN_EPS);
            for z in row.iter_mut() {
                *z = (*z - mean) * inv;
            }
        }
        let ng = self.ng(a);
        self.push(v, Op::LayerNormRows(a), ng)
    }

    /// Divide every row by its Euclidean norm. Callers check for zero rows.
    pub fn row_normalize(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let mut v = x.clone();
        for i in 0..v.rows {
            let row = v.row_mut(i);
            let norm = math::sqrt(dot(row, row));
            for z in row.iter_mut() {
                *z /= norm;
            }
        }
        let ng = self.ng(a);
        self.push(v, Op::RowNormalize(a), ng)
    }

    /// For a `3n x C` stack of 3-vectors (rows `3i..3i+3` belong to item `i`),
    /// return the `n x C` matrix of `sqrt(|v|² + eps)`.
    pub fn vec_norms(&mut self, a: Var, eps: f64) -> Var {
        let x = self.value(a);
        assert_eq!(x.rows % 3, 0, "vector stack rows must be a multiple of 3");
        let n = x.rows / 3;
        let mut v = Tensor::zeros(n, x.cols);
        for i in 0..n {
            for c in 0..x.cols {
                let s: f64 = (0..3).map(|k| x.get(3 * i + k, c) * x.get(3 * i + k, c)).sum();
                v.set(i, c, math::sqrt(s + eps));
            }
        }
        let ng = self.ng(a);
        self.push(v, Op::VecNorms(a), ng)
    }

    /// Repeat every row three times (broadcast a per-item gate over xyz rows).
    pub fn repeat3(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let mut v = Tensor::zeros(3 * x.rows, x.cols);
        for i in 0..x.rows {
            for k in 0..3 {
                v.row_mut(3 * i + k).copy_from_slice(x.row(i));
            }
        }
        let ng = self.ng(a);
        self.push(v, Op::Repeat3(a), ng)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let rows = self.value(parts[0]).rows;
        let cols: usize = parts.iter().map(|&p| self.value(p).cols).sum();
        let mut v = Tensor::zeros(rows, cols);
        let mut off = 0;
        for &p in parts {
            let x = self.value(p);
            assert_eq!(x.rows, rows, "concat_cols row count");
            for i in 0..rows {
                v.row_mut(i)[off..off + x.cols].copy_from_slice(x.row(i));
            }
            off += x.cols;
        }
        let ng = parts.iter().any(|&p| self.ng(p));
        self.push(v, Op::ConcatCols(parts.to_vec()), ng)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let cols = self.value(parts[0]).cols;
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let x = self.value(p);
            assert_eq!(x.cols, cols, "concat_rows column count");
            data.extend_from_slice(&x.data);
            rows += x.rows;
        }
        let ng = parts.iter().any(|&p| self.ng(p));
        self.push(Tensor::from_vec(rows, cols, data), Op::ConcatRows(parts.to_vec()), ng)
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let x = self.value(a);
        assert!(start + len <= x.cols, "slice_cols range");
        let mut v = Tensor::zeros(x.rows, len);
        for i in 0..x.rows {
            v.row_mut(i).copy_from_slice(&x.row(i)[start..start + len]);
        }
        let ng = self.ng(a);
        self.push(v, Op::SliceCols(a, start), ng)
    }

    pub fn gather_rows(&mut self, a: Var, idx: &[usize]) -> Var {
        let x = self.value(a);
        let mut v = Tensor::zeros(idx.len(), x.cols);
        for (o, &i) in idx.iter().enumerate() {
            v.row_mut(o).copy_from_slice(x.row(i));
        }
        let ng = self.ng(a);
        self.push(v, Op::GatherRows(a, idx.to_vec()), ng)
    }

    /// Sum rows of `a` into `n_out` buckets: row `i` goes to `seg[i]`.
    ///
    /// The rows landing in one bucket are summed in lexicographic order of
    /// their contents, so the result does not depend on input row order.
    pub fn segment_sum(&mut self, a: Var, seg: &[usize], n_out: usize) -> Var {
        let x = self.value(a);
        assert_eq!(seg.len(), x.rows, "segment_sum index length");
        let mut buckets: Vec<Vec<usize>> = vec![Vec::new(); n_out];
        for (i, &s) in seg.iter().enumerate() {
            buckets[s].push(i);
        }
        let mut v = Tensor::zeros(n_out, x.cols);
        for (s, rows) in buckets.iter_mut().enumerate() {
            rows.sort_by(|&p, &q| cmp_rows(x.row(p), x.row(q)));
            let out = &mut v.data[s * x.cols..(s + 1) * x.cols];
            for &r in rows.iter() {
                for (o, &z) in out.iter_mut().zip(x.row(r)) {
                    *o += z;
                }
            }
        }
        let ng = self.ng(a);
        self.push(v, Op::SegmentSum(a, seg.to_vec()), ng)
    }

    pub fn diag(&mut self, a: Var) -> Var {
        let x = self.value(a);
        assert_eq!(x.rows, x.cols, "diag of non-square");
        let v = Tensor::from_vec(x.rows, 1, (0..x.rows).map(|i| x.get(i, i)).collect());
        let ng = self.ng(a);
        self.push(v, Op::Diag(a), ng)
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let v = Tensor::scalar(self.value(a).sum());
        let ng = self.ng(a);
        self.push(v, Op::SumAll(a), ng)
    }

    pub fn mean_all(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let v = Tensor::scalar(x.sum() / x.len() as f64);
        let ng = self.ng(a);
        self.push(v, Op::MeanAll(a), ng)
    }

    pub fn attention(&mut self, q: Var, k: Var, v: Var, spec: AttnSpec) -> Var {
        let (qt, kt, vt) = (self.value(q), self.value(k), self.value(v));
        assert_eq!(qt.cols, kt.cols, "attention q/k width");
        assert_eq!(kt.rows, vt.rows, "attention k/v rows");
        assert_eq!(spec.q_segments.len(), spec.kv_segments.len(), "attention segment pairing");
        assert_eq!(qt.cols % spec.heads, 0, "attention head split");
        assert_eq!(vt.cols % spec.heads, 0, "attention head split");
        let dh = qt.cols / spec.heads;
        let dv = vt.cols / spec.heads;
        let mut out = Tensor::zeros(qt.rows, vt.cols);
        let mut probs = Vec::new();
        let mut logits = Vec::new();
        for (qs, ks) in spec.q_segments.iter().zip(&spec.kv_segments) {
            for h in 0..spec.heads {
                for i in qs.clone() {
                    let qrow = &qt.row(i)[h * dh..(h + 1) * dh];
                    logits.clear();
                    for j in ks.clone() {
                        let masked = spec.key_mask.as_ref().is_some_and(|m| m[j]);
                        logits.push(if masked {
                            MASKED_LOGIT
                        } else {
                            spec.scale * dot(qrow, &kt.row(j)[h * dh..(h + 1) * dh])
                        });
                    }
                    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    let mut z = 0.0;
                    for l in logits.iter_mut() {
                        *l = math::exp(*l - m);
                        z += *l;
                    }
                    let orow = &mut out.data[i * vt.cols + h * dv..i * vt.cols + (h + 1) * dv];
                    for (jj, j) in ks.clone().enumerate() {
                        let p = logits[jj] / z;
                        probs.push(p);
                        if p != 0.0 {
                            for (o, &x) in orow.iter_mut().zip(&vt.row(j)[h * dv..(h + 1) * dv]) {
                                *o += p * x;
                            }
                        }
                    }
                }
            }
        }
        let ng = self.ng(q) || self.ng(k) || self.ng(v);
        self.push(out, Op::Attention { q, k, v, spec, probs }, ng)
    }

    /// Attention probabilities stored by an [`Tape::attention`] node, in
    /// (segment, head, query, key) order.
    pub fn attention_probs(&self, v: Var) -> Option<&[f64]> {
        match &self.nodes[v.0].op {
            Op::Attention { probs, .. } => Some(probs),
            _ => None,
        }
    }

    pub fn backward(&self, loss: Var) -> Gradients {
        assert_eq!(self.value(loss).len(), 1, "backward from a non-scalar");
        self.backward_from(&[(loss, Tensor::scalar(1.0))])
    }

    /// Reverse pass seeded with explicit output gradients.
    pub fn backward_from(&self, seeds: &[(Var, Tensor)]) -> Gradients {
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        let mut last = 0;
        for (v, g) in seeds {
            assert_eq!(self.value(*v).shape(), g.shape(), "seed gradient shape");
            acc(&mut grads, *v, g.clone());
            last = last.max(v.0);
        }
        for idx in (0..=last).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.step_back(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Gradients { grads, params: self.params.clone() }
    }

    fn step_back(&self, idx: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let node = &self.nodes[idx];
        let y = &node.value;
        let val = |v: Var| &self.nodes[v.0].value;
        let want = |v: Var| self.nodes[v.0].needs_grad;
        match &node.op {
            Op::Leaf | Op::Param => {}
            Op::MatMul(a, b) => {
                if want(*a) {
                    acc(grads, *a, g.matmul_nt(val(*b)));
                }
                if want(*b) {
                    acc(grads, *b, val(*a).matmul_tn(g));
                }
            }
            Op::MatMulNT(a, b) => {
                if want(*a) {
                    acc(grads, *a, g.matmul(val(*b)));
                }
                if want(*b) {
                    acc(grads, *b, g.matmul_tn(val(*a)));
                }
            }
            Op::Transpose(a) => acc(grads, *a, g.transpose()),
            Op::Add(a, b) => {
                if want(*a) {
                    acc(grads, *a, g.clone());
                }
                if want(*b) {
                    acc(grads, *b, g.clone());
                }
            }
            Op::Sub(a, b) => {
                if want(*a) {
                    acc(grads, *a, g.clone());
                }
                if want(*b) {
                    acc(grads, *b, g.scale(-1.0));
                }
            }
            Op::Mul(a, b) => {
                if want(*a) {
                    acc(grads, *a, g.zip(val(*b), |d, x| d * x));
                }
                if want(*b) {
                    acc(grads, *b, g.zip(val(*a), |d, x| d * x));
                }
            }
            Op::AddRow(a, r) => {
                if want(*a) {
                    acc(grads, *a, g.clone());
                }
                if want(*r) {
                    acc(grads, *r, col_sums(g));
                }
            }
            Op::MulRow(a, r) => {
                let (x, row) = (val(*a), val(*r));
                if want(*a) {
                    let mut d = g.clone();
                    for i in 0..d.rows {
                        for (o, &s) in d.row_mut(i).iter_mut().zip(&row.data) {
                            *o *= s;
                        }
                    }
                    acc(grads, *a, d);
                }
                if want(*r) {
                    acc(grads, *r, col_sums(&g.zip(x, |d, z| d * z)));
                }
            }
            Op::MulCol(a, c) => {
                let (x, col) = (val(*a), val(*c));
                if want(*a) {
                    let mut d = g.clone();
                    for i in 0..d.rows {
                        let s = col.data[i];
                        for o in d.row_mut(i) {
                            *o *= s;
                        }
                    }
                    acc(grads, *a, d);
                }
                if want(*c) {
                    let d = (0..x.rows).map(|i| dot(g.row(i), x.row(i))).collect();
                    acc(grads, *c, Tensor::from_vec(x.rows, 1, d));
                }
            }
            Op::ScaleBy(a, s) => {
                if want(*a) {
                    acc(grads, *a, g.scale(val(*s).item()));
                }
                if want(*s) {
                    acc(grads, *s, Tensor::scalar(dot(&g.data, &val(*a).data)));
                }
            }
            Op::Affine(a, mul) => acc(grads, *a, g.scale(*mul)),
            Op::Relu(a) => acc(grads, *a, g.zip(val(*a), |d, x| if x > 0.0 { d } else { 0.0 })),
            Op::Sigmoid(a) => acc(grads, *a, g.zip(y, |d, s| d * s * (1.0 - s))),
            Op::Tanh(a) => acc(grads, *a, g.zip(y, |d, t| d * (1.0 - t * t))),
            Op::Gelu(a) => acc(grads, *a, g.zip(val(*a), |d, x| d * gelu_grad(x))),
            Op::Exp(a) => acc(grads, *a, g.zip(y, |d, e| d * e)),
            Op::ClampMax(a, m) => acc(grads, *a, g.zip(val(*a), |d, x| if x < *m { d } else { 0.0 })),
            Op::LogSoftmaxRows(a) => {
                let mut d = g.clone();
                for i in 0..d.rows {
                    let s: f64 = g.row(i).iter().sum();
                    for (o, &ly) in d.row_mut(i).iter_mut().zip(y.row(i)) {
                        *o -= math::exp(ly) * s;
                    }
                }
                acc(grads, *a, d);
            }
            Op::LayerNormRows(a) => {
                let x = val(*a);
                let n = x.cols as f64;
                let mut d = Tensor::zeros(x.rows, x.cols);
                for i in 0..x.rows {
                    let row = x.row(i);
                    let mean = row.iter().sum::<f64>() / n;
                    let var = row.iter().map(|&z| (z - mean) * (z - mean)).sum::<f64>() / n;
                    let inv = 1.0 / math::sqrt(var + LN_EPS);
                    let (gy, yy) = (g.row(i), y.row(i));
                    let mg = gy.iter().sum::<f64>() / n;
                    let mgy = dot(gy, yy) / n;
                    for (c, o) in d.row_mut(i).iter_mut().enumerate() {
                        *o = inv * (gy[c] - mg - yy[c] * mgy);
                    }
                }
                acc(grads, *a, d);
            }
            Op::RowNormalize(a) => {
                let x = val(*a);
                let mut d = Tensor::zeros(x.rows, x.cols);
                for i in 0..x.rows {
                    let norm = math::sqrt(dot(x.row(i), x.row(i)));
                    let (gy, yy) = (g.row(i), y.row(i));
                    let proj = dot(gy, yy);
                    for (c, o) in d.row_mut(i).iter_mut().enumerate() {
                        *o = (gy[c] - yy[c] * proj) / norm;
                    }
                }
                acc(grads, *a, d);
            }
            Op::VecNorms(a) => {
                let x = val(*a);
                let mut d = Tensor::zeros(x.rows, x.cols);
                for i in 0..y.rows {
                    for c in 0..x.cols {
                        let s = g.get(i, c) / y.get(i, c);
                        for k in 0..3 {
                            d.set(3 * i + k, c, s * x.get(3 * i + k, c));
                        }
                    }
                }
                acc(grads, *a, d);
            }
            Op::Repeat3(a) => {
                let n = g.rows / 3;
                let mut d = Tensor::zeros(n, g.cols);
                for i in 0..n {
                    let out = d.row_mut(i);
                    for k in 0..3 {
                        for (o, &z) in out.iter_mut().zip(g.row(3 * i + k)) {
                            *o += z;
                        }
                    }
                }
                acc(grads, *a, d);
            }
            Op::ConcatCols(parts) => {
                let mut off = 0;
                for &p in parts {
                    let w = val(p).cols;
                    if want(p) {
                        let mut d = Tensor::zeros(g.rows, w);
                        for i in 0..g.rows {
                            d.row_mut(i).copy_from_slice(&g.row(i)[off..off + w]);
                        }
                        acc(grads, p, d);
                    }
                    off += w;
                }
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for &p in parts {
                    let r = val(p).rows;
                    if want(p) {
                        let d = g.data[off * g.cols..(off + r) * g.cols].to_vec();
                        acc(grads, p, Tensor::from_vec(r, g.cols, d));
                    }
                    off += r;
                }
            }
            Op::SliceCols(a, start) => {
                let x = val(*a);
                let mut d = Tensor::zeros(x.rows, x.cols);
                for i in 0..x.rows {
                    d.row_mut(i)[*start..*start + g.cols].copy_from_slice(g.row(i));
                }
                acc(grads, *a, d);
            }
            Op::GatherRows(a, idx) => {
                let x = val(*a);
                let mut d = Tensor::zeros(x.rows, x.cols);
                for (o, &i) in idx.iter().enumerate() {
                    for (dst, &z) in d.row_mut(i).iter_mut().zip(g.row(o)) {
                        *dst += z;
                    }
                }
                acc(grads, *a, d);
            }
            Op::SegmentSum(a, seg) => {
                let mut d = Tensor::zeros(seg.len(), g.cols);
                for (i, &s) in seg.iter().enumerate() {
                    d.row_mut(i).copy_from_slice(g.row(s));
                }
                acc(grads, *a, d);
            }
            Op::Diag(a) => {
                let n = g.rows;
                let mut d = Tensor::zeros(n, n);
                for i in 0..n {
                    d.set(i, i, g.data[i]);
                }
                acc(grads, *a, d);
            }
            Op::SumAll(a) => {
                let x = val(*a);
                acc(grads, *a, Tensor::filled(x.rows, x.cols, g.item()));
            }
            Op::MeanAll(a) => {
                let x = val(*a);
                acc(grads, *a, Tensor::filled(x.rows, x.cols, g.item() / x.len() as f64));
            }
            Op::Attention { q, k, v, spec, probs } => {
                let (qt, kt, vt) = (val(*q), val(*k), val(*v));
                let dh = qt.cols / spec.heads;
                let dv = vt.cols / spec.heads;
                let mut dq = Tensor::zeros(qt.rows, qt.cols);
                let mut dk = Tensor::zeros(kt.rows, kt.cols);
                let mut dvv = Tensor::zeros(vt.rows, vt.cols);
                let mut pos = 0;
                let mut dp = Vec::new();
                for (qs, ks) in spec.q_segments.iter().zip(&spec.kv_segments) {
                    for h in 0..spec.heads {
                        for i in qs.clone() {
                            let go = &g.row(i)[h * dv..(h + 1) * dv];
                            let p = &probs[pos..pos + ks.len()];
                            pos += ks.len();
                            dp.clear();
                            for (jj, j) in ks.clone().enumerate() {
                                dp.push(dot(go, &vt.row(j)[h * dv..(h + 1) * dv]));
                                let drow = &mut dvv.data[j * vt.cols + h * dv..j * vt.cols + (h + 1) * dv];
                                for (o, &z) in drow.iter_mut().zip(go) {
                                    *o += p[jj] * z;
                                }
                            }
                            let s: f64 = p.iter().zip(&dp).map(|(a, b)| a * b).sum();
                            for (jj, j) in ks.clone().enumerate() {
                                let ds = p[jj] * (dp[jj] - s) * spec.scale;
                                if ds == 0.0 {
                                    continue;
                                }
                                for c in 0..dh {
                                    dq.data[i * qt.cols + h * dh + c] += ds * kt.get(j, h * dh + c);
                                    dk.data[j * kt.cols + h * dh + c] += ds * qt.get(i, h * dh + c);
                                }
                            }
                        }
                    }
                }
                if want(*q) {
                    acc(grads, *q, dq);
                }
                if want(*k) {
                    acc(grads, *k, dk);
                }
                if want(*v) {
                    acc(grads, *v, dvv);
                }
            }
        }
    }
}

fn acc(grads: &mut [Option<Tensor>], v: Var, t: Tensor) {
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(&t),
        slot => *slot = Some(t),
    }
}

fn col_sums(g: &Tensor) -> Tensor {
    let mut out = Tensor::zeros(1, g.cols);
    for i in 0..g.rows {
        for (o, &z) in out.data.iter_mut().zip(g.row(i)) {
            *o += z;
        }
    }
    out
}

fn cmp_rows(a: &[f64], b: &[f64]) -> Ordering {
    for (x, y) in a.iter().zip(b) {
        match x.total_cmp(y) {
            Ordering::Equal => continue,
            o => return o,
        }
    }
    Ordering::Equal
}

const GELU_C: f64 = 0.797_884_560_802_865_4;

pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + math::tanh(GELU_C * (x + 0.044715 * x * x * x)))
}

fn gelu_grad(x: f64) -> f64 {
    let u = GELU_C * (x + 0.044715 * x * x * x);
    let t = math::tanh(u);
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * 0.044715 * x * x)
}

/// Central finite-difference check of `f` at `x`: returns the largest
/// relative error `|a - n| / max(1, |a|, |n|)` across entries.
pub fn fd_check(x: &Tensor, analytic: &Tensor, step: f64, mut f: impl FnMut(&Tensor) -> f64) -> f64 {
    let mut worst: f64 = 0.0;
    let mut probe = x.clone();
    for i in 0..x.len() {
        let orig = probe.data[i];
        probe.data[i] = orig + step;
        let up = f(&probe);
        probe.data[i] = orig - step;
        let down = f(&probe);
        probe.data[i] = orig;
        let num = (up - down) / (2.0 * step);
        let a = analytic.data[i];
        let denom = a.abs().max(num.abs()).max(1.0);
        worst = worst.max((a - num).abs() / denom);
    }
    worst
}
