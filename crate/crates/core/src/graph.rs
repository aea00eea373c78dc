//! Define-by-run reverse-mode differentiation over [`Tensor`] values.
//!
//! A [`Graph`] is a tape of nodes; constructing an operation evaluates it
//! eagerly and records enough structure to push gradients back through the
//! whole computation with [`Graph::backward`]. Model parameters live in a
//! [`ParamStore`] outside any graph and are injected per-graph with
//! [`Graph::param`], so one set of tensors can back many forward passes.

use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

/// Handle to a tensor in a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ParamId(pub(crate) usize);

/// Learning-rate group a parameter belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ParamGroup {
    Encoder,
    Head,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub(crate) struct ParamEntry {
    pub name: String,
    pub tensor: Tensor,
    pub group: ParamGroup,
}

/// Named parameter tensors shared across forward passes.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct ParamStore {
    pub(crate) entries: Vec<ParamEntry>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, name: impl Into<String>, tensor: Tensor, group: ParamGroup) -> ParamId {
        self.entries.push(ParamEntry {
            name: name.into(),
            tensor,
            group,
        });
        ParamId(self.entries.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn tensor(&self, id: ParamId) -> &Tensor {
        &self.entries[id.0].tensor
    }

    pub fn tensor_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.entries[id.0].tensor
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].name
    }

    pub fn group(&self, id: ParamId) -> ParamGroup {
        self.entries[id.0].group
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    /// Total number of scalar parameters.
    pub fn scalar_count(&self) -> usize {
        self.entries.iter().map(|e| e.tensor.len()).sum()
    }
}

/// Per-parameter gradient accumulator aligned with a [`ParamStore`].
#[derive(Clone, Debug)]
pub struct GradBuffer {
    grads: Vec<Option<Tensor>>,
}

impl GradBuffer {
    pub fn new(store: &ParamStore) -> Self {
        GradBuffer {
            grads: vec![None; store.len()],
        }
    }

    pub fn clear(&mut self) {
        for g in &mut self.grads {
            *g = None;
        }
    }

    pub fn get(&self, id: ParamId) -> Option<&Tensor> {
        self.grads[id.0].as_ref()
    }

    pub fn accumulate(&mut self, id: ParamId, grad: &Tensor) {
        match &mut self.grads[id.0] {
            Some(t) => t.add_scaled(grad, 1.0),
            slot => *slot = Some(grad.clone()),
        }
    }

    /// Global L2 norm over all accumulated gradients.
    pub fn global_norm(&self) -> f64 {
        self.grads
            .iter()
            .flatten()
            .flat_map(|t| t.data().iter())
            .map(|&g| g * g)
            .sum::<f64>()
            .sqrt()
    }

    pub fn scale(&mut self, factor: f64) {
        for g in self.grads.iter_mut().flatten() {
            for v in g.data_mut() {
                *v *= factor;
            }
        }
    }

    pub fn all_finite(&self) -> bool {
        self.grads.iter().flatten().all(|t| t.all_finite())
    }
}

#[derive(Debug)]
enum Op {
    Const,
    Param,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    /// `mul * x + add`, elementwise with scalar constants; only the slope
    /// matters to the backward pass.
    Affine { x: Var, mul: f64 },
    /// `x + row` broadcasting a `[1, H]` row over every row of `x`.
    AddRow { x: Var, row: Var },
    MatMul { a: Var, b: Var, ta: bool, tb: bool },
    Transpose(Var),
    GatherRows { x: Var, idx: Vec<usize> },
    ScatterRows { x: Var, idx: Vec<usize> },
    GatherCols { x: Var, idx: Vec<usize> },
    /// Place a `[k, k]` block into a `[size, size]` zero matrix at `idx × idx`.
    ScatterBlock { x: Var, idx: Vec<usize> },
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    /// Elementwise sum of same-shape inputs.
    SumVars(Vec<Var>),
    MeanAxis0(Var),
    SumAll(Var),
    LogSumExpAxis0(Var),
    Tanh(Var),
    Sigmoid(Var),
    Ln(Var),
    Gelu(Var),
    PowConst { x: Var, e: f64 },
    Clamp { x: Var, lo: f64, hi: f64 },
    SoftmaxRows(Var),
    LayerNormRows { x: Var, gain: Var, bias: Var, eps: f64 },
    /// Concatenation of per-group outer products of two `[1, H]` rows.
    GroupOuter { x: Var, y: Var, groups: usize },
    /// `x / s` with `s` a `[1, 1]` node.
    DivScalar { x: Var, s: Var },
    /// Elementwise product with a constant tensor.
    MulConst { x: Var, m: Tensor },
    /// `x[i, j] / s[i, 0]`.
    DivColBroadcast { x: Var, s: Var },
}

struct Node {
    op: Op,
    value: Tensor,
}

/// Tape of eagerly evaluated operations.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    param_nodes: Vec<(ParamId, Var)>,
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

fn stable_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Graph {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::with_capacity(256),
            param_nodes: Vec::new(),
        }
    }

    fn push(&mut self, op: Op, value: Tensor) -> Var {
        self.nodes.push(Node { op, value });
        Var(self.nodes.len() - 1)
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

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(Op::Const, t)
    }

    pub fn scalar(&mut self, v: f64) -> Var {
        self.constant(Tensor::scalar(v))
    }

    /// Inject a parameter; repeated injection of the same id reuses the node
    /// so its gradient accumulates in one place.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&(_, v)) = self.param_nodes.iter().find(|(p, _)| *p == id) {
            return v;
        }
        let v = self.push(Op::Param, store.tensor(id).clone());
        self.param_nodes.push((id, v));
        v
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let t = self.value(a).zip_map(self.value(b), |x, y| x + y);
        self.push(Op::Add(a, b), t)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let t = self.value(a).zip_map(self.value(b), |x, y| x - y);
        self.push(Op::Sub(a, b), t)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let t = self.value(a).zip_map(self.value(b), |x, y| x * y);
        self.push(Op::Mul(a, b), t)
    }

    pub fn affine(&mut self, x: Var, mul: f64, add: f64) -> Var {
        let t = self.value(x).map(|v| mul * v + add);
        self.push(Op::Affine { x, mul }, t)
    }

    pub fn neg(&mut self, x: Var) -> Var {
        self.affine(x, -1.0, 0.0)
    }

    pub fn add_row(&mut self, x: Var, row: Var) -> Var {
        let xv = self.value(x);
        let rv = self.value(row);
        assert_eq!(rv.rows(), 1, "add_row rhs must be a row vector");
        assert_eq!(xv.cols(), rv.cols(), "add_row width mismatch");
        let mut out = xv.clone();
        for r in 0..out.rows() {
            for (o, &b) in out.row_mut(r).iter_mut().zip(rv.row(0)) {
                *o += b;
            }
        }
        self.push(Op::AddRow { x, row }, out)
    }

    pub fn matmul(&mut self, a: Var, b: Var, ta: bool, tb: bool) -> Var {
        let t = Tensor::matmul(self.value(a), self.value(b), ta, tb);
        self.push(Op::MatMul { a, b, ta, tb }, t)
    }

    /// Row-vector linear layer: `x · Wᵀ + b` for `x: [N, in]`, `w: [out, in]`,
    /// `b: [1, out]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Var {
        let xw = self.matmul(x, w, false, true);
        self.add_row(xw, b)
    }

    pub fn transpose(&mut self, x: Var) -> Var {
        let t = self.value(x).transpose();
        self.push(Op::Transpose(x), t)
    }

    pub fn gather_rows(&mut self, x: Var, idx: &[usize]) -> Var {
        let xv = self.value(x);
        let mut out = Tensor::zeros(idx.len(), xv.cols());
        for (r, &i) in idx.iter().enumerate() {
            out.row_mut(r).copy_from_slice(xv.row(i));
        }
        self.push(
            Op::GatherRows {
                x,
                idx: idx.to_vec(),
            },
            out,
        )
    }

    pub fn scatter_rows(&mut self, x: Var, idx: &[usize], rows: usize) -> Var {
        let xv = self.value(x);
        assert_eq!(xv.rows(), idx.len());
        let mut out = Tensor::zeros(rows, xv.cols());
        for (r, &i) in idx.iter().enumerate() {
            for (o, &v) in out.row_mut(i).iter_mut().zip(xv.row(r)) {
                *o += v;
            }
        }
        self.push(
            Op::ScatterRows {
                x,
                idx: idx.to_vec(),
            },
            out,
        )
    }

    pub fn gather_cols(&mut self, x: Var, idx: &[usize]) -> Var {
        let xv = self.value(x);
        let mut out = Tensor::zeros(xv.rows(), idx.len());
        for r in 0..xv.rows() {
            for (j, &c) in idx.iter().enumerate() {
                out.set(r, j, xv.get(r, c));
            }
        }
        self.push(
            Op::GatherCols {
                x,
                idx: idx.to_vec(),
            },
            out,
        )
    }

    pub fn scatter_block(&mut self, x: Var, idx: &[usize], size: usize) -> Var {
        let xv = self.value(x);
        assert_eq!(xv.rows(), idx.len());
        assert_eq!(xv.cols(), idx.len());
        let mut out = Tensor::zeros(size, size);
        for (r, &gr) in idx.iter().enumerate() {
            for (c, &gc) in idx.iter().enumerate() {
                let cur = out.get(gr, gc);
                out.set(gr, gc, cur + xv.get(r, c));
            }
        }
        self.push(
            Op::ScatterBlock {
                x,
                idx: idx.to_vec(),
            },
            out,
        )
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let cols = self.value(parts[0]).cols();
        let rows: usize = parts.iter().map(|&p| self.value(p).rows()).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for &p in parts {
            let t = self.value(p);
            assert_eq!(t.cols(), cols, "concat_rows width mismatch");
            data.extend_from_slice(t.data());
        }
        self.push(Op::ConcatRows(parts.to_vec()), Tensor::from_vec(rows, cols, data))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let rows = self.value(parts[0]).rows();
        let cols: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut out = Tensor::zeros(rows, cols);
        let mut off = 0;
        for &p in parts {
            let t = self.value(p);
            assert_eq!(t.rows(), rows, "concat_cols height mismatch");
            for r in 0..rows {
                out.row_mut(r)[off..off + t.cols()].copy_from_slice(t.row(r));
            }
            off += t.cols();
        }
        self.push(Op::ConcatCols(parts.to_vec()), out)
    }

    /// Elementwise sum of any number of same-shape vars.
    pub fn sum_vars(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let mut out = self.value(parts[0]).clone();
        for &p in &parts[1..] {
            out.add_scaled(self.value(p), 1.0);
        }
        self.push(Op::SumVars(parts.to_vec()), out)
    }

    pub fn mean_axis0(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let k = xv.rows() as f64;
        let mut out = Tensor::zeros(1, xv.cols());
        for r in 0..xv.rows() {
            for (o, &v) in out.row_mut(0).iter_mut().zip(xv.row(r)) {
                *o += v;
            }
        }
        for o in out.data_mut() {
            *o /= k;
        }
        self.push(Op::MeanAxis0(x), out)
    }

    pub fn sum_all(&mut self, x: Var) -> Var {
        let s = self.value(x).sum();
        self.push(Op::SumAll(x), Tensor::scalar(s))
    }

    /// Column-wise stabilized log-sum-exp over rows: `[k, n] -> [1, n]`.
    pub fn logsumexp_axis0(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let (k, n) = xv.shape();
        assert!(k > 0);
        let mut out = Tensor::zeros(1, n);
        for j in 0..n {
            let mut m = f64::NEG_INFINITY;
            for i in 0..k {
                m = m.max(xv.get(i, j));
            }
            let mut s = 0.0;
            for i in 0..k {
                s += (xv.get(i, j) - m).exp();
            }
            out.set(0, j, m + s.ln());
        }
        self.push(Op::LogSumExpAxis0(x), out)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let t = self.value(x).map(f64::tanh);
        self.push(Op::Tanh(x), t)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let t = self.value(x).map(stable_sigmoid);
        self.push(Op::Sigmoid(x), t)
    }

    pub fn ln(&mut self, x: Var) -> Var {
        let t = self.value(x).map(f64::ln);
        self.push(Op::Ln(x), t)
    }

    pub fn gelu(&mut self, x: Var) -> Var {
        let t = self.value(x).map(|v| {
            let u = GELU_C * (v + GELU_A * v * v * v);
            0.5 * v * (1.0 + u.tanh())
        });
        self.push(Op::Gelu(x), t)
    }

    pub fn pow_const(&mut self, x: Var, e: f64) -> Var {
        let t = self.value(x).map(|v| v.powf(e));
        self.push(Op::PowConst { x, e }, t)
    }

    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Var {
        let t = self.value(x).map(|v| v.clamp(lo, hi));
        self.push(Op::Clamp { x, lo, hi }, t)
    }

    pub fn softmax_rows(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let mut out = xv.clone();
        for r in 0..out.rows() {
            let row = out.row_mut(r);
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut s = 0.0;
            for v in row.iter_mut() {
                *v = (*v - m).exp();
                s += *v;
            }
            for v in row.iter_mut() {
                *v /= s;
            }
        }
        self.push(Op::SoftmaxRows(x), out)
    }

    pub fn layer_norm_rows(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Var {
        let xv = self.value(x);
        let gv = self.value(gain);
        let bv = self.value(bias);
        let n = xv.cols();
        assert_eq!(gv.shape(), (1, n));
        assert_eq!(bv.shape(), (1, n));
        let mut out = Tensor::zeros(xv.rows(), n);
        for r in 0..xv.rows() {
            let row = xv.row(r);
            let mean = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
            let inv = 1.0 / (var + eps).sqrt();
            for c in 0..n {
                out.set(r, c, gv.get(0, c) * (row[c] - mean) * inv + bv.get(0, c));
            }
        }
        self.push(Op::LayerNormRows { x, gain, bias, eps }, out)
    }

    pub fn group_outer(&mut self, x: Var, y: Var, groups: usize) -> Var {
        let xv = self.value(x);
        let yv = self.value(y);
        assert_eq!(xv.rows(), 1);
        assert_eq!(yv.rows(), 1);
        assert_eq!(xv.cols(), yv.cols());
        let h = xv.cols();
        assert!(groups > 0 && h % groups == 0, "group count must divide width");
        let g = h / groups;
        let mut out = Tensor::zeros(1, groups * g * g);
        for k in 0..groups {
            for i in 0..g {
                let xi = xv.get(0, k * g + i);
                for j in 0..g {
                    out.set(0, k * g * g + i * g + j, xi * yv.get(0, k * g + j));
                }
            }
        }
        self.push(Op::GroupOuter { x, y, groups }, out)
    }

    pub fn div_scalar(&mut self, x: Var, s: Var) -> Var {
        let sv = self.value(s);
        assert_eq!(sv.shape(), (1, 1));
        let d = sv.item();
        let t = self.value(x).map(|v| v / d);
        self.push(Op::DivScalar { x, s }, t)
    }

    pub fn mul_const(&mut self, x: Var, m: Tensor) -> Var {
        let t = self.value(x).zip_map(&m, |a, b| a * b);
        self.push(Op::MulConst { x, m }, t)
    }

    pub fn div_col_broadcast(&mut self, x: Var, s: Var) -> Var {
        let xv = self.value(x);
        let sv = self.value(s);
        assert_eq!(sv.shape(), (xv.rows(), 1));
        let mut out = xv.clone();
        for r in 0..out.rows() {
            let d = sv.get(r, 0);
            for v in out.row_mut(r) {
                *v /= d;
            }
        }
        self.push(Op::DivColBroadcast { x, s }, out)
    }

    /// Reverse pass from a scalar node; returns per-node gradients.
    pub fn backward(&self, loss: Var) -> Grads {
        assert_eq!(
            self.value(loss).shape(),
            (1, 1),
            "backward expects a scalar loss node"
        );
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::scalar(1.0));

        for i in (0..self.nodes.len()).rev() {
            let g = match grads[i].take() {
                Some(g) => g,
                None => continue,
            };
            self.push_back(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        Grads { grads }
    }

    fn accumulate(grads: &mut [Option<Tensor>], v: Var, delta: Tensor) {
        match &mut grads[v.0] {
            Some(t) => t.add_scaled(&delta, 1.0),
            slot => *slot = Some(delta),
        }
    }

    #[allow(clippy::too_many_lines)]
    fn push_back(&self, i: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let acc = Self::accumulate;
        match &self.nodes[i].op {
            Op::Const | Op::Param => {}
            Op::Add(a, b) => {
                acc(grads, *a, g.clone());
                acc(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                acc(grads, *a, g.clone());
                acc(grads, *b, g.map(|v| -v));
            }
            Op::Mul(a, b) => {
                acc(grads, *a, g.zip_map(self.value(*b), |gv, bv| gv * bv));
                acc(grads, *b, g.zip_map(self.value(*a), |gv, av| gv * av));
            }
            Op::Affine { x, mul } => {
                acc(grads, *x, g.map(|v| mul * v));
            }
            Op::AddRow { x, row } => {
                acc(grads, *x, g.clone());
                let mut r = Tensor::zeros(1, g.cols());
                for i in 0..g.rows() {
                    for (o, &v) in r.row_mut(0).iter_mut().zip(g.row(i)) {
                        *o += v;
                    }
                }
                acc(grads, *row, r);
            }
            Op::MatMul { a, b, ta, tb } => {
                // value = A' B' with A' = op_ta(a), B' = op_tb(b)
                let da_eff = Tensor::matmul(g, self.value(*b), false, !tb);
                let da = if *ta { da_eff.transpose() } else { da_eff };
                acc(grads, *a, da);
                let db_eff = Tensor::matmul(self.value(*a), g, !ta, false);
                let db = if *tb { db_eff.transpose() } else { db_eff };
                acc(grads, *b, db);
            }
            Op::Transpose(x) => {
                acc(grads, *x, g.transpose());
            }
            Op::GatherRows { x, idx } => {
                let cols = g.cols();
                let mut dx = Tensor::zeros(self.value(*x).rows(), cols);
                for (r, &i) in idx.iter().enumerate() {
                    for (o, &v) in dx.row_mut(i).iter_mut().zip(g.row(r)) {
                        *o += v;
                    }
                }
                acc(grads, *x, dx);
            }
            Op::ScatterRows { x, idx } => {
                let mut dx = Tensor::zeros(idx.len(), g.cols());
                for (r, &i) in idx.iter().enumerate() {
                    dx.row_mut(r).copy_from_slice(g.row(i));
                }
                acc(grads, *x, dx);
            }
            Op::GatherCols { x, idx } => {
                let xv = self.value(*x);
                let mut dx = Tensor::zeros(xv.rows(), xv.cols());
                for r in 0..g.rows() {
                    for (j, &c) in idx.iter().enumerate() {
                        let cur = dx.get(r, c);
                        dx.set(r, c, cur + g.get(r, j));
                    }
                }
                acc(grads, *x, dx);
            }
            Op::ScatterBlock { x, idx } => {
                let k = idx.len();
                let mut dx = Tensor::zeros(k, k);
                for (r, &gr) in idx.iter().enumerate() {
                    for (c, &gc) in idx.iter().enumerate() {
                        dx.set(r, c, g.get(gr, gc));
                    }
                }
                acc(grads, *x, dx);
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for &p in parts {
                    let rows = self.value(p).rows();
                    let mut dp = Tensor::zeros(rows, g.cols());
                    for r in 0..rows {
                        dp.row_mut(r).copy_from_slice(g.row(off + r));
                    }
                    acc(grads, p, dp);
                    off += rows;
                }
            }
            Op::ConcatCols(parts) => {
                let mut off = 0;
                for &p in parts {
                    let cols = self.value(p).cols();
                    let mut dp = Tensor::zeros(g.rows(), cols);
                    for r in 0..g.rows() {
                        dp.row_mut(r).copy_from_slice(&g.row(r)[off..off + cols]);
                    }
                    acc(grads, p, dp);
                    off += cols;
                }
            }
            Op::SumVars(parts) => {
                for &p in parts {
                    acc(grads, p, g.clone());
                }
            }
            Op::MeanAxis0(x) => {
                let rows = self.value(*x).rows();
                let scale = 1.0 / rows as f64;
                let mut dx = Tensor::zeros(rows, g.cols());
                for r in 0..rows {
                    for (o, &v) in dx.row_mut(r).iter_mut().zip(g.row(0)) {
                        *o = v * scale;
                    }
                }
                acc(grads, *x, dx);
            }
            Op::SumAll(x) => {
                let xv = self.value(*x);
                let s = g.item();
                acc(grads, *x, Tensor::from_fn(xv.rows(), xv.cols(), |_, _| s));
            }
            Op::LogSumExpAxis0(x) => {
                let xv = self.value(*x);
                let out = &self.nodes[i].value;
                let mut dx = Tensor::zeros(xv.rows(), xv.cols());
                for r in 0..xv.rows() {
                    for c in 0..xv.cols() {
                        dx.set(r, c, g.get(0, c) * (xv.get(r, c) - out.get(0, c)).exp());
                    }
                }
                acc(grads, *x, dx);
            }
            Op::Tanh(x) => {
                let y = &self.nodes[i].value;
                acc(grads, *x, g.zip_map(y, |gv, yv| gv * (1.0 - yv * yv)));
            }
            Op::Sigmoid(x) => {
                let y = &self.nodes[i].value;
                acc(grads, *x, g.zip_map(y, |gv, yv| gv * yv * (1.0 - yv)));
            }
            Op::Ln(x) => {
                acc(grads, *x, g.zip_map(self.value(*x), |gv, xv| gv / xv));
            }
            Op::Gelu(x) => {
                let xv = self.value(*x);
                acc(
                    grads,
                    *x,
                    g.zip_map(xv, |gv, v| {
                        let u = GELU_C * (v + GELU_A * v * v * v);
                        let t = u.tanh();
                        let du = GELU_C * (1.0 + 3.0 * GELU_A * v * v);
                        gv * (0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * du)
                    }),
                );
            }
            Op::PowConst { x, e } => {
                if *e != 0.0 {
                    let e = *e;
                    acc(
                        grads,
                        *x,
                        g.zip_map(self.value(*x), |gv, xv| gv * e * xv.powf(e - 1.0)),
                    );
                }
            }
            Op::Clamp { x, lo, hi } => {
                acc(
                    grads,
                    *x,
                    g.zip_map(self.value(*x), |gv, xv| {
                        if xv > *lo && xv < *hi {
                            gv
                        } else {
                            0.0
                        }
                    }),
                );
            }
            Op::SoftmaxRows(x) => {
                let y = &self.nodes[i].value;
                let mut dx = Tensor::zeros(y.rows(), y.cols());
                for r in 0..y.rows() {
                    let dot: f64 = g.row(r).iter().zip(y.row(r)).map(|(&a, &b)| a * b).sum();
                    for c in 0..y.cols() {
                        dx.set(r, c, y.get(r, c) * (g.get(r, c) - dot));
                    }
                }
                acc(grads, *x, dx);
            }
            Op::LayerNormRows { x, gain, bias, eps } => {
                let xv = self.value(*x);
                let gv = self.value(*gain);
                let n = xv.cols();
                let nf = n as f64;
                let mut dx = Tensor::zeros(xv.rows(), n);
                let mut dgain = Tensor::zeros(1, n);
                let mut dbias = Tensor::zeros(1, n);
                for r in 0..xv.rows() {
                    let row = xv.row(r);
                    let mean = row.iter().sum::<f64>() / nf;
                    let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / nf;
                    let inv = 1.0 / (var + eps).sqrt();
                    let xhat: Vec<f64> = row.iter().map(|&v| (v - mean) * inv).collect();
                    let u: Vec<f64> = (0..n).map(|c| g.get(r, c) * gv.get(0, c)).collect();
                    let mean_u = u.iter().sum::<f64>() / nf;
                    let mean_ux: f64 = u.iter().zip(&xhat).map(|(&a, &b)| a * b).sum::<f64>() / nf;
                    for c in 0..n {
                        dx.set(r, c, inv * (u[c] - mean_u - xhat[c] * mean_ux));
                        let dg = dgain.get(0, c) + g.get(r, c) * xhat[c];
                        dgain.set(0, c, dg);
                        let db = dbias.get(0, c) + g.get(r, c);
                        dbias.set(0, c, db);
                    }
                }
                acc(grads, *x, dx);
                acc(grads, *gain, dgain);
                acc(grads, *bias, dbias);
            }
            Op::GroupOuter { x, y, groups } => {
                let xv = self.value(*x);
                let yv = self.value(*y);
                let h = xv.cols();
                let gsz = h / groups;
                let mut dx = Tensor::zeros(1, h);
                let mut dy = Tensor::zeros(1, h);
                for k in 0..*groups {
                    for a in 0..gsz {
                        for b in 0..gsz {
                            let gv = g.get(0, k * gsz * gsz + a * gsz + b);
                            let ndx = dx.get(0, k * gsz + a) + gv * yv.get(0, k * gsz + b);
                            dx.set(0, k * gsz + a, ndx);
                            let ndy = dy.get(0, k * gsz + b) + gv * xv.get(0, k * gsz + a);
                            dy.set(0, k * gsz + b, ndy);
                        }
                    }
                }
                acc(grads, *x, dx);
                acc(grads, *y, dy);
            }
            Op::DivScalar { x, s } => {
                let sv = self.value(*s).item();
                acc(grads, *x, g.map(|v| v / sv));
                let dot: f64 = g
                    .data()
                    .iter()
                    .zip(self.value(*x).data())
                    .map(|(&a, &b)| a * b)
                    .sum();
                acc(grads, *s, Tensor::scalar(-dot / (sv * sv)));
            }
            Op::MulConst { x, m } => {
                acc(grads, *x, g.zip_map(m, |gv, mv| gv * mv));
            }
            Op::DivColBroadcast { x, s } => {
                let xv = self.value(*x);
                let sv = self.value(*s);
                let mut dx = Tensor::zeros(xv.rows(), xv.cols());
                let mut ds = Tensor::zeros(xv.rows(), 1);
                for r in 0..xv.rows() {
                    let d = sv.get(r, 0);
                    let mut acc_s = 0.0;
                    for c in 0..xv.cols() {
                        dx.set(r, c, g.get(r, c) / d);
                        acc_s -= g.get(r, c) * xv.get(r, c) / (d * d);
                    }
                    ds.set(r, 0, acc_s);
                }
                acc(grads, *x, dx);
                acc(grads, *s, ds);
            }
        }
    }

    /// Fold parameter gradients from a reverse pass into a [`GradBuffer`].
    pub fn accumulate_param_grads(&self, grads: &Grads, buf: &mut GradBuffer) {
        for &(id, v) in &self.param_nodes {
            if let Some(g) = grads.of(v) {
                buf.accumulate(id, g);
            }
        }
    }
}

/// Per-node gradients produced by [`Graph::backward`].
pub struct Grads {
    grads: Vec<Option<Tensor>>,
}

impl Grads {
    pub fn of(&self, v: Var) -> Option<&Tensor> {
        self.grads[v.0].as_ref()
    }
}
