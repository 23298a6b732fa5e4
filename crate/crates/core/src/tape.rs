//! Reverse-mode automatic differentiation over dense `f64` matrices.
//!
//! A [`Tape`] records every intermediate of a forward computation; calling
//! [`Tape::backward`] walks the record in reverse and accumulates exact
//! gradients for every [`ParamSet`] entry that was bound on the tape. The op
//! set is deliberately small: matrix products, broadcasting arithmetic,
//! pointwise maps, gathers, segment reductions and the few softmax variants
//! the encoder and the loss functions need.
//!
//! All values are row-major `Array2<f64>`; vectors are `n x 1` columns or
//! `1 x n` rows by convention of the caller.

use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

/// Named collection of learnable matrices. The flat layout keeps optimizer
/// state, finite differencing, serialization and gradient bookkeeping simple.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ParamSet {
    names: Vec<String>,
    values: Vec<Array2<f64>>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, value: Array2<f64>) -> usize {
        self.names.push(name.into());
        self.values.push(value);
        self.values.len() - 1
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn name(&self, idx: usize) -> &str {
        &self.names[idx]
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn value(&self, idx: usize) -> &Array2<f64> {
        &self.values[idx]
    }

    pub fn value_mut(&mut self, idx: usize) -> &mut Array2<f64> {
        &mut self.values[idx]
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Array2<f64>)> {
        self.names.iter().map(String::as_str).zip(self.values.iter())
    }

    pub fn total_scalars(&self) -> usize {
        self.values.iter().map(Array2::len).sum()
    }

    /// Zero gradient buffer aligned with this set.
    pub fn zero_grads(&self) -> Grads {
        Grads(
            self.values
                .iter()
                .map(|v| Array2::zeros(v.raw_dim()))
                .collect(),
        )
    }
}

/// Gradients aligned index-for-index with a [`ParamSet`].
#[derive(Debug, Clone)]
pub struct Grads(pub Vec<Array2<f64>>);

/// Handle to a tape node.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MapKind {
    Elu,
    Tanh,
    Sigmoid,
    LeakyRelu(f64),
    Exp,
    Ln,
}

impl MapKind {
    fn apply(self, x: f64) -> f64 {
        match self {
            MapKind::Elu => {
                if x > 0.0 {
                    x
                } else {
                    x.exp() - 1.0
                }
            }
            MapKind::Tanh => x.tanh(),
            MapKind::Sigmoid => 1.0 / (1.0 + (-x).exp()),
            MapKind::LeakyRelu(slope) => {
                if x > 0.0 {
                    x
                } else {
                    slope * x
                }
            }
            MapKind::Exp => x.exp(),
            MapKind::Ln => x.ln(),
        }
    }

    /// Derivative expressed through input `x` and output `y`.
    fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            MapKind::Elu => {
                if x > 0.0 {
                    1.0
                } else {
                    y + 1.0
                }
            }
            MapKind::Tanh => 1.0 - y * y,
            MapKind::Sigmoid => y * (1.0 - y),
            MapKind::LeakyRelu(slope) => {
                if x > 0.0 {
                    1.0
                } else {
                    slope
                }
            }
            MapKind::Exp => y,
            MapKind::Ln => 1.0 / x,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum BinKind {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Debug)]
#[allow(dead_code)] // constants/parents retained in variants for Debug output
enum Op {
    Constant,
    Param(usize),
    MatMul(NodeId, NodeId),
    Bin(BinKind, NodeId, NodeId),
    Map(MapKind, NodeId),
    Scale(NodeId, f64),
    AddConst(NodeId, f64),
    SumAll(NodeId),
    MeanRows(NodeId),
    RowSum(NodeId),
    Transpose(NodeId),
    ConcatCols(Vec<NodeId>),
    ConcatRows(Vec<NodeId>),
    GatherRows(NodeId, Vec<usize>),
    SliceCols(NodeId, usize),
    SegmentSumRows(NodeId, Vec<usize>),
    SegmentSoftmax(NodeId, Vec<usize>),
    RowLogSoftmax(NodeId),
    Min(NodeId, NodeId),
    Clamp(NodeId, f64, f64),
    Detach(NodeId),
}

struct Node {
    value: Array2<f64>,
    op: Op,
    needs_grad: bool,
}

/// The forward record. One tape may hold many independent forward passes
/// (e.g. a whole minibatch); `backward` accumulates over all of them.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
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

    pub fn value(&self, id: NodeId) -> &Array2<f64> {
        &self.nodes[id.0].value
    }

    /// Scalar value of a 1x1 node.
    pub fn scalar(&self, id: NodeId) -> f64 {
        let v = self.value(id);
        debug_assert_eq!(v.dim(), (1, 1));
        v[(0, 0)]
    }

    fn push(&mut self, value: Array2<f64>, op: Op, needs_grad: bool) -> NodeId {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn needs(&self, id: NodeId) -> bool {
        self.nodes[id.0].needs_grad
    }

    pub fn constant(&mut self, value: Array2<f64>) -> NodeId {
        self.push(value, Op::Constant, false)
    }

    pub fn scalar_constant(&mut self, v: f64) -> NodeId {
        self.constant(Array2::from_elem((1, 1), v))
    }

    /// Bind parameter `idx` of `params` as a leaf node.
    pub fn param(&mut self, params: &ParamSet, idx: usize) -> NodeId {
        self.push(params.value(idx).clone(), Op::Param(idx), true)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let value = self.value(a).dot(self.value(b));
        let needs = self.needs(a) || self.needs(b);
        self.push(value, Op::MatMul(a, b), needs)
    }

    fn bin(&mut self, kind: BinKind, a: NodeId, b: NodeId) -> NodeId {
        let (ar, ac) = self.value(a).dim();
        let (br, bc) = self.value(b).dim();
        assert!(
            (br == ar || br == 1) && (bc == ac || bc == 1),
            "broadcast mismatch {:?} vs {:?}",
            (ar, ac),
            (br, bc)
        );
        let av = self.value(a);
        let bv = self.value(b);
        let mut out = Array2::zeros((ar, ac));
        for i in 0..ar {
            for j in 0..ac {
                let x = av[(i, j)];
                let y = bv[(if br == 1 { 0 } else { i }, if bc == 1 { 0 } else { j })];
                out[(i, j)] = match kind {
                    BinKind::Add => x + y,
                    BinKind::Sub => x - y,
                    BinKind::Mul => x * y,
                    BinKind::Div => x / y,
                };
            }
        }
        let needs = self.needs(a) || self.needs(b);
        self.push(out, Op::Bin(kind, a, b), needs)
    }

    /// `a + b`; `b` may broadcast along rows, columns or both.
    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.bin(BinKind::Add, a, b)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.bin(BinKind::Sub, a, b)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.bin(BinKind::Mul, a, b)
    }

    pub fn div(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.bin(BinKind::Div, a, b)
    }

    pub fn map(&mut self, kind: MapKind, a: NodeId) -> NodeId {
        let value = self.value(a).mapv(|x| kind.apply(x));
        let needs = self.needs(a);
        self.push(value, Op::Map(kind, a), needs)
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> NodeId {
        let value = self.value(a).mapv(|x| c * x);
        let needs = self.needs(a);
        self.push(value, Op::Scale(a, c), needs)
    }

    pub fn add_const(&mut self, a: NodeId, c: f64) -> NodeId {
        let value = self.value(a).mapv(|x| x + c);
        let needs = self.needs(a);
        self.push(value, Op::AddConst(a, c), needs)
    }

    pub fn neg(&mut self, a: NodeId) -> NodeId {
        self.scale(a, -1.0)
    }

    /// Sum of all entries, as 1x1.
    pub fn sum_all(&mut self, a: NodeId) -> NodeId {
        let value = Array2::from_elem((1, 1), self.value(a).sum());
        let needs = self.needs(a);
        self.push(value, Op::SumAll(a), needs)
    }

    /// Mean over all entries, as 1x1.
    pub fn mean_all(&mut self, a: NodeId) -> NodeId {
        let len = self.value(a).len() as f64;
        let s = self.sum_all(a);
        self.scale(s, 1.0 / len)
    }

    /// Column-wise mean: `n x d` -> `1 x d`.
    pub fn mean_rows(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a);
        let n = v.nrows() as f64;
        let value = v.sum_axis(Axis(0)).insert_axis(Axis(0)).mapv(|x| x / n);
        let needs = self.needs(a);
        self.push(value, Op::MeanRows(a), needs)
    }

    /// Row-wise sum: `n x d` -> `n x 1`.
    pub fn row_sum(&mut self, a: NodeId) -> NodeId {
        let value = self.value(a).sum_axis(Axis(1)).insert_axis(Axis(1));
        let needs = self.needs(a);
        self.push(value, Op::RowSum(a), needs)
    }

    pub fn transpose(&mut self, a: NodeId) -> NodeId {
        let value = self.value(a).t().to_owned();
        let needs = self.needs(a);
        self.push(value, Op::Transpose(a), needs)
    }

    pub fn concat_cols(&mut self, parts: &[NodeId]) -> NodeId {
        let rows = self.value(parts[0]).nrows();
        let cols: usize = parts.iter().map(|&p| self.value(p).ncols()).sum();
        let mut out = Array2::zeros((rows, cols));
        let mut at = 0;
        for &p in parts {
            let v = self.value(p);
            assert_eq!(v.nrows(), rows, "concat_cols row mismatch");
            out.slice_mut(ndarray::s![.., at..at + v.ncols()]).assign(v);
            at += v.ncols();
        }
        let needs = parts.iter().any(|&p| self.needs(p));
        self.push(out, Op::ConcatCols(parts.to_vec()), needs)
    }

    pub fn concat_rows(&mut self, parts: &[NodeId]) -> NodeId {
        let cols = self.value(parts[0]).ncols();
        let rows: usize = parts.iter().map(|&p| self.value(p).nrows()).sum();
        let mut out = Array2::zeros((rows, cols));
        let mut at = 0;
        for &p in parts {
            let v = self.value(p);
            assert_eq!(v.ncols(), cols, "concat_rows column mismatch");
            out.slice_mut(ndarray::s![at..at + v.nrows(), ..]).assign(v);
            at += v.nrows();
        }
        let needs = parts.iter().any(|&p| self.needs(p));
        self.push(out, Op::ConcatRows(parts.to_vec()), needs)
    }

    /// Select rows by index; indices may repeat (backward scatter-adds).
    pub fn gather_rows(&mut self, a: NodeId, indices: &[usize]) -> NodeId {
        let v = self.value(a);
        let mut out = Array2::zeros((indices.len(), v.ncols()));
        for (row, &i) in indices.iter().enumerate() {
            out.row_mut(row).assign(&v.row(i));
        }
        let needs = self.needs(a);
        self.push(out, Op::GatherRows(a, indices.to_vec()), needs)
    }

    /// Columns `start..start+len` as a new matrix.
    pub fn slice_cols(&mut self, a: NodeId, start: usize, len: usize) -> NodeId {
        let value = self
            .value(a)
            .slice(ndarray::s![.., start..start + len])
            .to_owned();
        let needs = self.needs(a);
        self.push(value, Op::SliceCols(a, start), needs)
    }

    /// Sum rows that share a segment id: `n x d` -> `n_segments x d`.
    /// Segments with no rows yield zeros.
    pub fn segment_sum_rows(&mut self, a: NodeId, segments: &[usize], n_segments: usize) -> NodeId {
        let v = self.value(a);
        assert_eq!(segments.len(), v.nrows());
        let mut out = Array2::zeros((n_segments, v.ncols()));
        for (row, &s) in segments.iter().enumerate() {
            let mut target = out.row_mut(s);
            target += &v.row(row);
        }
        let needs = self.needs(a);
        self.push(out, Op::SegmentSumRows(a, segments.to_vec()), needs)
    }

    /// Softmax over each segment of a column vector `n x 1`. Rows of one
    /// segment need not be contiguous. Numerically stabilized per segment.
    pub fn segment_softmax(&mut self, a: NodeId, segments: &[usize]) -> NodeId {
        let v = self.value(a);
        assert_eq!(v.ncols(), 1);
        assert_eq!(segments.len(), v.nrows());
        let n_segments = segments.iter().copied().max().map_or(0, |m| m + 1);
        let mut seg_max = vec![f64::NEG_INFINITY; n_segments];
        for (row, &s) in segments.iter().enumerate() {
            seg_max[s] = seg_max[s].max(v[(row, 0)]);
        }
        let mut seg_sum = vec![0.0; n_segments];
        let mut out = Array2::zeros(v.raw_dim());
        for (row, &s) in segments.iter().enumerate() {
            let e = (v[(row, 0)] - seg_max[s]).exp();
            out[(row, 0)] = e;
            seg_sum[s] += e;
        }
        for (row, &s) in segments.iter().enumerate() {
            out[(row, 0)] /= seg_sum[s];
        }
        let needs = self.needs(a);
        self.push(out, Op::SegmentSoftmax(a, segments.to_vec()), needs)
    }

    /// Log-softmax over each row of an `n x d` matrix.
    pub fn row_log_softmax(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a);
        let mut out = Array2::zeros(v.raw_dim());
        for (i, row) in v.rows().into_iter().enumerate() {
            let max = row.fold(f64::NEG_INFINITY, |m, &x| m.max(x));
            let log_sum = row.iter().map(|&x| (x - max).exp()).sum::<f64>().ln() + max;
            for (j, &x) in row.iter().enumerate() {
                out[(i, j)] = x - log_sum;
            }
        }
        let needs = self.needs(a);
        self.push(out, Op::RowLogSoftmax(a), needs)
    }

    /// Softmax over each row; derived from `row_log_softmax`.
    pub fn row_softmax(&mut self, a: NodeId) -> NodeId {
        let ls = self.row_log_softmax(a);
        self.map(MapKind::Exp, ls)
    }

    /// Elementwise minimum; ties route the gradient to `a`.
    pub fn min(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let av = self.value(a);
        let bv = self.value(b);
        assert_eq!(av.dim(), bv.dim());
        let mut out = av.clone();
        ndarray::Zip::from(&mut out).and(bv).for_each(|x, &y| {
            if y < *x {
                *x = y;
            }
        });
        let needs = self.needs(a) || self.needs(b);
        self.push(out, Op::Min(a, b), needs)
    }

    /// Clamp into `[lo, hi]`; gradient is zero outside the open interval.
    pub fn clamp(&mut self, a: NodeId, lo: f64, hi: f64) -> NodeId {
        let value = self.value(a).mapv(|x| x.clamp(lo, hi));
        let needs = self.needs(a);
        self.push(value, Op::Clamp(a, lo, hi), needs)
    }

    /// Forward identity that blocks the gradient.
    pub fn detach(&mut self, a: NodeId) -> NodeId {
        let value = self.value(a).clone();
        self.push(value, Op::Detach(a), false)
    }

    /// Reverse pass from scalar node `loss`; returns gradients for `params`.
    pub fn backward(&mut self, loss: NodeId, params: &ParamSet) -> Grads {
        assert_eq!(self.value(loss).dim(), (1, 1), "loss must be scalar");
        let mut grads: Vec<Option<Array2<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Array2::from_elem((1, 1), 1.0));
        let mut out = params.zero_grads();

        for i in (0..=loss.0).rev() {
            if !self.nodes[i].needs_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            // Split borrows: read node i, write gradients of its parents.
            let (before, rest) = self.nodes.split_at(i);
            let node = &rest[0];
            let (grads_before, _) = grads.split_at_mut(i);
            let mut add_grad = |id: NodeId, delta: Array2<f64>| {
                if !before[id.0].needs_grad {
                    return;
                }
                match &mut grads_before[id.0] {
                    Some(acc) => *acc += &delta,
                    slot => *slot = Some(delta),
                }
            };
            match &node.op {
                Op::Constant => {}
                Op::Param(idx) => {
                    out.0[*idx] += &g;
                }
                Op::MatMul(a, b) => {
                    let av = &before[a.0].value;
                    let bv = &before[b.0].value;
                    add_grad(*a, g.dot(&bv.t()));
                    add_grad(*b, av.t().dot(&g));
                }
                Op::Bin(kind, a, b) => {
                    let av = &before[a.0].value;
                    let bv = &before[b.0].value;
                    let (br, bc) = bv.dim();
                    let reduce = |full: Array2<f64>| -> Array2<f64> {
                        let mut r = full;
                        if br == 1 && r.nrows() > 1 {
                            r = r.sum_axis(Axis(0)).insert_axis(Axis(0));
                        }
                        if bc == 1 && r.ncols() > 1 {
                            r = r.sum_axis(Axis(1)).insert_axis(Axis(1));
                        }
                        r
                    };
                    let bb = |i: usize, j: usize| {
                        bv[(if br == 1 { 0 } else { i }, if bc == 1 { 0 } else { j })]
                    };
                    match kind {
                        BinKind::Add => {
                            add_grad(*a, g.clone());
                            add_grad(*b, reduce(g));
                        }
                        BinKind::Sub => {
                            add_grad(*a, g.clone());
                            add_grad(*b, reduce(g.mapv(|x| -x)));
                        }
                        BinKind::Mul => {
                            let ga =
                                Array2::from_shape_fn(g.raw_dim(), |(i, j)| g[(i, j)] * bb(i, j));
                            add_grad(*a, ga);
                            let gb = Array2::from_shape_fn(g.raw_dim(), |(i, j)| {
                                g[(i, j)] * av[(i, j)]
                            });
                            add_grad(*b, reduce(gb));
                        }
                        BinKind::Div => {
                            let ga =
                                Array2::from_shape_fn(g.raw_dim(), |(i, j)| g[(i, j)] / bb(i, j));
                            add_grad(*a, ga);
                            let gb = Array2::from_shape_fn(g.raw_dim(), |(i, j)| {
                                let b_ij = bb(i, j);
                                -g[(i, j)] * av[(i, j)] / (b_ij * b_ij)
                            });
                            add_grad(*b, reduce(gb));
                        }
                    }
                }
                Op::Map(kind, a) => {
                    let av = &before[a.0].value;
                    let ga = Array2::from_shape_fn(g.raw_dim(), |(i, j)| {
                        g[(i, j)] * kind.derivative(av[(i, j)], node.value[(i, j)])
                    });
                    add_grad(*a, ga);
                }
                Op::Scale(a, c) => {
                    let c = *c;
                    add_grad(*a, g.mapv(|x| c * x));
                }
                Op::AddConst(a, _) => add_grad(*a, g),
                Op::SumAll(a) => {
                    let av = &before[a.0].value;
                    add_grad(*a, Array2::from_elem(av.raw_dim(), g[(0, 0)]));
                }
                Op::MeanRows(a) => {
                    let av = &before[a.0].value;
                    let n = av.nrows() as f64;
                    let ga = Array2::from_shape_fn(av.raw_dim(), |(_, j)| g[(0, j)] / n);
                    add_grad(*a, ga);
                }
                Op::RowSum(a) => {
                    let av = &before[a.0].value;
                    let ga = Array2::from_shape_fn(av.raw_dim(), |(i, _)| g[(i, 0)]);
                    add_grad(*a, ga);
                }
                Op::Transpose(a) => add_grad(*a, g.t().to_owned()),
                Op::ConcatCols(parts) => {
                    let mut at = 0;
                    for &p in parts {
                        let w = before[p.0].value.ncols();
                        add_grad(p, g.slice(ndarray::s![.., at..at + w]).to_owned());
                        at += w;
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut at = 0;
                    for &p in parts {
                        let h = before[p.0].value.nrows();
                        add_grad(p, g.slice(ndarray::s![at..at + h, ..]).to_owned());
                        at += h;
                    }
                }
                Op::GatherRows(a, indices) => {
                    let av = &before[a.0].value;
                    let mut ga = Array2::zeros(av.raw_dim());
                    for (row, &src) in indices.iter().enumerate() {
                        let mut target = ga.row_mut(src);
                        target += &g.row(row);
                    }
                    add_grad(*a, ga);
                }
                Op::SliceCols(a, start) => {
                    let av = &before[a.0].value;
                    let mut ga = Array2::zeros(av.raw_dim());
                    ga.slice_mut(ndarray::s![.., *start..*start + g.ncols()])
                        .assign(&g);
                    add_grad(*a, ga);
                }
                Op::SegmentSumRows(a, segments) => {
                    let av = &before[a.0].value;
                    let mut ga = Array2::zeros(av.raw_dim());
                    for (row, &s) in segments.iter().enumerate() {
                        let mut target = ga.row_mut(row);
                        target += &g.row(s);
                    }
                    add_grad(*a, ga);
                }
                Op::SegmentSoftmax(a, segments) => {
                    // d y_i / d x_j = y_i (delta_ij - y_j) within a segment.
                    let y = &node.value;
                    let n_segments = segments.iter().copied().max().map_or(0, |m| m + 1);
                    let mut dot = vec![0.0; n_segments];
                    for (row, &s) in segments.iter().enumerate() {
                        dot[s] += g[(row, 0)] * y[(row, 0)];
                    }
                    let mut ga = Array2::zeros(y.raw_dim());
                    for (row, &s) in segments.iter().enumerate() {
                        ga[(row, 0)] = y[(row, 0)] * (g[(row, 0)] - dot[s]);
                    }
                    add_grad(*a, ga);
                }
                Op::RowLogSoftmax(a) => {
                    // d ls_ij / d x_ik = delta_jk - softmax_ik.
                    let y = &node.value;
                    let mut ga = g.clone();
                    for i in 0..y.nrows() {
                        let gsum: f64 = g.row(i).sum();
                        for j in 0..y.ncols() {
                            ga[(i, j)] -= gsum * y[(i, j)].exp();
                        }
                    }
                    add_grad(*a, ga);
                }
                Op::Min(a, b) => {
                    let av = &before[a.0].value;
                    let bv = &before[b.0].value;
                    let mut ga = Array2::zeros(g.raw_dim());
                    let mut gb = Array2::zeros(g.raw_dim());
                    for ((i, j), &gv) in g.indexed_iter() {
                        if av[(i, j)] <= bv[(i, j)] {
                            ga[(i, j)] = gv;
                        } else {
                            gb[(i, j)] = gv;
                        }
                    }
                    add_grad(*a, ga);
                    add_grad(*b, gb);
                }
                Op::Clamp(a, lo, hi) => {
                    let av = &before[a.0].value;
                    let ga = Array2::from_shape_fn(g.raw_dim(), |(i, j)| {
                        let x = av[(i, j)];
                        if x > *lo && x < *hi {
                            g[(i, j)]
                        } else {
                            0.0
                        }
                    });
                    add_grad(*a, ga);
                }
                Op::Detach(_) => {}
            }
        }
        out
    }
}

/// Central finite differences of `f` at `params`, for gradient testing.
pub fn finite_differences<F>(params: &mut ParamSet, h: f64, mut f: F) -> Grads
where
    F: FnMut(&ParamSet) -> f64,
{
    let mut grads = params.zero_grads();
    for idx in 0..params.len() {
        let dim = params.value(idx).raw_dim();
        for i in 0..dim[0] {
            for j in 0..dim[1] {
                let orig = params.value(idx)[(i, j)];
                params.value_mut(idx)[(i, j)] = orig + h;
                let up = f(params);
                params.value_mut(idx)[(i, j)] = orig - h;
                let down = f(params);
                params.value_mut(idx)[(i, j)] = orig;
                grads.0[idx][(i, j)] = (up - down) / (2.0 * h);
            }
        }
    }
    grads
}

/// Fraction of parameters whose analytic and numeric gradients agree within
/// `tol` relative error (near-zero pairs count as agreeing).
pub fn gradient_agreement(analytic: &Grads, numeric: &Grads, tol: f64) -> f64 {
    let mut ok = 0usize;
    let mut total = 0usize;
    for (a, n) in analytic.0.iter().zip(&numeric.0) {
        for (&x, &y) in a.iter().zip(n.iter()) {
            total += 1;
            let scale = x.abs().max(y.abs());
            if scale < 1e-7 || (x - y).abs() / scale < tol {
                ok += 1;
            }
        }
    }
    if total == 0 {
        1.0
    } else {
        ok as f64 / total as f64
    }
}
