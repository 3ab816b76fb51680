//! Tape-based reverse-mode differentiation over dense row-major `f64`
//! tensors.
//!
//! A [`Graph`] records every operation as a node. Leaves are either
//! constants or trainable parameters; a node requires a gradient iff one of
//! its inputs does. [`Graph::backward`] walks the tape once in reverse.
//!
//! Shapes used by the ops: scalars `[]`, vectors `[n]` and matrices `[m, n]`.

use std::borrow::Cow;
use std::ops::Range;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::LengthMismatch {
                left: expected,
                right: data.len(),
            });
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape,
            data: vec![0.0; n],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Tensor {
            shape: vec![],
            data: vec![value],
        }
    }

    pub fn vector(data: Vec<f64>) -> Self {
        Tensor {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Tensor::new(vec![rows, cols], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Value of a one-element tensor.
    pub fn item(&self) -> f64 {
        assert_eq!(self.data.len(), 1, "item() on tensor of shape {:?}", self.shape);
        self.data[0]
    }

    pub fn rows(&self) -> usize {
        match self.shape.len() {
            2 => self.shape[0],
            _ => 1,
        }
    }

    pub fn cols(&self) -> usize {
        self.shape.last().copied().unwrap_or(1)
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    fn like(&self, data: Vec<f64>) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data,
        }
    }
}

/// Numeric kernels shared by the graph and the gradient-free policy paths.
/// Each output row depends only on the matching input rows and is summed in
/// a fixed order, so results do not depend on batch composition.
pub(crate) mod kernels {
    /// `a [m,k] · bᵀ` where `b` is `[n,k]`.
    pub fn matmul_nt(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let ar = &a[i * k..(i + 1) * k];
            let or = &mut out[i * n..(i + 1) * n];
            for (j, o) in or.iter_mut().enumerate() {
                let br = &b[j * k..(j + 1) * k];
                *o = dot(ar, br);
            }
        }
        out
    }

    pub fn dot(a: &[f64], b: &[f64]) -> f64 {
        let mut acc = 0.0;
        for (x, y) in a.iter().zip(b) {
            acc += x * y;
        }
        acc
    }

    pub fn add_row_bias(a: &mut [f64], bias: &[f64]) {
        for row in a.chunks_exact_mut(bias.len()) {
            for (x, b) in row.iter_mut().zip(bias) {
                *x += b;
            }
        }
    }

    pub fn log_softmax_row(row: &mut [f64]) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for x in row.iter() {
            sum += (x - max).exp();
        }
        let log_z = max + sum.ln();
        for x in row.iter_mut() {
            *x -= log_z;
        }
    }

    /// Mean of `table` rows listed in `ids`; zeros when `ids` is empty.
    pub fn mean_rows(table: &[f64], cols: usize, ids: &[usize], out: &mut [f64]) {
        out.fill(0.0);
        if ids.is_empty() {
            return;
        }
        for &id in ids {
            for (o, t) in out.iter_mut().zip(&table[id * cols..(id + 1) * cols]) {
                *o += t;
            }
        }
        let n = ids.len() as f64;
        for o in out.iter_mut() {
            *o /= n;
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMulNT(Var, Var),
    AddRowBias(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Minimum(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Tanh(Var),
    Exp(Var),
    Clamp(Var, f64, f64),
    GatherRows(Var, Vec<usize>),
    MeanPoolRows(Var, Vec<Vec<usize>>),
    LogSoftmax(Var),
    Pick(Var, Vec<usize>),
    SegmentMean(Var, Vec<Range<usize>>),
    Sum(Var),
    Mean(Var),
}

struct Node<'a> {
    value: Cow<'a, Tensor>,
    op: Op,
    requires_grad: bool,
}

/// Recorded forward computation.
pub struct Graph<'a> {
    nodes: Vec<Node<'a>>,
}

/// Gradients produced by [`Graph::backward`], indexed by [`Var`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

impl Default for Graph<'_> {
    fn default() -> Self {
        Self::new()
    }
}

impl<'a> Graph<'a> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value: Cow::Owned(value),
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    pub fn constant_ref(&mut self, t: &'a Tensor) -> Var {
        self.nodes.push(Node {
            value: Cow::Borrowed(t),
            op: Op::Leaf,
            requires_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    /// A trainable leaf borrowed from the caller.
    pub fn param(&mut self, t: &'a Tensor) -> Var {
        self.nodes.push(Node {
            value: Cow::Borrowed(t),
            op: Op::Leaf,
            requires_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn param_owned(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.rg(v)
    }

    /// `a [m,k] · bᵀ`, `b` of shape `[n,k]`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        assert_eq!(av.shape.len(), 2, "matmul_nt lhs must be a matrix");
        assert_eq!(bv.shape.len(), 2, "matmul_nt rhs must be a matrix");
        let (m, k, n) = (av.shape[0], av.shape[1], bv.shape[0]);
        assert_eq!(bv.shape[1], k, "matmul_nt inner dimension");
        let data = kernels::matmul_nt(&av.data, &bv.data, m, k, n);
        let rg = self.rg(a) || self.rg(b);
        self.push(Tensor { shape: vec![m, n], data }, Op::MatMulNT(a, b), rg)
    }

    /// Adds vector `bias [n]` to every row of `a [m,n]`.
    pub fn add_row_bias(&mut self, a: Var, bias: Var) -> Var {
        let (av, bv) = (self.value(a), self.value(bias));
        assert_eq!(av.cols(), bv.len(), "add_row_bias width");
        let mut data = av.data.clone();
        kernels::add_row_bias(&mut data, &bv.data);
        let out = av.like(data);
        let rg = self.rg(a) || self.rg(bias);
        self.push(out, Op::AddRowBias(a, bias), rg)
    }

    fn zip_with(&mut self, a: Var, b: Var, op: Op, f: impl Fn(f64, f64) -> f64) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        assert_eq!(av.shape, bv.shape, "elementwise shape mismatch");
        let data = av.data.iter().zip(&bv.data).map(|(x, y)| f(*x, *y)).collect();
        let out = av.like(data);
        let rg = self.rg(a) || self.rg(b);
        self.push(out, op, rg)
    }

    fn map(&mut self, a: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let av = self.value(a);
        let out = av.like(av.data.iter().map(|x| f(*x)).collect());
        let rg = self.rg(a);
        self.push(out, op, rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.zip_with(a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.zip_with(a, b, Op::Sub(a, b), |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.zip_with(a, b, Op::Mul(a, b), |x, y| x * y)
    }

    /// Elementwise minimum; on ties the gradient goes to `a`.
    pub fn minimum(&mut self, a: Var, b: Var) -> Var {
        self.zip_with(a, b, Op::Minimum(a, b), |x, y| if x <= y { x } else { y })
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        self.map(a, Op::Scale(a, c), |x| x * c)
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        self.map(a, Op::AddScalar(a), |x| x + c)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.map(a, Op::Tanh(a), f64::tanh)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.map(a, Op::Exp(a), f64::exp)
    }

    /// Clamp to `[lo, hi]`; gradient passes where `lo <= x <= hi`.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        self.map(a, Op::Clamp(a, lo, hi), |x| x.clamp(lo, hi))
    }

    /// Selects rows of `a [m,n]`.
    pub fn gather_rows(&mut self, a: Var, rows: Vec<usize>) -> Var {
        let av = self.value(a);
        let n = av.cols();
        let mut data = Vec::with_capacity(rows.len() * n);
        for &r in &rows {
            data.extend_from_slice(av.row(r));
        }
        let out = Tensor {
            shape: vec![rows.len(), n],
            data,
        };
        let rg = self.rg(a);
        self.push(out, Op::GatherRows(a, rows), rg)
    }

    /// Row `i` of the output is the mean of `table` rows `lists[i]` (zero for
    /// an empty list).
    pub fn mean_pool_rows(&mut self, table: Var, lists: Vec<Vec<usize>>) -> Var {
        let tv = self.value(table);
        let n = tv.cols();
        let mut data = vec![0.0; lists.len() * n];
        for (i, ids) in lists.iter().enumerate() {
            kernels::mean_rows(&tv.data, n, ids, &mut data[i * n..(i + 1) * n]);
        }
        let out = Tensor {
            shape: vec![lists.len(), n],
            data,
        };
        let rg = self.rg(table);
        self.push(out, Op::MeanPoolRows(table, lists), rg)
    }

    pub fn log_softmax(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let n = av.cols();
        let mut data = av.data.clone();
        for row in data.chunks_exact_mut(n) {
            kernels::log_softmax_row(row);
        }
        let out = av.like(data);
        let rg = self.rg(a);
        self.push(out, Op::LogSoftmax(a), rg)
    }

    /// `out[i] = a[i, cols[i]]`.
    pub fn pick(&mut self, a: Var, cols: Vec<usize>) -> Var {
        let av = self.value(a);
        assert_eq!(av.rows(), cols.len(), "pick needs one column per row");
        let n = av.cols();
        let data = cols.iter().enumerate().map(|(i, &c)| av.data[i * n + c]).collect();
        let rg = self.rg(a);
        self.push(Tensor::vector(data), Op::Pick(a, cols), rg)
    }

    /// Mean of each contiguous segment of a vector.
    pub fn segment_mean(&mut self, a: Var, segments: Vec<Range<usize>>) -> Var {
        let av = self.value(a);
        let data = segments
            .iter()
            .map(|r| {
                let mut s = 0.0;
                for x in &av.data[r.clone()] {
                    s += x;
                }
                s / r.len() as f64
            })
            .collect();
        let rg = self.rg(a);
        self.push(Tensor::vector(data), Op::SegmentMean(a, segments), rg)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let mut s = 0.0;
        for x in &self.value(a).data {
            s += x;
        }
        let rg = self.rg(a);
        self.push(Tensor::scalar(s), Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let mut s = 0.0;
        for x in &av.data {
            s += x;
        }
        let m = s / av.len() as f64;
        let rg = self.rg(a);
        self.push(Tensor::scalar(m), Op::Mean(a), rg)
    }

    /// Reverse pass from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if !self.rg(loss) {
            return Err(Error::Detached);
        }
        if self.value(loss).len() != 1 {
            return Err(Error::Invalid(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(self.value(loss).like(vec![1.0]));

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            self.propagate(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], v: Var, f: impl FnOnce(&mut [f64])) {
        if !self.rg(v) {
            return;
        }
        let slot = &mut grads[v.0];
        let t = slot.get_or_insert_with(|| Tensor::zeros(self.value(v).shape.clone()));
        f(&mut t.data);
    }

    fn propagate(&self, i: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let out = &self.nodes[i].value;
        let gd = &g.data;
        match &self.nodes[i].op {
            Op::Leaf => {}
            Op::MatMulNT(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (m, k, n) = (av.shape[0], av.shape[1], bv.shape[0]);
                // dA = dC · B
                self.accumulate(grads, *a, |da| {
                    for r in 0..m {
                        let dar = &mut da[r * k..(r + 1) * k];
                        for j in 0..n {
                            let c = gd[r * n + j];
                            if c == 0.0 {
                                continue;
                            }
                            for (d, x) in dar.iter_mut().zip(bv.row(j)) {
                                *d += c * x;
                            }
                        }
                    }
                });
                // dB = dCᵀ · A
                self.accumulate(grads, *b, |db| {
                    for r in 0..m {
                        let ar = av.row(r);
                        for j in 0..n {
                            let c = gd[r * n + j];
                            if c == 0.0 {
                                continue;
                            }
                            for (d, x) in db[j * k..(j + 1) * k].iter_mut().zip(ar) {
                                *d += c * x;
                            }
                        }
                    }
                });
            }
            Op::AddRowBias(a, bias) => {
                self.accumulate(grads, *a, |da| add_into(da, gd));
                let n = self.value(*bias).len();
                self.accumulate(grads, *bias, |db| {
                    for row in gd.chunks_exact(n) {
                        add_into(db, row);
                    }
                });
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, |da| add_into(da, gd));
                self.accumulate(grads, *b, |db| add_into(db, gd));
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, |da| add_into(da, gd));
                self.accumulate(grads, *b, |db| {
                    for (d, x) in db.iter_mut().zip(gd) {
                        *d -= x;
                    }
                });
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                self.accumulate(grads, *a, |da| {
                    for ((d, x), y) in da.iter_mut().zip(gd).zip(&bv.data) {
                        *d += x * y;
                    }
                });
                self.accumulate(grads, *b, |db| {
                    for ((d, x), y) in db.iter_mut().zip(gd).zip(&av.data) {
                        *d += x * y;
                    }
                });
            }
            Op::Minimum(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let take_a: Vec<bool> =
                    av.data.iter().zip(&bv.data).map(|(x, y)| x <= y).collect();
                self.accumulate(grads, *a, |da| {
                    for ((d, x), &t) in da.iter_mut().zip(gd).zip(&take_a) {
                        if t {
                            *d += x;
                        }
                    }
                });
                self.accumulate(grads, *b, |db| {
                    for ((d, x), &t) in db.iter_mut().zip(gd).zip(&take_a) {
                        if !t {
                            *d += x;
                        }
                    }
                });
            }
            Op::Scale(a, c) => self.accumulate(grads, *a, |da| {
                for (d, x) in da.iter_mut().zip(gd) {
                    *d += c * x;
                }
            }),
            Op::AddScalar(a) => self.accumulate(grads, *a, |da| add_into(da, gd)),
            Op::Tanh(a) => self.accumulate(grads, *a, |da| {
                for ((d, x), y) in da.iter_mut().zip(gd).zip(&out.data) {
                    *d += x * (1.0 - y * y);
                }
            }),
            Op::Exp(a) => self.accumulate(grads, *a, |da| {
                for ((d, x), y) in da.iter_mut().zip(gd).zip(&out.data) {
                    *d += x * y;
                }
            }),
            Op::Clamp(a, lo, hi) => {
                let av = self.value(*a);
                self.accumulate(grads, *a, |da| {
                    for ((d, x), v) in da.iter_mut().zip(gd).zip(&av.data) {
                        if *lo <= *v && *v <= *hi {
                            *d += x;
                        }
                    }
                })
            }
            Op::GatherRows(a, rows) => {
                let n = self.value(*a).cols();
                self.accumulate(grads, *a, |da| {
                    for (i, &r) in rows.iter().enumerate() {
                        add_into(&mut da[r * n..(r + 1) * n], &gd[i * n..(i + 1) * n]);
                    }
                })
            }
            Op::MeanPoolRows(table, lists) => {
                let n = self.value(*table).cols();
                self.accumulate(grads, *table, |dt| {
                    for (i, ids) in lists.iter().enumerate() {
                        let inv = 1.0 / ids.len() as f64;
                        let gr = &gd[i * n..(i + 1) * n];
                        for &id in ids {
                            for (d, x) in dt[id * n..(id + 1) * n].iter_mut().zip(gr) {
                                *d += x * inv;
                            }
                        }
                    }
                })
            }
            Op::LogSoftmax(a) => {
                let n = out.cols();
                self.accumulate(grads, *a, |da| {
                    for ((drow, grow), yrow) in da
                        .chunks_exact_mut(n)
                        .zip(gd.chunks_exact(n))
                        .zip(out.data.chunks_exact(n))
                    {
                        let gsum: f64 = grow.iter().sum();
                        for ((d, x), y) in drow.iter_mut().zip(grow).zip(yrow) {
                            *d += x - y.exp() * gsum;
                        }
                    }
                })
            }
            Op::Pick(a, cols) => {
                let n = self.value(*a).cols();
                self.accumulate(grads, *a, |da| {
                    for (i, &c) in cols.iter().enumerate() {
                        da[i * n + c] += gd[i];
                    }
                })
            }
            Op::SegmentMean(a, segments) => self.accumulate(grads, *a, |da| {
                for (s, r) in segments.iter().enumerate() {
                    let w = gd[s] / r.len() as f64;
                    for d in &mut da[r.clone()] {
                        *d += w;
                    }
                }
            }),
            Op::Sum(a) => {
                let g0 = gd[0];
                self.accumulate(grads, *a, |da| da.iter_mut().for_each(|d| *d += g0))
            }
            Op::Mean(a) => {
                let w = gd[0] / self.value(*a).len() as f64;
                self.accumulate(grads, *a, |da| da.iter_mut().for_each(|d| *d += w))
            }
        }
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}
