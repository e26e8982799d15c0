//! Dense 64-bit tensors with a dynamic reverse-mode tape.
//!
//! Every forward op appends a node to a [`Tape`]; [`Tape::backward`] walks the
//! nodes in reverse insertion order. Tensors are at most 2-D in practice, but
//! shapes are kept general so that scalars, vectors and matrices share one type.

use std::sync::Arc;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("{op}: shape mismatch between {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("{op}: {msg}")]
    Invalid { op: &'static str, msg: String },
    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
}

pub type Result<T> = std::result::Result<T, TensorError>;

fn mismatch(op: &'static str, lhs: &[usize], rhs: &[usize]) -> TensorError {
    TensorError::ShapeMismatch {
        op,
        lhs: lhs.to_vec(),
        rhs: rhs.to_vec(),
    }
}

/// Row-major dense array of `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(TensorError::Invalid {
                op: "tensor",
                msg: format!("shape {shape:?} needs {n} values, got {}", data.len()),
            });
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; n],
        }
    }

    pub fn scalar(x: f64) -> Self {
        Self {
            shape: vec![],
            data: vec![x],
        }
    }

    pub fn vector(data: Vec<f64>) -> Self {
        Self {
            shape: vec![data.len()],
            data,
        }
    }

    /// Builds a matrix from equally long rows. An empty row list yields shape `[0, cols]`.
    pub fn from_rows(rows: &[Vec<f64>], cols: usize) -> Result<Self> {
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != cols {
                return Err(TensorError::Invalid {
                    op: "from_rows",
                    msg: format!("row {i} has {} values, expected {cols}", r.len()),
                });
            }
            data.extend_from_slice(r);
        }
        Ok(Self {
            shape: vec![rows.len(), cols],
            data,
        })
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Self::new(vec![rows, cols], data)
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

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Leading extent of a matrix (1 for vectors and scalars).
    pub fn rows(&self) -> usize {
        match self.shape.len() {
            0 | 1 => 1,
            _ => self.shape[0],
        }
    }

    /// Trailing extent (1 for scalars).
    pub fn cols(&self) -> usize {
        self.shape.last().copied().unwrap_or(1)
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols() + j]
    }

    pub fn item(&self) -> f64 {
        self.data[0]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    fn is_matrix(&self) -> bool {
        self.shape.len() == 2
    }
}

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulCol(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols(Var, usize),
    SliceRows(Var, usize),
    Gather(Var, Arc<[usize]>),
    SegmentSum(Var, Arc<[usize]>),
    Sum(Var),
    Mean(Var),
    Sigmoid(Var),
    Tanh(Var),
    Silu(Var),
    Exp(Var),
    Log(Var),
    Square(Var),
    Softmax(Var),
    LogSoftmax(Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
    grad: Option<Vec<f64>>,
}

/// Per-forward recording of operations.
#[derive(Debug, Default)]
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

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Accumulated gradient of a node, present after a backward pass reached it.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].grad.as_deref()
    }

    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    fn unary(&mut self, x: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let xv = &self.nodes[x.0].value;
        let value = Tensor {
            shape: xv.shape.clone(),
            data: xv.data.iter().map(|&a| f(a)).collect(),
        };
        let rg = self.rg(&[x]);
        self.push(value, op, rg)
    }

    fn binary_same(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        op: Op,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Var> {
        let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if av.shape != bv.shape {
            return Err(mismatch(name, &av.shape, &bv.shape));
        }
        let value = Tensor {
            shape: av.shape.clone(),
            data: av.data.iter().zip(&bv.data).map(|(&x, &y)| f(x, y)).collect(),
        };
        let rg = self.rg(&[a, b]);
        Ok(self.push(value, op, rg))
    }

    /// `[n,k] x [k,m] -> [n,m]`
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if !av.is_matrix() || !bv.is_matrix() || av.shape[1] != bv.shape[0] {
            return Err(mismatch("matmul", &av.shape, &bv.shape));
        }
        let (n, k, m) = (av.shape[0], av.shape[1], bv.shape[1]);
        let mut out = vec![0.0; n * m];
        for i in 0..n {
            let orow = &mut out[i * m..(i + 1) * m];
            for p in 0..k {
                let s = av.data[i * k + p];
                if s == 0.0 {
                    continue;
                }
                let brow = &bv.data[p * m..(p + 1) * m];
                for (o, &bb) in orow.iter_mut().zip(brow) {
                    *o += s * bb;
                }
            }
        }
        let rg = self.rg(&[a, b]);
        Ok(self.push(
            Tensor {
                shape: vec![n, m],
                data: out,
            },
            Op::MatMul(a, b),
            rg,
        ))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_same("add", a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_same("sub", a, b, Op::Sub(a, b), |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_same("mul", a, b, Op::Mul(a, b), |x, y| x * y)
    }

    /// Adds a `[m]` vector to every row of a `[n,m]` matrix.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (av, bv) = (&self.nodes[a.0].value, &self.nodes[bias.0].value);
        if !av.is_matrix() || bv.shape.len() != 1 || bv.shape[0] != av.shape[1] {
            return Err(mismatch("add_row", &av.shape, &bv.shape));
        }
        let m = av.shape[1];
        let data = av
            .data
            .iter()
            .enumerate()
            .map(|(idx, &x)| x + bv.data[idx % m])
            .collect();
        let value = Tensor {
            shape: av.shape.clone(),
            data,
        };
        let rg = self.rg(&[a, bias]);
        Ok(self.push(value, Op::AddRow(a, bias), rg))
    }

    /// Scales every row `i` of a `[n,m]` matrix by `col[i]`, where `col` is `[n,1]`.
    pub fn mul_col(&mut self, a: Var, col: Var) -> Result<Var> {
        let (av, cv) = (&self.nodes[a.0].value, &self.nodes[col.0].value);
        if !av.is_matrix() || cv.shape != [av.shape[0], 1] {
            return Err(mismatch("mul_col", &av.shape, &cv.shape));
        }
        let m = av.shape[1];
        let data = av
            .data
            .iter()
            .enumerate()
            .map(|(idx, &x)| x * cv.data[idx / m.max(1)])
            .collect();
        let value = Tensor {
            shape: av.shape.clone(),
            data,
        };
        let rg = self.rg(&[a, col]);
        Ok(self.push(value, Op::MulCol(a, col), rg))
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Var {
        self.unary(x, Op::Scale(x, s), |a| a * s)
    }

    pub fn add_scalar(&mut self, x: Var, s: f64) -> Var {
        self.unary(x, Op::AddScalar(x), |a| a + s)
    }

    /// Concatenates matrices with equal row counts along the last axis.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts.first().ok_or(TensorError::Invalid {
            op: "concat_cols",
            msg: "no inputs".into(),
        })?;
        let n = self.nodes[first.0].value.shape.first().copied().unwrap_or(0);
        let mut total = 0;
        for p in parts {
            let s = &self.nodes[p.0].value.shape;
            if s.len() != 2 || s[0] != n {
                return Err(mismatch(
                    "concat_cols",
                    &self.nodes[first.0].value.shape,
                    s,
                ));
            }
            total += s[1];
        }
        let mut data = Vec::with_capacity(n * total);
        for i in 0..n {
            for p in parts {
                data.extend_from_slice(self.nodes[p.0].value.row(i));
            }
        }
        let rg = self.rg(parts);
        Ok(self.push(
            Tensor {
                shape: vec![n, total],
                data,
            },
            Op::ConcatCols(parts.to_vec()),
            rg,
        ))
    }

    /// Stacks matrices with equal column counts along the first axis.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts.first().ok_or(TensorError::Invalid {
            op: "concat_rows",
            msg: "no inputs".into(),
        })?;
        let m = self.nodes[first.0].value.cols();
        let mut rows = 0;
        let mut data = Vec::new();
        for p in parts {
            let v = &self.nodes[p.0].value;
            if v.shape.len() != 2 || v.shape[1] != m {
                return Err(mismatch(
                    "concat_rows",
                    &self.nodes[first.0].value.shape,
                    &v.shape,
                ));
            }
            rows += v.shape[0];
            data.extend_from_slice(&v.data);
        }
        let rg = self.rg(parts);
        Ok(self.push(
            Tensor {
                shape: vec![rows, m],
                data,
            },
            Op::ConcatRows(parts.to_vec()),
            rg,
        ))
    }

    /// Columns `start..end` of a matrix.
    pub fn slice_cols(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let v = &self.nodes[x.0].value;
        if !v.is_matrix() || start > end || end > v.shape[1] {
            return Err(TensorError::Invalid {
                op: "slice_cols",
                msg: format!("range {start}..{end} out of bounds for shape {:?}", v.shape),
            });
        }
        let (n, m, w) = (v.shape[0], v.shape[1], end - start);
        let mut data = Vec::with_capacity(n * w);
        for i in 0..n {
            data.extend_from_slice(&v.data[i * m + start..i * m + end]);
        }
        let rg = self.rg(&[x]);
        Ok(self.push(
            Tensor {
                shape: vec![n, w],
                data,
            },
            Op::SliceCols(x, start),
            rg,
        ))
    }

    /// Rows `start..end` of a matrix.
    pub fn slice_rows(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let v = &self.nodes[x.0].value;
        if !v.is_matrix() || start > end || end > v.shape[0] {
            return Err(TensorError::Invalid {
                op: "slice_rows",
                msg: format!("range {start}..{end} out of bounds for shape {:?}", v.shape),
            });
        }
        let m = v.shape[1];
        let data = v.data[start * m..end * m].to_vec();
        let rg = self.rg(&[x]);
        Ok(self.push(
            Tensor {
                shape: vec![end - start, m],
                data,
            },
            Op::SliceRows(x, start),
            rg,
        ))
    }

    /// Selects rows by index; the backward pass is a segment-sum onto the source rows.
    pub fn gather_rows(&mut self, x: Var, index: Arc<[usize]>) -> Result<Var> {
        let v = &self.nodes[x.0].value;
        if !v.is_matrix() {
            return Err(mismatch("gather_rows", &v.shape, &[index.len()]));
        }
        let (n, m) = (v.shape[0], v.shape[1]);
        let mut data = Vec::with_capacity(index.len() * m);
        for &r in index.iter() {
            if r >= n {
                return Err(TensorError::Invalid {
                    op: "gather_rows",
                    msg: format!("row index {r} out of range for {n} rows"),
                });
            }
            data.extend_from_slice(&v.data[r * m..(r + 1) * m]);
        }
        let rg = self.rg(&[x]);
        Ok(self.push(
            Tensor {
                shape: vec![index.len(), m],
                data,
            },
            Op::Gather(x, index),
            rg,
        ))
    }

    /// Scatter-add of rows into `segments` output rows: `out[seg[i]] += x[i]`.
    pub fn segment_sum(&mut self, x: Var, seg: Arc<[usize]>, segments: usize) -> Result<Var> {
        let v = &self.nodes[x.0].value;
        if !v.is_matrix() || v.shape[0] != seg.len() {
            return Err(mismatch("segment_sum", &v.shape, &[seg.len()]));
        }
        let m = v.shape[1];
        let data = segment_sum_kernel(&v.data, m, &seg, segments).map_err(|msg| {
            TensorError::Invalid {
                op: "segment_sum",
                msg,
            }
        })?;
        let rg = self.rg(&[x]);
        Ok(self.push(
            Tensor {
                shape: vec![segments, m],
                data,
            },
            Op::SegmentSum(x, seg),
            rg,
        ))
    }

    /// Sum of all elements, as a scalar.
    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.nodes[x.0].value.data.iter().sum();
        let rg = self.rg(&[x]);
        self.push(Tensor::scalar(s), Op::Sum(x), rg)
    }

    /// Mean of all elements, as a scalar. Empty tensors have mean 0.
    pub fn mean(&mut self, x: Var) -> Var {
        let v = &self.nodes[x.0].value;
        let n = v.data.len();
        let s = if n == 0 {
            0.0
        } else {
            v.data.iter().sum::<f64>() / n as f64
        };
        let rg = self.rg(&[x]);
        self.push(Tensor::scalar(s), Op::Mean(x), rg)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, Op::Sigmoid(x), sigmoid)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(x, Op::Tanh(x), f64::tanh)
    }

    /// `x * sigmoid(x)`
    pub fn silu(&mut self, x: Var) -> Var {
        self.unary(x, Op::Silu(x), |a| a * sigmoid(a))
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.unary(x, Op::Exp(x), f64::exp)
    }

    pub fn log(&mut self, x: Var) -> Var {
        self.unary(x, Op::Log(x), f64::ln)
    }

    pub fn square(&mut self, x: Var) -> Var {
        self.unary(x, Op::Square(x), |a| a * a)
    }

    /// Row-wise softmax over the last axis.
    pub fn softmax(&mut self, x: Var) -> Var {
        let v = &self.nodes[x.0].value;
        let m = v.cols();
        let mut data = v.data.clone();
        for row in data.chunks_mut(m.max(1)) {
            softmax_inplace(row);
        }
        let value = Tensor {
            shape: v.shape.clone(),
            data,
        };
        let rg = self.rg(&[x]);
        self.push(value, Op::Softmax(x), rg)
    }

    /// Row-wise log-softmax over the last axis, stable for large logits.
    pub fn log_softmax(&mut self, x: Var) -> Var {
        let v = &self.nodes[x.0].value;
        let m = v.cols();
        let mut data = v.data.clone();
        for row in data.chunks_mut(m.max(1)) {
            let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = mx + row.iter().map(|&a| (a - mx).exp()).sum::<f64>().ln();
            for a in row.iter_mut() {
                *a -= lse;
            }
        }
        let value = Tensor {
            shape: v.shape.clone(),
            data,
        };
        let rg = self.rg(&[x]);
        self.push(value, Op::LogSoftmax(x), rg)
    }

    /// Reverse pass from a scalar loss. Leaf gradients accumulate across calls
    /// until [`Tape::zero_grad`].
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let shape = &self.nodes[loss.0].value.shape;
        if self.nodes[loss.0].value.data.len() != 1 || shape.iter().any(|&d| d != 1) {
            return Err(TensorError::NonScalarLoss(shape.clone()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);
        for id in (0..=loss.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            if !self.nodes[id].requires_grad {
                continue;
            }
            if let Op::Leaf = self.nodes[id].op {
                let node = &mut self.nodes[id];
                match &mut node.grad {
                    Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                    None => node.grad = Some(g),
                }
                continue;
            }
            self.propagate(id, &g, &mut grads);
        }
        Ok(())
    }

    fn propagate(&self, id: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[id];
        let out = &node.value;
        let val = |v: Var| &self.nodes[v.0].value;
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [f64])| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            let n = self.nodes[v.0].value.data.len();
            let slot = grads[v.0].get_or_insert_with(|| vec![0.0; n]);
            f(slot);
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                let (n, k, m) = (av.shape[0], av.shape[1], bv.shape[1]);
                acc(*a, &mut |ga| {
                    for i in 0..n {
                        let grow = &g[i * m..(i + 1) * m];
                        for p in 0..k {
                            let brow = &bv.data[p * m..(p + 1) * m];
                            ga[i * k + p] += dot(grow, brow);
                        }
                    }
                });
                acc(*b, &mut |gb| {
                    for i in 0..n {
                        let grow = &g[i * m..(i + 1) * m];
                        for p in 0..k {
                            let s = av.data[i * k + p];
                            if s == 0.0 {
                                continue;
                            }
                            for (o, &gg) in gb[p * m..(p + 1) * m].iter_mut().zip(grow) {
                                *o += s * gg;
                            }
                        }
                    }
                });
            }
            Op::Add(a, b) => {
                acc(*a, &mut |ga| axpy(ga, g, 1.0));
                acc(*b, &mut |gb| axpy(gb, g, 1.0));
            }
            Op::Sub(a, b) => {
                acc(*a, &mut |ga| axpy(ga, g, 1.0));
                acc(*b, &mut |gb| axpy(gb, g, -1.0));
            }
            Op::Mul(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                acc(*a, &mut |ga| {
                    for ((o, &gg), &y) in ga.iter_mut().zip(g).zip(&bv.data) {
                        *o += gg * y;
                    }
                });
                acc(*b, &mut |gb| {
                    for ((o, &gg), &x) in gb.iter_mut().zip(g).zip(&av.data) {
                        *o += gg * x;
                    }
                });
            }
            Op::AddRow(a, bias) => {
                let m = out.cols();
                acc(*a, &mut |ga| axpy(ga, g, 1.0));
                acc(*bias, &mut |gb| {
                    for row in g.chunks(m) {
                        axpy(gb, row, 1.0);
                    }
                });
            }
            Op::MulCol(a, col) => {
                let m = out.cols().max(1);
                let (av, cv) = (val(*a), val(*col));
                acc(*a, &mut |ga| {
                    for (idx, (o, &gg)) in ga.iter_mut().zip(g).enumerate() {
                        *o += gg * cv.data[idx / m];
                    }
                });
                acc(*col, &mut |gc| {
                    for (i, (grow, arow)) in g.chunks(m).zip(av.data.chunks(m)).enumerate() {
                        gc[i] += dot(grow, arow);
                    }
                });
            }
            Op::Scale(x, s) => acc(*x, &mut |gx| axpy(gx, g, *s)),
            Op::AddScalar(x) => acc(*x, &mut |gx| axpy(gx, g, 1.0)),
            Op::ConcatCols(parts) => {
                let total = out.cols();
                let mut offset = 0;
                for p in parts {
                    let w = val(*p).cols();
                    acc(*p, &mut |gp| {
                        for (i, row) in gp.chunks_mut(w.max(1)).enumerate() {
                            let src = &g[i * total + offset..i * total + offset + w];
                            axpy(row, src, 1.0);
                        }
                    });
                    offset += w;
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for p in parts {
                    let len = val(*p).data.len();
                    acc(*p, &mut |gp| axpy(gp, &g[offset..offset + len], 1.0));
                    offset += len;
                }
            }
            Op::SliceCols(x, start) => {
                let m = val(*x).cols();
                let w = out.cols();
                acc(*x, &mut |gx| {
                    if w == 0 {
                        return;
                    }
                    for (i, src) in g.chunks(w).enumerate() {
                        axpy(&mut gx[i * m + start..i * m + start + w], src, 1.0);
                    }
                });
            }
            Op::SliceRows(x, start) => {
                let m = out.cols();
                acc(*x, &mut |gx| {
                    axpy(&mut gx[start * m..start * m + g.len()], g, 1.0);
                });
            }
            Op::Gather(x, index) => {
                let m = out.cols();
                let rows = val(*x).rows();
                acc(*x, &mut |gx| {
                    let scattered = segment_sum_kernel(g, m, index, rows)
                        .expect("gather indices validated on forward");
                    axpy(gx, &scattered, 1.0);
                });
            }
            Op::SegmentSum(x, seg) => {
                let m = out.cols();
                acc(*x, &mut |gx| {
                    for (i, &s) in seg.iter().enumerate() {
                        axpy(&mut gx[i * m..(i + 1) * m], &g[s * m..(s + 1) * m], 1.0);
                    }
                });
            }
            Op::Sum(x) => acc(*x, &mut |gx| gx.iter_mut().for_each(|o| *o += g[0])),
            Op::Mean(x) => {
                let n = val(*x).data.len().max(1) as f64;
                acc(*x, &mut |gx| gx.iter_mut().for_each(|o| *o += g[0] / n));
            }
            Op::Sigmoid(x) => acc(*x, &mut |gx| {
                for ((o, &gg), &y) in gx.iter_mut().zip(g).zip(&out.data) {
                    *o += gg * y * (1.0 - y);
                }
            }),
            Op::Tanh(x) => acc(*x, &mut |gx| {
                for ((o, &gg), &y) in gx.iter_mut().zip(g).zip(&out.data) {
                    *o += gg * (1.0 - y * y);
                }
            }),
            Op::Silu(x) => {
                let xv = val(*x);
                acc(*x, &mut |gx| {
                    for ((o, &gg), &a) in gx.iter_mut().zip(g).zip(&xv.data) {
                        let s = sigmoid(a);
                        *o += gg * (s + a * s * (1.0 - s));
                    }
                });
            }
            Op::Exp(x) => acc(*x, &mut |gx| {
                for ((o, &gg), &y) in gx.iter_mut().zip(g).zip(&out.data) {
                    *o += gg * y;
                }
            }),
            Op::Log(x) => {
                let xv = val(*x);
                acc(*x, &mut |gx| {
                    for ((o, &gg), &a) in gx.iter_mut().zip(g).zip(&xv.data) {
                        *o += gg / a;
                    }
                });
            }
            Op::Square(x) => {
                let xv = val(*x);
                acc(*x, &mut |gx| {
                    for ((o, &gg), &a) in gx.iter_mut().zip(g).zip(&xv.data) {
                        *o += 2.0 * gg * a;
                    }
                });
            }
            Op::Softmax(x) => {
                let m = out.cols().max(1);
                acc(*x, &mut |gx| {
                    for ((orow, grow), yrow) in
                        gx.chunks_mut(m).zip(g.chunks(m)).zip(out.data.chunks(m))
                    {
                        let s = dot(grow, yrow);
                        for ((o, &gg), &y) in orow.iter_mut().zip(grow).zip(yrow) {
                            *o += y * (gg - s);
                        }
                    }
                });
            }
            Op::LogSoftmax(x) => {
                let m = out.cols().max(1);
                acc(*x, &mut |gx| {
                    for ((orow, grow), yrow) in
                        gx.chunks_mut(m).zip(g.chunks(m)).zip(out.data.chunks(m))
                    {
                        let s: f64 = grow.iter().sum();
                        for ((o, &gg), &y) in orow.iter_mut().zip(grow).zip(yrow) {
                            *o += gg - y.exp() * s;
                        }
                    }
                });
            }
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softmax_inplace(row: &mut [f64]) {
    let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for a in row.iter_mut() {
        *a = (*a - mx).exp();
        s += *a;
    }
    for a in row.iter_mut() {
        *a /= s;
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn axpy(dst: &mut [f64], src: &[f64], s: f64) {
    for (d, &x) in dst.iter_mut().zip(src) {
        *d += s * x;
    }
}

/// The single scatter primitive: sums `width`-wide rows into `segments` buckets.
pub fn segment_sum_kernel(
    data: &[f64],
    width: usize,
    seg: &[usize],
    segments: usize,
) -> std::result::Result<Vec<f64>, String> {
    let mut out = vec![0.0; segments * width];
    for (i, &s) in seg.iter().enumerate() {
        if s >= segments {
            return Err(format!("segment id {s} out of range for {segments} segments"));
        }
        axpy(
            &mut out[s * width..(s + 1) * width],
            &data[i * width..(i + 1) * width],
            1.0,
        );
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(rows: usize, cols: usize, data: &[f64]) -> Tensor {
        Tensor::matrix(rows, cols, data.to_vec()).unwrap()
    }

    #[test]
    fn matmul_shapes() {
        let mut t = Tape::new();
        let a = t.constant(m(2, 3, &[1., 2., 3., 4., 5., 6.]));
        let b = t.constant(m(3, 1, &[1., 0., -1.]));
        let c = t.matmul(a, b).unwrap();
        assert_eq!(t.shape(c), &[2, 1]);
        assert_eq!(t.value(c).data(), &[-2.0, -2.0]);
    }

    #[test]
    fn matmul_mismatch_names_both_shapes() {
        let mut t = Tape::new();
        let a = t.constant(Tensor::zeros(&[2, 3]));
        let b = t.constant(Tensor::zeros(&[2, 1]));
        let err = t.matmul(a, b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[2, 3]") && msg.contains("[2, 1]"), "{msg}");
    }

    #[test]
    fn segment_sum_definition() {
        let mut t = Tape::new();
        let x = t.constant(m(3, 2, &[1., 2., 10., 20., 100., 200.]));
        let s = t.segment_sum(x, vec![0, 0, 1].into(), 2).unwrap();
        assert_eq!(t.value(s).data(), &[11., 22., 100., 200.]);
    }

    #[test]
    fn sigmoid_at_zero() {
        let mut t = Tape::new();
        let x = t.constant(Tensor::vector(vec![0.0]));
        let y = t.sigmoid(x);
        assert_eq!(t.value(y).data(), &[0.5]);
    }

    #[test]
    fn grad_of_sum_of_squares() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::vector(vec![1.0, 2.0]), true);
        let sq = t.square(x);
        let l = t.sum(sq);
        t.backward(l).unwrap();
        assert_eq!(t.grad(x).unwrap(), &[2.0, 4.0]);
    }

    #[test]
    fn grad_of_gated_input() {
        let mut t = Tape::new();
        let w = t.leaf(Tensor::vector(vec![0.0]), true);
        let x = t.constant(Tensor::vector(vec![3.0]));
        let s = t.sigmoid(w);
        let p = t.mul(s, x).unwrap();
        let l = t.sum(p);
        t.backward(l).unwrap();
        assert!((t.grad(w).unwrap()[0] - 0.75).abs() < 1e-15);
    }

    #[test]
    fn backward_accumulates_until_reset() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::vector(vec![1.0, 2.0]), true);
        let sq = t.square(x);
        let l = t.sum(sq);
        t.backward(l).unwrap();
        t.backward(l).unwrap();
        assert_eq!(t.grad(x).unwrap(), &[4.0, 8.0]);
        t.zero_grad();
        assert!(t.grad(x).is_none());
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::vector(vec![1.0, 2.0]), true);
        assert!(matches!(
            t.backward(x),
            Err(TensorError::NonScalarLoss(_))
        ));
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut t = Tape::new();
        let x = t.constant(m(2, 3, &[1., 2., 3., -100., 0., 100.]));
        let y = t.softmax(x);
        for r in 0..2 {
            let s: f64 = t.value(y).row(r).iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
        let ls = t.log_softmax(x);
        for (a, b) in t.value(ls).data().iter().zip(t.value(y).data()) {
            assert!((a.exp() - b).abs() < 1e-12);
        }
    }

    #[test]
    fn finite_difference_on_mixed_graph() {
        // f(x) = sum(log_softmax(concat(tanh(x W), silu(x))) * c) over a small matrix
        let xs = [0.3, -0.7, 1.1, 0.05, -0.4, 0.9];
        let ws = [0.2, -0.1, 0.5, 0.7, -0.3, 0.4];
        let f = |xd: &[f64], grad: bool| -> (f64, Option<Vec<f64>>) {
            let mut t = Tape::new();
            let x = t.leaf(m(3, 2, xd), grad);
            let w = t.constant(m(2, 3, &ws));
            let h = t.matmul(x, w).unwrap();
            let h = t.tanh(h);
            let s = t.silu(x);
            let c = t.concat_cols(&[h, s]).unwrap();
            let ls = t.log_softmax(c);
            let e = t.exp(ls);
            let g = t.gather_rows(e, vec![2, 0, 0, 1].into()).unwrap();
            let seg = t.segment_sum(g, vec![1, 0, 1, 1].into(), 2).unwrap();
            let sq = t.square(seg);
            let l = t.mean(sq);
            if grad {
                t.backward(l).unwrap();
                (t.value(l).item(), Some(t.grad(x).unwrap().to_vec()))
            } else {
                (t.value(l).item(), None)
            }
        };
        let (_, g) = f(&xs, true);
        let g = g.unwrap();
        let h = 1e-5;
        for i in 0..xs.len() {
            let mut p = xs;
            let mut q = xs;
            p[i] += h;
            q[i] -= h;
            let fd = (f(&p, false).0 - f(&q, false).0) / (2.0 * h);
            let rel = (fd - g[i]).abs() / fd.abs().max(g[i].abs()).max(1e-7);
            assert!(rel < 1e-6, "coord {i}: fd {fd} analytic {}", g[i]);
        }
    }
}
