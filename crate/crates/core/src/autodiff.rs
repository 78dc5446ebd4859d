//! Reverse-mode automatic differentiation over dense `f64` matrices.
//!
//! A [`Tape`] records one evaluation. Every value is a row-major matrix
//! ([`Tensor`]); scalars are `1 × 1`. Operations are recorded through [`Var`]
//! handles, and [`Tape::backward`] replays the tape in reverse, returning a
//! fresh set of [`Gradients`] each call.
//!
//! Elementwise binary operations broadcast `1`-sized dimensions numpy-style;
//! their vector-Jacobian products sum back over the broadcast dimensions.
//!
//! Operations come in two flavours: `try_*` methods return
//! [`AutodiffError`] on shape or domain violations, and the plain methods
//! (and the `std::ops` impls) panic on the same conditions.

use std::cell::RefCell;
use std::fmt;
use std::sync::atomic::{AtomicUsize, Ordering};

use thiserror::Error;

use crate::math;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AutodiffError {
    #[error("{op}: incompatible shapes {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: (usize, usize),
        rhs: (usize, usize),
    },
    #[error("{op}: argument outside the domain ({detail})")]
    Domain { op: &'static str, detail: String },
    #[error("backward root must be a scalar, got shape {0:?}")]
    NonScalarRoot((usize, usize)),
    #[error("gradient reached a discrete sampler at node {0}; use a relaxed node or a score-function estimator")]
    NonDifferentiable(usize),
    #[error("variable belongs to a different tape")]
    ForeignVar,
    #[error("tensor data has {len} entries, shape {rows}x{cols} needs {expected}")]
    BadData {
        rows: usize,
        cols: usize,
        len: usize,
        expected: usize,
    },
}

pub type Result<T> = std::result::Result<T, AutodiffError>;

/// Row-major dense matrix.
#[derive(Clone, PartialEq)]
pub struct Tensor {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Tensor({}x{}, {:?})", self.rows, self.cols, self.data)
    }
}

impl Tensor {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(AutodiffError::BadData {
                rows,
                cols,
                len: data.len(),
                expected: rows * cols,
            });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::full(rows, cols, 0.0)
    }

    pub fn full(rows: usize, cols: usize, v: f64) -> Self {
        Self {
            rows,
            cols,
            data: vec![v; rows * cols],
        }
    }

    pub fn scalar(v: f64) -> Self {
        Self::full(1, 1, v)
    }

    /// A `1 × n` row.
    pub fn row(data: Vec<f64>) -> Self {
        Self {
            rows: 1,
            cols: data.len(),
            data,
        }
    }

    /// An `n × 1` column.
    pub fn column(data: Vec<f64>) -> Self {
        Self {
            rows: data.len(),
            cols: 1,
            data,
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
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

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row_slice(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// Value of a `1 × 1` tensor.
    pub fn item(&self) -> f64 {
        assert_eq!(self.shape(), (1, 1), "item() on a non-scalar tensor");
        self.data[0]
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn transpose(&self) -> Tensor {
        let mut out = Tensor::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    fn add_assign(&mut self, other: &Tensor) {
        debug_assert_eq!(self.shape(), other.shape());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }
}

/// Reduction axis: `Axis(0)` collapses rows, `Axis(1)` collapses columns.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Axis(pub usize);

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Constant,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    Neg(usize),
    Exp(usize),
    Ln(usize),
    Sigmoid(usize),
    Tanh(usize),
    Softplus(usize),
    LogSumExp(usize, Axis),
    Softmax(usize, Axis),
    MatMul(usize, usize),
    Sum(usize),
    Mean(usize, Option<Axis>),
    Concat(Vec<usize>, Axis),
    Broadcast(usize),
    Reshape(usize),
    StopGradient,
    Clamp(usize, f64, f64),
    Discrete(usize),
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

static NEXT_TAPE_ID: AtomicUsize = AtomicUsize::new(0);

/// Dynamic record of one forward evaluation.
pub struct Tape {
    id: usize,
    nodes: RefCell<Vec<Node>>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl fmt::Debug for Tape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Tape(id={}, nodes={})", self.id, self.len())
    }
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    index: usize,
}

impl fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Var(tape={}, index={}, shape={:?})", self.tape.id, self.index, self.shape())
    }
}

/// Gradients of one backward pass, indexed by [`Var`].
#[derive(Clone, Debug)]
pub struct Gradients {
    tape_id: usize,
    grads: Vec<Option<Tensor>>,
    shapes: Vec<(usize, usize)>,
}

impl Gradients {
    /// Gradient with respect to `v`; zeros when no path reaches it.
    pub fn wrt(&self, v: Var<'_>) -> Tensor {
        assert_eq!(v.tape.id, self.tape_id, "gradient lookup on a foreign tape");
        match &self.grads[v.index] {
            Some(g) => g.clone(),
            None => {
                let (r, c) = self.shapes[v.index];
                Tensor::zeros(r, c)
            }
        }
    }
}

fn broadcast_shape(op: &'static str, a: (usize, usize), b: (usize, usize)) -> Result<(usize, usize)> {
    let dim = |x: usize, y: usize| -> Option<usize> {
        if x == y {
            Some(x)
        } else if x == 1 {
            Some(y)
        } else if y == 1 {
            Some(x)
        } else {
            None
        }
    };
    match (dim(a.0, b.0), dim(a.1, b.1)) {
        (Some(r), Some(c)) => Ok((r, c)),
        _ => Err(AutodiffError::ShapeMismatch { op, lhs: a, rhs: b }),
    }
}

#[inline]
fn bidx(t: &Tensor, r: usize, c: usize) -> f64 {
    let rr = if t.rows == 1 { 0 } else { r };
    let cc = if t.cols == 1 { 0 } else { c };
    t.data[rr * t.cols + cc]
}

fn zip_broadcast(a: &Tensor, b: &Tensor, shape: (usize, usize), f: impl Fn(f64, f64) -> f64) -> Tensor {
    if a.shape() == shape && b.shape() == shape {
        return Tensor {
            rows: shape.0,
            cols: shape.1,
            data: a.data.iter().zip(&b.data).map(|(&x, &y)| f(x, y)).collect(),
        };
    }
    let mut data = Vec::with_capacity(shape.0 * shape.1);
    for r in 0..shape.0 {
        for c in 0..shape.1 {
            data.push(f(bidx(a, r, c), bidx(b, r, c)));
        }
    }
    Tensor {
        rows: shape.0,
        cols: shape.1,
        data,
    }
}

/// Sums `g` down to `shape` (the inverse of broadcasting).
fn reduce_to(g: &Tensor, shape: (usize, usize)) -> Tensor {
    if g.shape() == shape {
        return g.clone();
    }
    let mut out = Tensor::zeros(shape.0, shape.1);
    for r in 0..g.rows {
        for c in 0..g.cols {
            let rr = if shape.0 == 1 { 0 } else { r };
            let cc = if shape.1 == 1 { 0 } else { c };
            out.data[rr * shape.1 + cc] += g.data[r * g.cols + c];
        }
    }
    out
}

fn matmul(a: &Tensor, b: &Tensor) -> Tensor {
    let (n, k, m) = (a.rows, a.cols, b.cols);
    let mut out = vec![0.0; n * m];
    for i in 0..n {
        let orow = &mut out[i * m..(i + 1) * m];
        for p in 0..k {
            let av = a.data[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b.data[p * m..(p + 1) * m];
            for (o, bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    Tensor {
        rows: n,
        cols: m,
        data: out,
    }
}

fn lse_axis(a: &Tensor, axis: Axis) -> Tensor {
    match axis.0 {
        1 => Tensor::column((0..a.rows).map(|r| math::log_sum_exp(a.row_slice(r))).collect()),
        _ => {
            let t = a.transpose();
            Tensor::row((0..t.rows).map(|r| math::log_sum_exp(t.row_slice(r))).collect())
        }
    }
}

fn sum_axis(a: &Tensor, axis: Option<Axis>) -> Tensor {
    match axis {
        None => Tensor::scalar(a.sum()),
        Some(Axis(1)) => Tensor::column((0..a.rows).map(|r| a.row_slice(r).iter().sum()).collect()),
        Some(_) => {
            let mut out = vec![0.0; a.cols];
            for r in 0..a.rows {
                for (o, v) in out.iter_mut().zip(a.row_slice(r)) {
                    *o += v;
                }
            }
            Tensor::row(out)
        }
    }
}

fn axis_count(shape: (usize, usize), axis: Option<Axis>) -> usize {
    match axis {
        None => shape.0 * shape.1,
        Some(Axis(1)) => shape.1,
        Some(_) => shape.0,
    }
}

impl Tape {
    pub fn new() -> Self {
        Self {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            nodes: RefCell::new(Vec::new()),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Tensor, op: Op, requires_grad: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var {
            tape: self,
            index: nodes.len() - 1,
        }
    }

    /// A differentiable input.
    pub fn leaf(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf, true)
    }

    /// A non-differentiable input.
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Constant, false)
    }

    pub fn scalar(&self, v: f64) -> Var<'_> {
        self.constant(Tensor::scalar(v))
    }

    fn check<'t>(&'t self, v: Var<'t>) -> Result<usize> {
        if std::ptr::eq(v.tape, self) {
            Ok(v.index)
        } else {
            Err(AutodiffError::ForeignVar)
        }
    }

    fn value_of(&self, i: usize) -> std::cell::Ref<'_, Tensor> {
        std::cell::Ref::map(self.nodes.borrow(), |n| &n[i].value)
    }

    fn rg(&self, i: usize) -> bool {
        self.nodes.borrow()[i].requires_grad
    }

    fn unary(&self, a: Var<'_>, op: fn(usize) -> Op, f: impl Fn(f64) -> f64) -> Result<Var<'_>> {
        let i = self.check(a)?;
        let v = self.value_of(i).map(f);
        Ok(self.push(v, op(i), self.rg(i)))
    }

    fn binary(
        &self,
        name: &'static str,
        a: Var<'_>,
        b: Var<'_>,
        op: fn(usize, usize) -> Op,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Var<'_>> {
        let (i, j) = (self.check(a)?, self.check(b)?);
        let v = {
            let (va, vb) = (self.value_of(i), self.value_of(j));
            let shape = broadcast_shape(name, va.shape(), vb.shape())?;
            zip_broadcast(&va, &vb, shape, f)
        };
        Ok(self.push(v, op(i, j), self.rg(i) || self.rg(j)))
    }

    /// Runs reverse mode from a scalar `root`.
    pub fn backward(&self, root: Var<'_>) -> Result<Gradients> {
        let root = self.check(root)?;
        let nodes = self.nodes.borrow();
        let shape = nodes[root].value.shape();
        if shape != (1, 1) {
            return Err(AutodiffError::NonScalarRoot(shape));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; nodes.len()];
        grads[root] = Some(Tensor::scalar(1.0));

        fn acc(grads: &mut [Option<Tensor>], nodes: &[Node], i: usize, g: Tensor) {
            if !nodes[i].requires_grad {
                return;
            }
            match &mut grads[i] {
                Some(t) => t.add_assign(&g),
                slot @ None => *slot = Some(g),
            }
        }

        for idx in (0..=root).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &nodes[idx];
            if !node.requires_grad {
                grads[idx] = Some(g);
                continue;
            }
            let out = &node.value;
            match &node.op {
                Op::Leaf | Op::Constant | Op::StopGradient => {}
                Op::Add(a, b) => {
                    let (sa, sb) = (nodes[*a].value.shape(), nodes[*b].value.shape());
                    acc(&mut grads, &nodes, *a, reduce_to(&g, sa));
                    acc(&mut grads, &nodes, *b, reduce_to(&g, sb));
                }
                Op::Sub(a, b) => {
                    let (sa, sb) = (nodes[*a].value.shape(), nodes[*b].value.shape());
                    acc(&mut grads, &nodes, *a, reduce_to(&g, sa));
                    acc(&mut grads, &nodes, *b, reduce_to(&g.map(|x| -x), sb));
                }
                Op::Mul(a, b) => {
                    let (va, vb) = (&nodes[*a].value, &nodes[*b].value);
                    if nodes[*a].requires_grad {
                        let ga = zip_broadcast(&g, vb, g.shape(), |x, y| x * y);
                        acc(&mut grads, &nodes, *a, reduce_to(&ga, va.shape()));
                    }
                    if nodes[*b].requires_grad {
                        let gb = zip_broadcast(&g, va, g.shape(), |x, y| x * y);
                        acc(&mut grads, &nodes, *b, reduce_to(&gb, vb.shape()));
                    }
                }
                Op::Div(a, b) => {
                    let (va, vb) = (&nodes[*a].value, &nodes[*b].value);
                    if nodes[*a].requires_grad {
                        let ga = zip_broadcast(&g, vb, g.shape(), |x, y| x / y);
                        acc(&mut grads, &nodes, *a, reduce_to(&ga, va.shape()));
                    }
                    if nodes[*b].requires_grad {
                        // d(a/b)/db = -(a/b)/b = -out/b
                        let t = zip_broadcast(&g, out, g.shape(), |x, y| x * y);
                        let gb = zip_broadcast(&t, vb, g.shape(), |x, y| -x / y);
                        acc(&mut grads, &nodes, *b, reduce_to(&gb, vb.shape()));
                    }
                }
                Op::Neg(a) => acc(&mut grads, &nodes, *a, g.map(|x| -x)),
                Op::Exp(a) => {
                    let ga = zip_broadcast(&g, out, g.shape(), |x, y| x * y);
                    acc(&mut grads, &nodes, *a, ga);
                }
                Op::Ln(a) => {
                    let ga = zip_broadcast(&g, &nodes[*a].value, g.shape(), |x, y| x / y);
                    acc(&mut grads, &nodes, *a, ga);
                }
                Op::Sigmoid(a) => {
                    let ga = zip_broadcast(&g, out, g.shape(), |x, s| x * s * (1.0 - s));
                    acc(&mut grads, &nodes, *a, ga);
                }
                Op::Tanh(a) => {
                    let ga = zip_broadcast(&g, out, g.shape(), |x, t| x * (1.0 - t * t));
                    acc(&mut grads, &nodes, *a, ga);
                }
                Op::Softplus(a) => {
                    let ga = zip_broadcast(&g, &nodes[*a].value, g.shape(), |x, v| x * math::sigmoid(v));
                    acc(&mut grads, &nodes, *a, ga);
                }
                Op::LogSumExp(a, axis) => {
                    // d lse / dx = softmax(x) along the axis
                    let va = &nodes[*a].value;
                    let ga = zip_broadcast(va, out, va.shape(), |x, l| (x - l).exp());
                    let ga = zip_broadcast(&ga, &g, va.shape(), |s, x| s * x);
                    let _ = axis;
                    acc(&mut grads, &nodes, *a, ga);
                }
                Op::Softmax(a, axis) => {
                    let gy = zip_broadcast(&g, out, g.shape(), |x, y| x * y);
                    let s = sum_axis(&gy, Some(*axis));
                    let t = zip_broadcast(out, &s, out.shape(), |y, s| y * s);
                    let ga = zip_broadcast(&gy, &t, out.shape(), |a, b| a - b);
                    acc(&mut grads, &nodes, *a, ga);
                }
                Op::MatMul(a, b) => {
                    let (va, vb) = (&nodes[*a].value, &nodes[*b].value);
                    if nodes[*a].requires_grad {
                        acc(&mut grads, &nodes, *a, matmul(&g, &vb.transpose()));
                    }
                    if nodes[*b].requires_grad {
                        acc(&mut grads, &nodes, *b, matmul(&va.transpose(), &g));
                    }
                }
                Op::Sum(a) | Op::Mean(a, _) => {
                    let sa = nodes[*a].value.shape();
                    let scale = match &node.op {
                        Op::Mean(_, axis) => 1.0 / axis_count(sa, *axis) as f64,
                        _ => 1.0,
                    };
                    let ga = zip_broadcast(&g, &Tensor::scalar(scale), g.shape(), |x, s| x * s);
                    let ga = zip_broadcast(&ga, &Tensor::zeros(sa.0, sa.1), sa, |x, _| x);
                    acc(&mut grads, &nodes, *a, ga);
                }
                Op::Concat(parts, axis) => {
                    let mut offset = 0;
                    for &p in parts {
                        let (pr, pc) = nodes[p].value.shape();
                        let mut gp = Tensor::zeros(pr, pc);
                        for r in 0..pr {
                            for c in 0..pc {
                                let (gr, gc) = if axis.0 == 0 { (r + offset, c) } else { (r, c + offset) };
                                gp.data[r * pc + c] = g.get(gr, gc);
                            }
                        }
                        offset += if axis.0 == 0 { pr } else { pc };
                        acc(&mut grads, &nodes, p, gp);
                    }
                }
                Op::Broadcast(a) => {
                    let sa = nodes[*a].value.shape();
                    acc(&mut grads, &nodes, *a, reduce_to(&g, sa));
                }
                Op::Reshape(a) => {
                    let (r, c) = nodes[*a].value.shape();
                    acc(&mut grads, &nodes, *a, Tensor { rows: r, cols: c, data: g.data.clone() });
                }
                Op::Clamp(a, lo, hi) => {
                    let (lo, hi) = (*lo, *hi);
                    let ga = zip_broadcast(&g, &nodes[*a].value, g.shape(), |x, v| {
                        if v >= lo && v <= hi {
                            x
                        } else {
                            0.0
                        }
                    });
                    acc(&mut grads, &nodes, *a, ga);
                }
                Op::Discrete(a) => {
                    if nodes[*a].requires_grad && g.data.iter().any(|x| *x != 0.0) {
                        return Err(AutodiffError::NonDifferentiable(idx));
                    }
                }
            }
            grads[idx] = Some(g);
        }
        Ok(Gradients {
            tape_id: self.id,
            shapes: nodes.iter().map(|n| n.value.shape()).collect(),
            grads,
        })
    }
}

impl<'t> Var<'t> {
    pub fn tape(self) -> &'t Tape {
        self.tape
    }

    pub fn index(self) -> usize {
        self.index
    }

    pub fn shape(self) -> (usize, usize) {
        self.tape.value_of(self.index).shape()
    }

    pub fn value(self) -> Tensor {
        self.tape.value_of(self.index).clone()
    }

    /// Value of a scalar node.
    pub fn item(self) -> f64 {
        self.tape.value_of(self.index).item()
    }

    pub fn requires_grad(self) -> bool {
        self.tape.rg(self.index)
    }

    pub fn try_add(self, b: Var<'t>) -> Result<Var<'t>> {
        self.tape.binary("add", self, b, Op::Add, |x, y| x + y)
    }

    pub fn try_sub(self, b: Var<'t>) -> Result<Var<'t>> {
        self.tape.binary("sub", self, b, Op::Sub, |x, y| x - y)
    }

    pub fn try_mul(self, b: Var<'t>) -> Result<Var<'t>> {
        self.tape.binary("mul", self, b, Op::Mul, |x, y| x * y)
    }

    pub fn try_div(self, b: Var<'t>) -> Result<Var<'t>> {
        let j = self.tape.check(b)?;
        if self.tape.value_of(j).data.contains(&0.0) {
            return Err(AutodiffError::Domain {
                op: "div",
                detail: "division by zero".into(),
            });
        }
        self.tape.binary("div", self, b, Op::Div, |x, y| x / y)
    }

    #[allow(clippy::should_implement_trait)]
    pub fn neg(self) -> Var<'t> {
        self.tape.unary(self, Op::Neg, |x| -x).expect("own tape")
    }

    pub fn exp(self) -> Var<'t> {
        self.tape.unary(self, Op::Exp, f64::exp).expect("own tape")
    }

    // `!(x > 0.0)` also rejects NaN.
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn try_ln(self) -> Result<Var<'t>> {
        let i = self.tape.check(self)?;
        if let Some(x) = self.tape.value_of(i).data.iter().find(|&&x| !(x > 0.0)) {
            return Err(AutodiffError::Domain {
                op: "ln",
                detail: format!("non-positive argument {x}"),
            });
        }
        self.tape.unary(self, Op::Ln, f64::ln)
    }

    pub fn ln(self) -> Var<'t> {
        self.try_ln().unwrap_or_else(|e| panic!("{e}"))
    }

    pub fn sigmoid(self) -> Var<'t> {
        self.tape.unary(self, Op::Sigmoid, math::sigmoid).expect("own tape")
    }

    pub fn tanh(self) -> Var<'t> {
        self.tape.unary(self, Op::Tanh, f64::tanh).expect("own tape")
    }

    /// `log(1 + exp(x))`, overflow-safe.
    pub fn softplus(self) -> Var<'t> {
        self.tape.unary(self, Op::Softplus, math::softplus).expect("own tape")
    }

    /// `log σ(x) = -softplus(-x)`.
    pub fn log_sigmoid(self) -> Var<'t> {
        self.neg().softplus().neg()
    }

    /// Fused, max-subtracted log-sum-exp along `axis`.
    pub fn log_sum_exp(self, axis: Axis) -> Var<'t> {
        let i = self.tape.check(self).expect("own tape");
        let v = lse_axis(&self.tape.value_of(i), axis);
        self.tape.push(v, Op::LogSumExp(i, axis), self.tape.rg(i))
    }

    pub fn softmax(self, axis: Axis) -> Var<'t> {
        let i = self.tape.check(self).expect("own tape");
        let v = {
            let a = self.tape.value_of(i);
            let l = lse_axis(&a, axis);
            zip_broadcast(&a, &l, a.shape(), |x, l| (x - l).exp())
        };
        self.tape.push(v, Op::Softmax(i, axis), self.tape.rg(i))
    }

    pub fn try_matmul(self, b: Var<'t>) -> Result<Var<'t>> {
        let (i, j) = (self.tape.check(self)?, self.tape.check(b)?);
        let v = {
            let (va, vb) = (self.tape.value_of(i), self.tape.value_of(j));
            if va.cols != vb.rows {
                return Err(AutodiffError::ShapeMismatch {
                    op: "matmul",
                    lhs: va.shape(),
                    rhs: vb.shape(),
                });
            }
            matmul(&va, &vb)
        };
        Ok(self.tape.push(v, Op::MatMul(i, j), self.tape.rg(i) || self.tape.rg(j)))
    }

    pub fn matmul(self, b: Var<'t>) -> Var<'t> {
        self.try_matmul(b).unwrap_or_else(|e| panic!("{e}"))
    }

    /// Sum over `axis`, or over everything when `None`.
    pub fn sum(self, axis: Option<Axis>) -> Var<'t> {
        let i = self.tape.check(self).expect("own tape");
        let v = sum_axis(&self.tape.value_of(i), axis);
        self.tape.push(v, Op::Sum(i), self.tape.rg(i))
    }

    pub fn sum_all(self) -> Var<'t> {
        self.sum(None)
    }

    pub fn mean(self, axis: Option<Axis>) -> Var<'t> {
        let i = self.tape.check(self).expect("own tape");
        let v = {
            let a = self.tape.value_of(i);
            let n = axis_count(a.shape(), axis) as f64;
            sum_axis(&a, axis).map(|x| x / n)
        };
        self.tape.push(v, Op::Mean(i, axis), self.tape.rg(i))
    }

    pub fn try_broadcast_to(self, rows: usize, cols: usize) -> Result<Var<'t>> {
        let i = self.tape.check(self)?;
        let v = {
            let a = self.tape.value_of(i);
            let shape = broadcast_shape("broadcast", a.shape(), (rows, cols))?;
            if shape != (rows, cols) {
                return Err(AutodiffError::ShapeMismatch {
                    op: "broadcast",
                    lhs: a.shape(),
                    rhs: (rows, cols),
                });
            }
            zip_broadcast(&a, &Tensor::zeros(rows, cols), shape, |x, _| x)
        };
        Ok(self.tape.push(v, Op::Broadcast(i), self.tape.rg(i)))
    }

    pub fn broadcast_to(self, rows: usize, cols: usize) -> Var<'t> {
        self.try_broadcast_to(rows, cols).unwrap_or_else(|e| panic!("{e}"))
    }

    /// Row-major reshape.
    pub fn try_reshape(self, rows: usize, cols: usize) -> Result<Var<'t>> {
        let i = self.tape.check(self)?;
        let v = {
            let a = self.tape.value_of(i);
            if a.len() != rows * cols {
                return Err(AutodiffError::ShapeMismatch {
                    op: "reshape",
                    lhs: a.shape(),
                    rhs: (rows, cols),
                });
            }
            Tensor {
                rows,
                cols,
                data: a.data.clone(),
            }
        };
        Ok(self.tape.push(v, Op::Reshape(i), self.tape.rg(i)))
    }

    pub fn reshape(self, rows: usize, cols: usize) -> Var<'t> {
        self.try_reshape(rows, cols).unwrap_or_else(|e| panic!("{e}"))
    }

    /// Forward identity, zero backward contribution.
    pub fn stop_gradient(self) -> Var<'t> {
        let i = self.tape.check(self).expect("own tape");
        let v = self.tape.value_of(i).clone();
        self.tape.push(v, Op::StopGradient, false)
    }

    /// Elementwise clamp; the gradient passes only where `lo <= x <= hi`.
    pub fn clamp(self, lo: f64, hi: f64) -> Var<'t> {
        let i = self.tape.check(self).expect("own tape");
        let v = self.tape.value_of(i).map(|x| x.clamp(lo, hi));
        self.tape.push(v, Op::Clamp(i, lo, hi), self.tape.rg(i))
    }

    /// Records `value` as the output of a discrete sampler driven by `self`.
    /// Backpropagating into it is an error whenever `self` is differentiable.
    pub fn discrete_output(self, value: Tensor) -> Var<'t> {
        let i = self.tape.check(self).expect("own tape");
        self.tape.push(value, Op::Discrete(i), self.tape.rg(i))
    }

    pub fn scale(self, s: f64) -> Var<'t> {
        self * s
    }
}

/// Concatenates along `axis`.
pub fn try_concat<'t>(parts: &[Var<'t>], axis: Axis) -> Result<Var<'t>> {
    let first = parts.first().ok_or(AutodiffError::Domain {
        op: "concat",
        detail: "no inputs".into(),
    })?;
    let tape = first.tape;
    let idx: Vec<usize> = parts.iter().map(|p| tape.check(*p)).collect::<Result<_>>()?;
    let v = {
        let vals: Vec<_> = idx.iter().map(|&i| tape.value_of(i)).collect();
        let (r0, c0) = vals[0].shape();
        for v in &vals[1..] {
            let ok = if axis.0 == 0 { v.cols == c0 } else { v.rows == r0 };
            if !ok {
                return Err(AutodiffError::ShapeMismatch {
                    op: "concat",
                    lhs: (r0, c0),
                    rhs: v.shape(),
                });
            }
        }
        if axis.0 == 0 {
            let rows = vals.iter().map(|v| v.rows).sum();
            let data = vals.iter().flat_map(|v| v.data.iter().copied()).collect();
            Tensor { rows, cols: c0, data }
        } else {
            let cols = vals.iter().map(|v| v.cols).sum();
            let mut data = Vec::with_capacity(r0 * cols);
            for r in 0..r0 {
                for v in &vals {
                    data.extend_from_slice(v.row_slice(r));
                }
            }
            Tensor { rows: r0, cols, data }
        }
    };
    let rg = idx.iter().any(|&i| tape.rg(i));
    Ok(tape.push(v, Op::Concat(idx, axis), rg))
}

pub fn concat<'t>(parts: &[Var<'t>], axis: Axis) -> Var<'t> {
    try_concat(parts, axis).unwrap_or_else(|e| panic!("{e}"))
}

macro_rules! binop {
    ($trait:ident, $method:ident, $try:ident) => {
        impl<'t> std::ops::$trait<Var<'t>> for Var<'t> {
            type Output = Var<'t>;
            fn $method(self, rhs: Var<'t>) -> Var<'t> {
                self.$try(rhs).unwrap_or_else(|e| panic!("{e}"))
            }
        }
        impl<'t> std::ops::$trait<f64> for Var<'t> {
            type Output = Var<'t>;
            fn $method(self, rhs: f64) -> Var<'t> {
                let c = self.tape.scalar(rhs);
                self.$try(c).unwrap_or_else(|e| panic!("{e}"))
            }
        }
        impl<'t> std::ops::$trait<Var<'t>> for f64 {
            type Output = Var<'t>;
            fn $method(self, rhs: Var<'t>) -> Var<'t> {
                let c = rhs.tape.scalar(self);
                c.$try(rhs).unwrap_or_else(|e| panic!("{e}"))
            }
        }
    };
}

binop!(Add, add, try_add);
binop!(Sub, sub, try_sub);
binop!(Mul, mul, try_mul);
binop!(Div, div, try_div);

impl<'t> std::ops::Neg for Var<'t> {
    type Output = Var<'t>;
    fn neg(self) -> Var<'t> {
        Var::neg(self)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fd(f: impl Fn(f64) -> f64, x: f64) -> f64 {
        let h = 1e-5;
        (f(x + h) - f(x - h)) / (2.0 * h)
    }

    #[test]
    fn sigmoid_derivative_at_zero() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::scalar(0.0));
        let y = x.sigmoid();
        let g = tape.backward(y).unwrap();
        assert_eq!(g.wrt(x).item(), 0.25);
    }

    #[test]
    fn lse_gradient_is_softmax() {
        let tape = Tape::new();
        let v = tape.leaf(Tensor::row(vec![0.0, 0.0]));
        let y = v.log_sum_exp(Axis(1));
        let g = tape.backward(y).unwrap().wrt(v);
        assert_eq!(g.data(), &[0.5, 0.5]);
    }

    #[test]
    fn log_sigmoid_matches_finite_difference() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::scalar(0.0));
        let g = tape.backward(x.sigmoid().ln()).unwrap().wrt(x).item();
        let f = |x: f64| math::sigmoid(x).ln();
        assert!((g - 0.5).abs() < 1e-15);
        assert!((g - fd(f, 0.0)).abs() < 1e-9);
    }

    #[test]
    fn sum_of_leaves() {
        let tape = Tape::new();
        let a = tape.leaf(Tensor::scalar(1.5));
        let b = tape.leaf(Tensor::row(vec![2.0, -1.0]));
        let s = a + b.sum_all();
        let g = tape.backward(s).unwrap();
        assert_eq!(g.wrt(a).item(), 1.0);
        assert_eq!(g.wrt(b).data(), &[1.0, 1.0]);
    }

    #[test]
    fn stop_gradient_freezes_factor() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::scalar(3.0));
        let y = x * x.stop_gradient();
        assert_eq!(tape.backward(y).unwrap().wrt(x).item(), 3.0);
        let z = x.stop_gradient();
        let g = tape.backward(z.sum_all()).unwrap();
        assert_eq!(g.wrt(x).item(), 0.0);
    }

    #[test]
    fn backward_is_repeatable() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::row(vec![0.3, -0.7]));
        let y = (x.exp() * x).sum_all();
        let g1 = tape.backward(y).unwrap().wrt(x);
        let g2 = tape.backward(y).unwrap().wrt(x);
        assert_eq!(g1, g2);
    }

    #[test]
    fn non_scalar_root_rejected() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::row(vec![1.0, 2.0]));
        assert_eq!(tape.backward(x).unwrap_err(), AutodiffError::NonScalarRoot((1, 2)));
    }

    #[test]
    fn shape_and_domain_errors() {
        let tape = Tape::new();
        let a = tape.leaf(Tensor::zeros(2, 3));
        let b = tape.leaf(Tensor::zeros(3, 2));
        assert!(matches!(a.try_add(b), Err(AutodiffError::ShapeMismatch { .. })));
        assert!(a.try_matmul(b).is_ok());
        assert!(matches!(a.try_matmul(a), Err(AutodiffError::ShapeMismatch { .. })));
        assert!(matches!(a.try_ln(), Err(AutodiffError::Domain { .. })));
        let one = tape.scalar(1.0);
        assert!(matches!(one.try_div(a), Err(AutodiffError::Domain { .. })));
        assert!(matches!(a.try_reshape(5, 1), Err(AutodiffError::ShapeMismatch { .. })));
        let other = Tape::new();
        let c = other.leaf(Tensor::scalar(1.0));
        assert_eq!(tape.backward(c).unwrap_err(), AutodiffError::ForeignVar);
    }

    #[test]
    fn broadcasting_reduces_gradients() {
        let tape = Tape::new();
        let w = tape.leaf(Tensor::row(vec![1.0, 2.0, 3.0]));
        let x = tape.constant(Tensor::new(2, 3, vec![1.0, 1.0, 1.0, 2.0, 2.0, 2.0]).unwrap());
        let y = (x * w).sum_all();
        assert_eq!(tape.backward(y).unwrap().wrt(w).data(), &[3.0, 3.0, 3.0]);
    }

    #[test]
    fn discrete_output_blocks_gradient() {
        let tape = Tape::new();
        let logits = tape.leaf(Tensor::row(vec![0.1, 0.2]));
        let d = logits.discrete_output(Tensor::row(vec![0.0, 1.0]));
        let y = (d * logits).sum_all();
        assert!(matches!(tape.backward(y), Err(AutodiffError::NonDifferentiable(_))));
        // Using the discrete value only as a constant selector is fine.
        let y2 = (d.stop_gradient() * logits).sum_all();
        assert!(tape.backward(y2).is_ok());
    }

    #[test]
    fn linearity_of_backward() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::row(vec![0.2, -0.4, 1.1]));
        let f = x.tanh().sum_all();
        let g = x.exp().log_sum_exp(Axis(1)).sum_all();
        let combo = f * 2.5 + g * -0.75;
        let gf = tape.backward(f).unwrap().wrt(x);
        let gg = tape.backward(g).unwrap().wrt(x);
        let gc = tape.backward(combo).unwrap().wrt(x);
        for i in 0..3 {
            let expect = 2.5 * gf.data()[i] + -0.75 * gg.data()[i];
            assert!((gc.data()[i] - expect).abs() <= 1e-15 * expect.abs().max(1.0));
        }
    }

    #[test]
    fn concat_and_reshape_round_trip_gradients() {
        let tape = Tape::new();
        let a = tape.leaf(Tensor::new(2, 1, vec![1.0, 2.0]).unwrap());
        let b = tape.leaf(Tensor::new(2, 2, vec![3.0, 4.0, 5.0, 6.0]).unwrap());
        let c = concat(&[a, b], Axis(1));
        assert_eq!(c.value().data(), &[1.0, 3.0, 4.0, 2.0, 5.0, 6.0]);
        let w = tape.constant(Tensor::row((1..=6).map(f64::from).collect()));
        let y = (c.reshape(1, 6) * w).sum_all();
        let g = tape.backward(y).unwrap();
        assert_eq!(g.wrt(a).data(), &[1.0, 4.0]);
        assert_eq!(g.wrt(b).data(), &[2.0, 3.0, 5.0, 6.0]);
    }
}
