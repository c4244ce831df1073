//! Tape-based reverse-mode automatic differentiation.
//!
//! A [`Graph`] records every operation as a node whose parents precede it, so
//! node order is already a topological order and [`Graph::backward`] is a
//! single reverse sweep. Leaf gradients accumulate across `backward` calls
//! until [`Graph::zero_grad`].
//!
//! Binary operations require equal shapes, except that either side may be a
//! one-element tensor, which is broadcast. Any other broadcast is written
//! explicitly with [`Graph::expand_rows`].

use alloc::string::ToString;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math;
use crate::tensor::{dims2, matmul_into, transpose_into, Tensor};

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Element-wise operation kinds accepted by [`Graph::elementwise`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Elementwise {
    Add,
    Sub,
    Mul,
    Div,
    Exp,
    Tanh,
    Sigmoid,
    Log,
    /// `max(x, floor)` against a constant.
    MaxScalar(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Reduction {
    Sum,
    Mean,
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Affine { input: Var, scale: f64 },
    Exp(Var),
    Tanh(Var),
    Sigmoid(Var),
    Log(Var),
    MaxScalar { input: Var, floor: f64 },
    Clamp { input: Var, lo: f64, hi: f64 },
    Reduce { input: Var, kind: Reduction, axis: Option<usize> },
    Reshape(Var),
    Narrow { input: Var, start: usize },
    Concat(Vec<Var>),
    ExpandRows(Var),
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Recorded computation with per-leaf gradient accumulators.
#[derive(Debug, Clone, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Adds a leaf; it is differentiable iff `tensor.requires_grad`.
    pub fn leaf(&mut self, tensor: Tensor) -> Var {
        let requires_grad = tensor.requires_grad;
        self.push(tensor, Op::Leaf, requires_grad)
    }

    /// Adds a differentiable leaf holding a copy of `tensor`.
    pub fn param(&mut self, tensor: &Tensor) -> Var {
        self.leaf(tensor.clone().with_grad())
    }

    pub fn constant(&mut self, mut tensor: Tensor) -> Var {
        tensor.requires_grad = false;
        self.push(tensor, Op::Leaf, false)
    }

    pub fn scalar(&mut self, value: f64) -> Var {
        self.constant(Tensor::scalar(value))
    }

    /// A non-differentiable copy of `v`.
    pub fn detach(&mut self, v: Var) -> Var {
        let t = self.value(v).clone();
        self.constant(t)
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

    /// Accumulated gradient of a differentiable leaf.
    pub fn grad(&self, v: Var) -> Option<Tensor> {
        let g = self.grads.get(v.0)?.as_ref()?;
        Some(Tensor::new(self.shape(v), g.clone()).expect("gradient shape equals value shape"))
    }

    pub fn zero_grad(&mut self) {
        for g in self.grads.iter_mut() {
            *g = None;
        }
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        self.grads.push(None);
        Var(self.nodes.len() - 1)
    }

    fn push_checked(&mut self, name: &str, value: Tensor, op: Op, parents: &[Var]) -> Result<Var> {
        if !value.all_finite() {
            return Err(Error::NonFinite {
                op: name.to_string(),
            });
        }
        let requires_grad = parents.iter().any(|p| self.nodes[p.0].requires_grad);
        Ok(self.push(value, op, requires_grad))
    }

    // --- linear algebra -------------------------------------------------

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (m, k) = dims2(ta, "matmul")?;
        let (k2, n) = dims2(tb, "matmul")?;
        if k != k2 {
            return Err(Error::shape("matmul", ta.shape(), tb.shape()));
        }
        let mut out = vec![0.0; m * n];
        matmul_into(ta.data(), tb.data(), &mut out, m, k, n);
        let value = Tensor::new([m, n], out)?;
        self.push_checked("matmul", value, Op::MatMul(a, b), &[a, b])
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let value = self.value(a).transpose()?;
        self.push_checked("transpose", value, Op::Transpose(a), &[a])
    }

    // --- element-wise ---------------------------------------------------

    /// Dispatches on an [`Elementwise`] kind; unary kinds take one input.
    pub fn elementwise(&mut self, kind: Elementwise, inputs: &[Var]) -> Result<Var> {
        let arity = match kind {
            Elementwise::Add | Elementwise::Sub | Elementwise::Mul | Elementwise::Div => 2,
            _ => 1,
        };
        if inputs.len() != arity {
            return Err(Error::shape("elementwise arity", &[arity], &[inputs.len()]));
        }
        match kind {
            Elementwise::Add => self.add(inputs[0], inputs[1]),
            Elementwise::Sub => self.sub(inputs[0], inputs[1]),
            Elementwise::Mul => self.mul(inputs[0], inputs[1]),
            Elementwise::Div => self.div(inputs[0], inputs[1]),
            Elementwise::Exp => self.exp(inputs[0]),
            Elementwise::Tanh => self.tanh(inputs[0]),
            Elementwise::Sigmoid => self.sigmoid(inputs[0]),
            Elementwise::Log => self.log(inputs[0]),
            Elementwise::MaxScalar(floor) => self.max_scalar(inputs[0], floor),
        }
    }

    fn binary(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let value = if ta.shape() == tb.shape() {
            let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
            Tensor::new(ta.shape(), data)?
        } else if tb.is_scalar() {
            let y = tb.item();
            ta.map(|x| f(x, y))
        } else if ta.is_scalar() {
            let x = ta.item();
            tb.map(|y| f(x, y))
        } else {
            return Err(Error::shape(name, ta.shape(), tb.shape()));
        };
        self.push_checked(name, value, op, &[a, b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.value(b).data().contains(&0.0) {
            return Err(Error::DivisionByZero);
        }
        self.binary("div", a, b, |x, y| x / y, Op::Div(a, b))
    }

    /// `scale · a + shift` with constant coefficients.
    pub fn affine(&mut self, a: Var, scale: f64, shift: f64) -> Result<Var> {
        let value = self.value(a).map(|x| scale * x + shift);
        self.push_checked("affine", value, Op::Affine { input: a, scale }, &[a])
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Result<Var> {
        self.affine(a, factor, 0.0)
    }

    pub fn add_scalar(&mut self, a: Var, shift: f64) -> Result<Var> {
        self.affine(a, 1.0, shift)
    }

    pub fn neg(&mut self, a: Var) -> Result<Var> {
        self.affine(a, -1.0, 0.0)
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        let value = self.value(a).map(math::exp);
        self.push_checked("exp", value, Op::Exp(a), &[a])
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        let value = self.value(a).map(math::tanh);
        self.push_checked("tanh", value, Op::Tanh(a), &[a])
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        let value = self.value(a).map(math::sigmoid);
        self.push_checked("sigmoid", value, Op::Sigmoid(a), &[a])
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        if let Some(&bad) = self.value(a).data().iter().find(|&&x| x <= 0.0) {
            return Err(Error::LogDomain(bad));
        }
        let value = self.value(a).map(math::ln);
        self.push_checked("log", value, Op::Log(a), &[a])
    }

    pub fn max_scalar(&mut self, a: Var, floor: f64) -> Result<Var> {
        let value = self.value(a).map(|x| if x >= floor { x } else { floor });
        self.push_checked("max_scalar", value, Op::MaxScalar { input: a, floor }, &[a])
    }

    /// Clamps into `[lo, hi]`; the gradient is zero outside the interval.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Result<Var> {
        let value = self.value(a).map(|x| x.clamp(lo, hi));
        self.push_checked("clamp", value, Op::Clamp { input: a, lo, hi }, &[a])
    }

    // --- reductions and shape ops ---------------------------------------

    /// Reduces along `axis` (removing it), or over all elements when `None`.
    pub fn reduce(&mut self, a: Var, kind: Reduction, axis: Option<usize>) -> Result<Var> {
        let t = self.value(a);
        let value = match axis {
            None => {
                let s: f64 = t.data().iter().sum();
                let v = match kind {
                    Reduction::Sum => s,
                    Reduction::Mean => s / t.numel() as f64,
                };
                Tensor::scalar(v)
            }
            Some(axis) => {
                if axis >= t.rank() {
                    return Err(Error::Axis {
                        axis,
                        rank: t.rank(),
                    });
                }
                let (outer, n, inner) = axis_split(t.shape(), axis);
                let mut out = vec![0.0; outer * inner];
                for o in 0..outer {
                    for j in 0..n {
                        let src = &t.data()[(o * n + j) * inner..(o * n + j + 1) * inner];
                        for (d, &s) in out[o * inner..(o + 1) * inner].iter_mut().zip(src) {
                            *d += s;
                        }
                    }
                }
                if kind == Reduction::Mean {
                    out.iter_mut().for_each(|v| *v /= n as f64);
                }
                let mut shape: Vec<usize> = t.shape().to_vec();
                shape.remove(axis);
                if shape.is_empty() {
                    shape.push(1);
                }
                Tensor::new(shape, out)?
            }
        };
        self.push_checked("reduce", value, Op::Reduce { input: a, kind, axis }, &[a])
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        self.reduce(a, Reduction::Sum, None)
    }

    pub fn mean(&mut self, a: Var, axis: usize) -> Result<Var> {
        self.reduce(a, Reduction::Mean, Some(axis))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(a).clone().reshape(shape)?;
        self.push_checked("reshape", value, Op::Reshape(a), &[a])
    }

    /// `len` consecutive elements of the row-major data starting at `start`,
    /// viewed with `shape`.
    pub fn narrow(&mut self, a: Var, start: usize, shape: &[usize]) -> Result<Var> {
        let t = self.value(a);
        let len: usize = shape.iter().product();
        if start + len > t.numel() {
            return Err(Error::shape("narrow", t.shape(), shape));
        }
        let value = Tensor::new(shape, t.data()[start..start + len].to_vec())?;
        self.push_checked("narrow", value, Op::Narrow { input: a, start }, &[a])
    }

    /// Row `i` of a matrix as a `1 × cols` tensor.
    pub fn row(&mut self, a: Var, i: usize) -> Result<Var> {
        let (rows, cols) = dims2(self.value(a), "row")?;
        if i >= rows {
            return Err(Error::Axis { axis: i, rank: rows });
        }
        self.narrow(a, i * cols, &[1, cols])
    }

    /// Single element `i` of the flat data as a one-element tensor.
    pub fn element(&mut self, a: Var, i: usize) -> Result<Var> {
        self.narrow(a, i, &[1])
    }

    /// Concatenates along axis 0; trailing dimensions must agree.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts.first().ok_or(Error::Empty)?;
        let tail: Vec<usize> = self.shape(first)[1..].to_vec();
        let mut rows = 0;
        let mut data = Vec::new();
        for &p in parts {
            let t = self.value(p);
            if t.shape()[1..] != tail[..] {
                return Err(Error::shape("concat", self.shape(first), t.shape()));
            }
            rows += t.shape()[0];
            data.extend_from_slice(t.data());
        }
        let mut shape = vec![rows];
        shape.extend_from_slice(&tail);
        let value = Tensor::new(shape, data)?;
        self.push_checked("concat", value, Op::Concat(parts.to_vec()), parts)
    }

    /// Repeats a `1 × n` row into a `rows × n` matrix.
    pub fn expand_rows(&mut self, a: Var, rows: usize) -> Result<Var> {
        let t = self.value(a);
        let (r, n) = dims2(t, "expand_rows")?;
        if r != 1 || rows == 0 {
            return Err(Error::shape("expand_rows", t.shape(), &[rows, n]));
        }
        let mut data = Vec::with_capacity(rows * n);
        for _ in 0..rows {
            data.extend_from_slice(t.data());
        }
        let value = Tensor::new([rows, n], data)?;
        self.push_checked("expand_rows", value, Op::ExpandRows(a), &[a])
    }

    // --- backward -------------------------------------------------------

    /// Accumulates `d root / d leaf` into every differentiable leaf.
    pub fn backward(&mut self, root: Var) -> Result<()> {
        let root_value = self.value(root);
        if !root_value.is_scalar() {
            return Err(Error::NonScalarRoot(root_value.shape().to_vec()));
        }
        if !self.nodes[root.0].requires_grad {
            return Ok(());
        }
        let nodes = &self.nodes;
        let grads = &mut self.grads;
        let mut adj: Vec<Option<Vec<f64>>> = vec![None; root.0 + 1];
        adj[root.0] = Some(vec![1.0]);

        for i in (0..=root.0).rev() {
            let Some(g) = adj[i].take() else { continue };
            let node = &nodes[i];
            if !node.requires_grad {
                continue;
            }
            let y = node.value.data();
            let wants = |v: Var| nodes[v.0].requires_grad;
            match &node.op {
                Op::Leaf => {
                    let acc = grads[i].get_or_insert_with(|| vec![0.0; g.len()]);
                    add_into(acc, &g);
                }
                Op::MatMul(a, b) => {
                    let (ta, tb) = (&nodes[a.0].value, &nodes[b.0].value);
                    let (m, k) = (ta.shape()[0], ta.shape()[1]);
                    let n = tb.shape()[1];
                    if wants(*a) {
                        // dA = G · Bᵀ
                        let mut bt = vec![0.0; k * n];
                        transpose_into(tb.data(), &mut bt, k, n);
                        let da = slot(&mut adj, *a, m * k);
                        matmul_into(&g, &bt, da, m, n, k);
                    }
                    if wants(*b) {
                        // dB = Aᵀ · G
                        let mut at = vec![0.0; m * k];
                        transpose_into(ta.data(), &mut at, m, k);
                        let db = slot(&mut adj, *b, k * n);
                        matmul_into(&at, &g, db, k, m, n);
                    }
                }
                Op::Transpose(a) => {
                    let s = node.value.shape();
                    let da = slot(&mut adj, *a, g.len());
                    // g is [c × r]; parent is [r × c]
                    for i in 0..s[0] {
                        for j in 0..s[1] {
                            da[j * s[0] + i] += g[i * s[1] + j];
                        }
                    }
                }
                Op::Add(a, b) | Op::Sub(a, b) => {
                    let sign = if matches!(node.op, Op::Sub(..)) { -1.0 } else { 1.0 };
                    if wants(*a) {
                        bcast_acc(&mut adj, nodes, *a, g.iter().copied());
                    }
                    if wants(*b) {
                        bcast_acc(&mut adj, nodes, *b, g.iter().map(|v| sign * v));
                    }
                }
                Op::Mul(a, b) => {
                    let (xa, xb) = (&nodes[a.0].value, &nodes[b.0].value);
                    if wants(*a) {
                        let it = g.iter().enumerate().map(|(j, gv)| gv * at_bcast(xb, j));
                        bcast_acc(&mut adj, nodes, *a, it);
                    }
                    if wants(*b) {
                        let it = g.iter().enumerate().map(|(j, gv)| gv * at_bcast(xa, j));
                        bcast_acc(&mut adj, nodes, *b, it);
                    }
                }
                Op::Div(a, b) => {
                    let (xa, xb) = (&nodes[a.0].value, &nodes[b.0].value);
                    if wants(*a) {
                        let it = g.iter().enumerate().map(|(j, gv)| gv / at_bcast(xb, j));
                        bcast_acc(&mut adj, nodes, *a, it);
                    }
                    if wants(*b) {
                        let it = g.iter().enumerate().map(|(j, gv)| {
                            let d = at_bcast(xb, j);
                            -gv * at_bcast(xa, j) / (d * d)
                        });
                        bcast_acc(&mut adj, nodes, *b, it);
                    }
                }
                Op::Affine { input, scale } => {
                    let da = slot(&mut adj, *input, g.len());
                    for (d, gv) in da.iter_mut().zip(&g) {
                        *d += scale * gv;
                    }
                }
                Op::Exp(a) => unary_acc(&mut adj, *a, &g, |j| y[j]),
                Op::Tanh(a) => unary_acc(&mut adj, *a, &g, |j| 1.0 - y[j] * y[j]),
                Op::Sigmoid(a) => unary_acc(&mut adj, *a, &g, |j| y[j] * (1.0 - y[j])),
                Op::Log(a) => {
                    let x = nodes[a.0].value.data();
                    unary_acc(&mut adj, *a, &g, |j| 1.0 / x[j])
                }
                Op::MaxScalar { input, floor } => {
                    let x = nodes[input.0].value.data();
                    unary_acc(&mut adj, *input, &g, |j| if x[j] >= *floor { 1.0 } else { 0.0 })
                }
                Op::Clamp { input, lo, hi } => {
                    let x = nodes[input.0].value.data();
                    unary_acc(&mut adj, *input, &g, |j| {
                        if x[j] >= *lo && x[j] <= *hi {
                            1.0
                        } else {
                            0.0
                        }
                    })
                }
                Op::Reduce { input, kind, axis } => {
                    let src = &nodes[input.0].value;
                    let da = slot(&mut adj, *input, src.numel());
                    match axis {
                        None => {
                            let w = match kind {
                                Reduction::Sum => g[0],
                                Reduction::Mean => g[0] / src.numel() as f64,
                            };
                            da.iter_mut().for_each(|d| *d += w);
                        }
                        Some(axis) => {
                            let (outer, n, inner) = axis_split(src.shape(), *axis);
                            let w = match kind {
                                Reduction::Sum => 1.0,
                                Reduction::Mean => 1.0 / n as f64,
                            };
                            for o in 0..outer {
                                let gs = &g[o * inner..(o + 1) * inner];
                                for j in 0..n {
                                    let base = (o * n + j) * inner;
                                    for (d, gv) in da[base..base + inner].iter_mut().zip(gs) {
                                        *d += w * gv;
                                    }
                                }
                            }
                        }
                    }
                }
                Op::Reshape(a) => {
                    let da = slot(&mut adj, *a, g.len());
                    add_into(da, &g);
                }
                Op::Narrow { input, start } => {
                    let total = nodes[input.0].value.numel();
                    let da = slot(&mut adj, *input, total);
                    add_into(&mut da[*start..*start + g.len()], &g);
                }
                Op::Concat(parts) => {
                    let mut offset = 0;
                    for p in parts {
                        let len = nodes[p.0].value.numel();
                        if wants(*p) {
                            let dp = slot(&mut adj, *p, len);
                            add_into(dp, &g[offset..offset + len]);
                        }
                        offset += len;
                    }
                }
                Op::ExpandRows(a) => {
                    let n = nodes[a.0].value.numel();
                    let da = slot(&mut adj, *a, n);
                    for chunk in g.chunks(n) {
                        add_into(da, chunk);
                    }
                }
            }
        }
        Ok(())
    }
}

fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

fn slot(adj: &mut [Option<Vec<f64>>], v: Var, len: usize) -> &mut [f64] {
    adj[v.0].get_or_insert_with(|| vec![0.0; len])
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

#[inline]
fn at_bcast(t: &Tensor, j: usize) -> f64 {
    if t.is_scalar() {
        t.data()[0]
    } else {
        t.data()[j]
    }
}

/// Accumulates an output-shaped gradient into `v`, summing when `v` was a
/// broadcast scalar.
fn bcast_acc(
    adj: &mut [Option<Vec<f64>>],
    nodes: &[Node],
    v: Var,
    it: impl Iterator<Item = f64>,
) {
    let n = nodes[v.0].value.numel();
    let dv = slot(adj, v, n);
    if n == 1 {
        dv[0] += it.sum::<f64>();
    } else {
        for (d, x) in dv.iter_mut().zip(it) {
            *d += x;
        }
    }
}

fn unary_acc(adj: &mut [Option<Vec<f64>>], v: Var, g: &[f64], local: impl Fn(usize) -> f64) {
    let dv = slot(adj, v, g.len());
    for (j, (d, gv)) in dv.iter_mut().zip(g).enumerate() {
        *d += gv * local(j);
    }
}
