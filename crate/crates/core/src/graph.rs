//! Reverse-mode automatic differentiation over [`Tensor`] values.
//!
//! A [`Graph`] is a tape: every operation appends a node holding its
//! output, so node ids are already a topological order. [`Graph::backward`]
//! walks the tape in reverse and accumulates gradients into the leaves
//! created with [`Graph::param`].
//!
//! Broadcasting is limited to one-element operands combined with a tensor
//! of any shape. Row-wise bias addition goes through [`Graph::linear`].

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum UnaryKind {
    Exp,
    Log,
    Tanh,
    Relu,
    Square,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BinaryKind {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReduceKind {
    Sum,
    Mean,
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Linear { x: Var, w: Var, b: Var },
    Binary(BinaryKind, Var, Var),
    Unary(UnaryKind, Var),
    Scale(Var, f64),
    AddConst(Var),
    Clamp { x: Var, lo: f64, hi: f64 },
    SliceCols { x: Var, start: usize, len: usize },
    ConcatCols(Vec<Var>),
    Reduce(ReduceKind, Var),
}

#[derive(Clone, Debug)]
struct Node {
    op: Op,
    value: Tensor,
    requires_grad: bool,
    grad: Option<Tensor>,
}

#[derive(Clone, Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
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

    /// A leaf whose gradient is tracked.
    pub fn param(&mut self, t: Tensor) -> Var {
        self.push(Op::Leaf, t, true)
    }

    /// A leaf that never receives a gradient.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(Op::Leaf, t, false)
    }

    pub fn scalar(&mut self, v: f64) -> Var {
        self.constant(Tensor::scalar(v))
    }

    /// Stop-gradient: a constant copy of `v`'s current value.
    pub fn detach(&mut self, v: Var) -> Var {
        let t = self.value(v).clone();
        self.constant(t)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Accumulated gradient of a leaf, if `backward` has reached it.
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.nodes[v.0].grad.as_ref()
    }

    /// Gradient of a leaf, or zeros of the leaf's shape when none was
    /// accumulated.
    pub fn grad_or_zeros(&self, v: Var) -> Tensor {
        self.grad(v)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(self.value(v).shape()))
    }

    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
    }

    fn push(&mut self, op: Op, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            op,
            value,
            requires_grad,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    fn push_checked(&mut self, name: &str, op: Op, value: Tensor, rg: bool) -> Result<Var> {
        if !value.all_finite() {
            return Err(Error::NonFinite(format!("operation `{name}`")));
        }
        Ok(self.push(op, value, rg))
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (r, k) = rank2(ta, "matmul")?;
        let (k2, c) = rank2(tb, "matmul")?;
        if k != k2 {
            return Err(Error::dim("matmul", ta.shape(), tb.shape()));
        }
        let out = Tensor::from_parts(vec![r, c], mm(ta.data(), tb.data(), r, k, c));
        let rg = self.rg(&[a, b]);
        self.push_checked("matmul", Op::MatMul(a, b), out, rg)
    }

    /// `x · wᵀ + b` for `x` of shape `[batch, in]` (or `[in]`), `w` of
    /// shape `[out, in]` and `b` of shape `[out]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (tx, tw, tb) = (self.value(x), self.value(w), self.value(b));
        let (rows, fin) = tx.dims2()?;
        let (fout, fin2) = rank2(tw, "linear")?;
        if fin != fin2 {
            return Err(Error::dim("linear", tx.shape(), tw.shape()));
        }
        if tb.shape() != [fout] {
            return Err(Error::dim("linear", tw.shape(), tb.shape()));
        }
        let mut data = mm_bt(tx.data(), tw.data(), rows, fin, fout);
        for row in data.chunks_mut(fout) {
            for (o, bias) in row.iter_mut().zip(tb.data()) {
                *o += bias;
            }
        }
        let shape = if tx.shape().len() == 1 {
            vec![fout]
        } else {
            vec![rows, fout]
        };
        let rg = self.rg(&[x, w, b]);
        self.push_checked("linear", Op::Linear { x, w, b }, Tensor::from_parts(shape, data), rg)
    }

    pub fn binary(&mut self, kind: BinaryKind, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let shape = broadcast_shape(ta, tb, "elementwise")?;
        let n: usize = shape.iter().product();
        let (da, db) = (ta.data(), tb.data());
        let (sa, sb) = (da.len() == 1, db.len() == 1);
        let mut out = Vec::with_capacity(n);
        for i in 0..n {
            let x = if sa { da[0] } else { da[i] };
            let y = if sb { db[0] } else { db[i] };
            out.push(match kind {
                BinaryKind::Add => x + y,
                BinaryKind::Sub => x - y,
                BinaryKind::Mul => x * y,
                BinaryKind::Div => {
                    if y == 0.0 {
                        return Err(Error::Domain {
                            op: "div",
                            detail: format!("division by zero at index {i}"),
                        });
                    }
                    x / y
                }
            });
        }
        let rg = self.rg(&[a, b]);
        self.push_checked("elementwise", Op::Binary(kind, a, b), Tensor::from_parts(shape, out), rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Mul, a, b)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Div, a, b)
    }

    pub fn unary(&mut self, kind: UnaryKind, a: Var) -> Result<Var> {
        let ta = self.value(a);
        if kind == UnaryKind::Log {
            if let Some(i) = ta.data().iter().position(|&v| v <= 0.0) {
                return Err(Error::Domain {
                    op: "log",
                    detail: format!("non-positive input {} at index {i}", ta.data()[i]),
                });
            }
        }
        let out = ta.map(|v| match kind {
            UnaryKind::Exp => v.exp(),
            UnaryKind::Log => v.ln(),
            UnaryKind::Tanh => v.tanh(),
            UnaryKind::Relu => v.max(0.0),
            UnaryKind::Square => v * v,
        });
        let rg = self.rg(&[a]);
        self.push_checked(unary_name(kind), Op::Unary(kind, a), out, rg)
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        self.unary(UnaryKind::Exp, a)
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        self.unary(UnaryKind::Log, a)
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.unary(UnaryKind::Tanh, a)
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.unary(UnaryKind::Relu, a)
    }

    pub fn square(&mut self, a: Var) -> Result<Var> {
        self.unary(UnaryKind::Square, a)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        let out = self.value(a).map(|v| c * v);
        let rg = self.rg(&[a]);
        self.push_checked("scale", Op::Scale(a, c), out, rg)
    }

    pub fn add_const(&mut self, a: Var, c: f64) -> Result<Var> {
        let out = self.value(a).map(|v| v + c);
        let rg = self.rg(&[a]);
        self.push_checked("add_const", Op::AddConst(a), out, rg)
    }

    /// Clamp into `[lo, hi]`; the gradient is zero where the input lies
    /// strictly outside the interval.
    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Result<Var> {
        if lo > hi {
            return Err(Error::contract(format!("clamp bounds [{lo}, {hi}]")));
        }
        let out = self.value(x).map(|v| v.clamp(lo, hi));
        let rg = self.rg(&[x]);
        self.push_checked("clamp", Op::Clamp { x, lo, hi }, out, rg)
    }

    /// Columns `start..start+len` along the last axis.
    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let tx = self.value(x);
        let (rows, cols) = tx.dims2()?;
        if start + len > cols || len == 0 {
            return Err(Error::contract(format!(
                "slice {start}..{} of {cols} columns",
                start + len
            )));
        }
        let mut data = Vec::with_capacity(rows * len);
        for r in 0..rows {
            data.extend_from_slice(&tx.data()[r * cols + start..r * cols + start + len]);
        }
        let shape = if tx.shape().len() == 1 {
            vec![len]
        } else {
            vec![rows, len]
        };
        let rg = self.rg(&[x]);
        self.push_checked("slice_cols", Op::SliceCols { x, start, len }, Tensor::from_parts(shape, data), rg)
    }

    /// Concatenation along the last axis; all parts need the same row count
    /// and rank.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::contract("concat of zero tensors"))?;
        let rank = self.value(*first).shape().len();
        let (rows, _) = self.value(*first).dims2()?;
        let mut widths = Vec::with_capacity(parts.len());
        for p in parts {
            let t = self.value(*p);
            let (r, c) = t.dims2()?;
            if r != rows || t.shape().len() != rank {
                return Err(Error::dim("concat_cols", self.value(*first).shape(), t.shape()));
            }
            widths.push(c);
        }
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (p, &w) in parts.iter().zip(&widths) {
                data.extend_from_slice(&self.value(*p).data()[r * w..(r + 1) * w]);
            }
        }
        let shape = if rank == 1 { vec![total] } else { vec![rows, total] };
        let rg = self.rg(parts);
        self.push_checked("concat_cols", Op::ConcatCols(parts.to_vec()), Tensor::from_parts(shape, data), rg)
    }

    /// Sum or mean over every element, accumulated in row-major order.
    pub fn reduce(&mut self, kind: ReduceKind, x: Var) -> Result<Var> {
        let tx = self.value(x);
        if tx.is_empty() {
            return Err(Error::Domain {
                op: "reduce",
                detail: "empty tensor".into(),
            });
        }
        let mut acc = 0.0;
        for v in tx.data() {
            acc += v;
        }
        if kind == ReduceKind::Mean {
            acc /= tx.len() as f64;
        }
        let rg = self.rg(&[x]);
        self.push_checked("reduce", Op::Reduce(kind, x), Tensor::scalar(acc), rg)
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        self.reduce(ReduceKind::Sum, x)
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        self.reduce(ReduceKind::Mean, x)
    }

    /// Back-propagates from a one-element `loss`, adding ∂loss/∂leaf into
    /// the gradient buffer of every tracked leaf. Calling it again without
    /// [`Graph::zero_grad`] accumulates.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).len() != 1 {
            return Err(Error::contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let n = loss.0 + 1;
        let mut adj: Vec<Option<Vec<f64>>> = vec![None; n];
        adj[loss.0] = Some(vec![1.0]);

        for i in (0..n).rev() {
            let Some(g) = adj[i].take() else { continue };
            if !self.nodes[i].requires_grad {
                continue;
            }
            if let Op::Leaf = self.nodes[i].op {
                let node = &mut self.nodes[i];
                match &mut node.grad {
                    Some(buf) => {
                        for (b, v) in buf.data_mut().iter_mut().zip(&g) {
                            *b += v;
                        }
                    }
                    None => node.grad = Some(Tensor::from_parts(node.value.shape().to_vec(), g)),
                }
                continue;
            }
            for (input, contrib) in self.local_grads(i, &g) {
                if !self.nodes[input.0].requires_grad {
                    continue;
                }
                match &mut adj[input.0] {
                    Some(buf) => {
                        for (b, v) in buf.iter_mut().zip(&contrib) {
                            *b += v;
                        }
                    }
                    slot => *slot = Some(contrib),
                }
            }
        }
        Ok(())
    }

    /// Vector-Jacobian products of node `i` for each of its inputs.
    fn local_grads(&self, i: usize, g: &[f64]) -> Vec<(Var, Vec<f64>)> {
        let node = &self.nodes[i];
        let out = node.value.data();
        match &node.op {
            Op::Leaf => Vec::new(),
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (r, k) = (ta.shape()[0], ta.shape()[1]);
                let c = tb.shape()[1];
                let mut res = Vec::with_capacity(2);
                if self.requires_grad(*a) {
                    res.push((*a, mm_bt(g, tb.data(), r, c, k)));
                }
                if self.requires_grad(*b) {
                    res.push((*b, mm_at(ta.data(), g, r, k, c)));
                }
                res
            }
            Op::Linear { x, w, b } => {
                let (tx, tw) = (self.value(*x), self.value(*w));
                let (rows, fin) = tx.dims2().expect("checked in forward");
                let fout = tw.shape()[0];
                let mut res = Vec::with_capacity(3);
                if self.requires_grad(*x) {
                    res.push((*x, mm(g, tw.data(), rows, fout, fin)));
                }
                if self.requires_grad(*w) {
                    res.push((*w, mm_at(g, tx.data(), rows, fout, fin)));
                }
                if self.requires_grad(*b) {
                    let mut db = vec![0.0; fout];
                    for row in g.chunks(fout) {
                        for (d, v) in db.iter_mut().zip(row) {
                            *d += v;
                        }
                    }
                    res.push((*b, db));
                }
                res
            }
            Op::Binary(kind, a, b) => {
                let (da, db) = (self.value(*a).data(), self.value(*b).data());
                let at = |d: &[f64], j: usize| if d.len() == 1 { d[0] } else { d[j] };
                let mut res = Vec::with_capacity(2);
                for (which, var, is_a) in [(0, *a, true), (1, *b, false)] {
                    if !self.requires_grad(var) {
                        continue;
                    }
                    let own_len = if which == 0 { da.len() } else { db.len() };
                    let mut buf = vec![0.0; own_len];
                    for (j, gj) in g.iter().enumerate() {
                        let (x, y) = (at(da, j), at(db, j));
                        let local = match (kind, is_a) {
                            (BinaryKind::Add, _) => 1.0,
                            (BinaryKind::Sub, true) => 1.0,
                            (BinaryKind::Sub, false) => -1.0,
                            (BinaryKind::Mul, true) => y,
                            (BinaryKind::Mul, false) => x,
                            (BinaryKind::Div, true) => 1.0 / y,
                            (BinaryKind::Div, false) => -x / (y * y),
                        };
                        let slot = if own_len == 1 { 0 } else { j };
                        buf[slot] += gj * local;
                    }
                    res.push((var, buf));
                }
                res
            }
            Op::Unary(kind, a) => {
                let da = self.value(*a).data();
                let grad = g
                    .iter()
                    .zip(da.iter().zip(out))
                    .map(|(gj, (&x, &y))| {
                        gj * match kind {
                            UnaryKind::Exp => y,
                            UnaryKind::Log => 1.0 / x,
                            UnaryKind::Tanh => 1.0 - y * y,
                            UnaryKind::Relu => {
                                if x > 0.0 {
                                    1.0
                                } else {
                                    0.0
                                }
                            }
                            UnaryKind::Square => 2.0 * x,
                        }
                    })
                    .collect();
                vec![(*a, grad)]
            }
            Op::Scale(a, c) => vec![(*a, g.iter().map(|v| v * c).collect())],
            Op::AddConst(a) => vec![(*a, g.to_vec())],
            Op::Clamp { x, lo, hi } => {
                let dx = self.value(*x).data();
                let grad = g
                    .iter()
                    .zip(dx)
                    .map(|(gj, v)| if v >= lo && v <= hi { *gj } else { 0.0 })
                    .collect();
                vec![(*x, grad)]
            }
            Op::SliceCols { x, start, len } => {
                let (rows, cols) = self.value(*x).dims2().expect("checked in forward");
                let mut buf = vec![0.0; rows * cols];
                for r in 0..rows {
                    buf[r * cols + start..r * cols + start + len]
                        .copy_from_slice(&g[r * len..(r + 1) * len]);
                }
                vec![(*x, buf)]
            }
            Op::ConcatCols(parts) => {
                let widths: Vec<usize> = parts
                    .iter()
                    .map(|p| self.value(*p).dims2().expect("checked in forward").1)
                    .collect();
                let total: usize = widths.iter().sum();
                let rows = g.len() / total;
                let mut offset = 0;
                let mut res = Vec::with_capacity(parts.len());
                for (p, w) in parts.iter().zip(&widths) {
                    if self.requires_grad(*p) {
                        let mut buf = Vec::with_capacity(rows * w);
                        for r in 0..rows {
                            buf.extend_from_slice(&g[r * total + offset..r * total + offset + w]);
                        }
                        res.push((*p, buf));
                    }
                    offset += w;
                }
                res
            }
            Op::Reduce(kind, x) => {
                let n = self.value(*x).len();
                let v = match kind {
                    ReduceKind::Sum => g[0],
                    ReduceKind::Mean => g[0] / n as f64,
                };
                vec![(*x, vec![v; n])]
            }
        }
    }
}

fn unary_name(kind: UnaryKind) -> &'static str {
    match kind {
        UnaryKind::Exp => "exp",
        UnaryKind::Log => "log",
        UnaryKind::Tanh => "tanh",
        UnaryKind::Relu => "relu",
        UnaryKind::Square => "square",
    }
}

fn rank2(t: &Tensor, op: &'static str) -> Result<(usize, usize)> {
    match t.shape() {
        [r, c] => Ok((*r, *c)),
        s => Err(Error::dim(op, s, &[0, 0])),
    }
}

fn broadcast_shape(a: &Tensor, b: &Tensor, op: &'static str) -> Result<Vec<usize>> {
    if a.shape() == b.shape() {
        Ok(a.shape().to_vec())
    } else if b.len() == 1 {
        Ok(a.shape().to_vec())
    } else if a.len() == 1 {
        Ok(b.shape().to_vec())
    } else {
        Err(Error::dim(op, a.shape(), b.shape()))
    }
}

/// `a[r×k] · b[k×c]`.
fn mm(a: &[f64], b: &[f64], r: usize, k: usize, c: usize) -> Vec<f64> {
    let mut out = vec![0.0; r * c];
    for i in 0..r {
        let row = &mut out[i * c..(i + 1) * c];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            for (o, bv) in row.iter_mut().zip(&b[p * c..(p + 1) * c]) {
                *o += av * bv;
            }
        }
    }
    out
}

/// `a[r×k] · b[c×k]ᵀ`.
fn mm_bt(a: &[f64], b: &[f64], r: usize, k: usize, c: usize) -> Vec<f64> {
    let mut out = vec![0.0; r * c];
    for i in 0..r {
        let ar = &a[i * k..(i + 1) * k];
        for j in 0..c {
            let br = &b[j * k..(j + 1) * k];
            let mut acc = 0.0;
            for (x, y) in ar.iter().zip(br) {
                acc += x * y;
            }
            out[i * c + j] = acc;
        }
    }
    out
}

/// `a[r×k]ᵀ · b[r×c]`, a `k×c` result.
fn mm_at(a: &[f64], b: &[f64], r: usize, k: usize, c: usize) -> Vec<f64> {
    let mut out = vec![0.0; k * c];
    for i in 0..r {
        let br = &b[i * c..(i + 1) * c];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            for (o, bv) in out[p * c..(p + 1) * c].iter_mut().zip(br) {
                *o += av * bv;
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(r: usize, c: usize, v: &[f64]) -> Tensor {
        Tensor::matrix(r, c, v.to_vec()).unwrap()
    }

    #[test]
    fn matmul_examples() {
        let mut g = Graph::new();
        let i2 = g.constant(Tensor::identity(2));
        let a = g.constant(m(2, 2, &[1.0, 2.0, 3.0, 4.0]));
        let p = g.matmul(i2, a).unwrap();
        assert_eq!(g.value(p).data(), &[1.0, 2.0, 3.0, 4.0]);

        let x = g.constant(m(1, 1, &[2.0]));
        let y = g.constant(m(1, 1, &[3.0]));
        let p = g.matmul(x, y).unwrap();
        assert_eq!(g.value(p).data(), &[6.0]);

        let b = g.constant(m(2, 2, &[5.0, 6.0, 7.0, 8.0]));
        let p = g.matmul(a, b).unwrap();
        assert_eq!(g.value(p).data(), &[19.0, 22.0, 43.0, 50.0]);
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::zeros(&[2, 3]));
        let b = g.constant(Tensor::zeros(&[2, 3]));
        let err = g.matmul(a, b).unwrap_err().to_string();
        assert!(err.contains("[2, 3]"), "{err}");
    }

    #[test]
    fn elementwise_examples() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::vector(vec![-1.0, 0.0, 2.0]).unwrap());
        let r = g.relu(x).unwrap();
        assert_eq!(g.value(r).data(), &[0.0, 0.0, 2.0]);

        let z = g.constant(Tensor::vector(vec![0.0]).unwrap());
        let e = g.exp(z).unwrap();
        assert_eq!(g.value(e).data(), &[1.0]);

        // tanh(0.5) = (e - 1) / (e + 1) with e = exp(1).
        let h = g.constant(Tensor::vector(vec![0.5]).unwrap());
        let t = g.tanh(h).unwrap();
        let e1 = 1f64.exp();
        assert!((g.value(t).data()[0] - (e1 - 1.0) / (e1 + 1.0)).abs() < 1e-15);
        assert!((g.value(t).data()[0] - 0.462_117_157_260_009_8).abs() < 1e-15);
    }

    #[test]
    fn log_of_non_positive_is_domain_error() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::vector(vec![1.0, 0.0]).unwrap());
        assert!(matches!(g.log(x), Err(Error::Domain { .. })));
    }

    #[test]
    fn reductions() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::vector(vec![1.0, 2.0, 3.0]).unwrap());
        let mu = g.mean(x).unwrap();
        assert_eq!(g.value(mu).item().unwrap(), 2.0);
        let ones = g.constant(Tensor::full(&[4, 4], 1.0));
        let mu = g.mean(ones).unwrap();
        assert_eq!(g.value(mu).item().unwrap(), 1.0);
        let empty = g.constant(Tensor::vector(vec![]).unwrap());
        assert!(g.sum(empty).is_err());
    }

    #[test]
    fn backward_of_sum_of_squares() {
        let mut g = Graph::new();
        let x = g.param(Tensor::vector(vec![1.0, -2.0]).unwrap());
        let sq = g.square(x).unwrap();
        let loss = g.sum(sq).unwrap();
        g.backward(loss).unwrap();
        assert_eq!(g.grad(x).unwrap().data(), &[2.0, -4.0]);
        // accumulation on a second call
        g.backward(loss).unwrap();
        assert_eq!(g.grad(x).unwrap().data(), &[4.0, -8.0]);
        g.zero_grad();
        assert!(g.grad(x).is_none());
    }

    #[test]
    fn constant_loss_gives_zero_grads() {
        let mut g = Graph::new();
        let p = g.param(Tensor::vector(vec![1.0, 2.0]).unwrap());
        let c = g.scalar(3.0);
        g.backward(c).unwrap();
        assert_eq!(g.grad_or_zeros(p).data(), &[0.0, 0.0]);
    }

    #[test]
    fn non_scalar_backward_is_rejected() {
        let mut g = Graph::new();
        let p = g.param(Tensor::vector(vec![1.0, 2.0]).unwrap());
        assert!(matches!(g.backward(p), Err(Error::Contract(_))));
    }

    #[test]
    fn scalar_broadcast_gradient_sums() {
        let mut g = Graph::new();
        let s = g.param(Tensor::scalar(2.0));
        let x = g.constant(Tensor::vector(vec![1.0, 2.0, 3.0]).unwrap());
        let y = g.mul(s, x).unwrap();
        let loss = g.sum(y).unwrap();
        g.backward(loss).unwrap();
        assert_eq!(g.grad(s).unwrap().data(), &[6.0]);
    }

    #[test]
    fn detach_blocks_gradient() {
        let mut g = Graph::new();
        let x = g.param(Tensor::vector(vec![3.0]).unwrap());
        let d = g.detach(x);
        let y = g.mul(x, d).unwrap();
        let loss = g.sum(y).unwrap();
        g.backward(loss).unwrap();
        assert_eq!(g.grad(x).unwrap().data(), &[3.0]);
    }

    #[test]
    fn linear_matches_matmul_plus_bias() {
        let mut g = Graph::new();
        let x = g.constant(m(2, 3, &[1.0, 2.0, 3.0, -1.0, 0.5, 0.0]));
        let w = g.constant(m(2, 3, &[0.1, 0.2, 0.3, -0.4, 0.5, 0.6]));
        let b = g.constant(Tensor::vector(vec![1.0, -1.0]).unwrap());
        let y = g.linear(x, w, b).unwrap();
        assert_eq!(g.value(y).shape(), &[2, 2]);
        let want = [1.0 + 0.1 + 0.4 + 0.9, -1.0 - 0.4 + 1.0 + 1.8, 1.0 - 0.1 + 0.1, -1.0 + 0.4 + 0.25];
        for (a, b) in g.value(y).data().iter().zip(want) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn slice_and_concat_are_inverse() {
        let mut g = Graph::new();
        let x = g.param(m(2, 4, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0]));
        let a = g.slice_cols(x, 0, 1).unwrap();
        let b = g.slice_cols(x, 1, 3).unwrap();
        let y = g.concat_cols(&[a, b]).unwrap();
        assert_eq!(g.value(y), g.value(x));
        let loss = g.sum(b).unwrap();
        g.backward(loss).unwrap();
        assert_eq!(g.grad(x).unwrap().data(), &[0.0, 1.0, 1.0, 1.0, 0.0, 1.0, 1.0, 1.0]);
    }
}
