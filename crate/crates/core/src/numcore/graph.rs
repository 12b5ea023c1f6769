//! Tape-based reverse-mode automatic differentiation over dense tensors.
//!
//! A [`Graph`] records every primitive in evaluation order, so node indices
//! are already a topological order. [`Graph::backward`] walks the tape in
//! reverse, accumulating vector-Jacobian products into each input that
//! requires a gradient. Leaves created with [`Graph::param`] require
//! gradients; leaves created with [`Graph::constant`] do not, and whole
//! subgraphs built only from constants skip gradient work entirely.

use super::scalar::{matmul_acc, matmul_nt_acc, matmul_tn_acc};
use super::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op<S> {
    Leaf,
    MatMul(NodeId, NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    AddBias(NodeId, NodeId),
    Sigmoid(NodeId),
    Tanh(NodeId),
    Exp(NodeId),
    Log(NodeId),
    Neg(NodeId),
    Square(NodeId),
    Scale(NodeId, S),
    AddScalar(NodeId, S),
    Clamp(NodeId, S, S),
    SquaredError(NodeId, NodeId),
    Sum(NodeId),
    Mean(NodeId),
    SumRows(NodeId),
    MeanRows(NodeId),
    Concat(Vec<NodeId>, usize),
    Slice(NodeId, usize, usize, usize),
    Reshape(NodeId),
}

impl<S> Op<S> {
    fn inputs(&self) -> Vec<NodeId> {
        use Op::*;
        match self {
            Leaf => vec![],
            MatMul(a, b)
            | Add(a, b)
            | Sub(a, b)
            | Mul(a, b)
            | AddBias(a, b)
            | SquaredError(a, b) => vec![*a, *b],
            Sigmoid(a)
            | Tanh(a)
            | Exp(a)
            | Log(a)
            | Neg(a)
            | Square(a)
            | Scale(a, _)
            | AddScalar(a, _)
            | Clamp(a, _, _)
            | Sum(a)
            | Mean(a)
            | SumRows(a)
            | MeanRows(a)
            | Slice(a, ..)
            | Reshape(a) => vec![*a],
            Concat(xs, _) => xs.clone(),
        }
    }
}

struct Node<S> {
    value: Tensor<S>,
    op: Op<S>,
    requires_grad: bool,
}

/// Gradients produced by [`Graph::backward`], indexed by node.
///
/// Only leaf gradients are retained; interior gradients are released as
/// soon as they have been propagated.
pub struct Gradients<S> {
    grads: Vec<Option<Tensor<S>>>,
}

impl<S: Scalar> Gradients<S> {
    pub fn get(&self, id: NodeId) -> Option<&Tensor<S>> {
        self.grads.get(id.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, id: NodeId) -> Option<Tensor<S>> {
        self.grads.get_mut(id.0).and_then(Option::take)
    }
}

/// Recording tape of tensor operations.
pub struct Graph<S> {
    nodes: Vec<Node<S>>,
    checked: bool,
}

impl<S: Scalar> Default for Graph<S> {
    fn default() -> Self {
        Self::new()
    }
}

fn shape_err(op: &str, a: &[usize], b: &[usize]) -> Error {
    Error::Shape(format!("{op}: incompatible shapes {a:?} and {b:?}"))
}

fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

impl<S: Scalar> Graph<S> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            checked: false,
        }
    }

    /// A graph that rejects any primitive producing NaN or infinity.
    pub fn checked() -> Self {
        Self {
            nodes: Vec::new(),
            checked: true,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor<S> {
        &self.nodes[id.0].value
    }

    pub fn shape(&self, id: NodeId) -> &[usize] {
        self.nodes[id.0].value.shape()
    }

    pub fn requires_grad(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    pub fn param(&mut self, value: Tensor<S>) -> NodeId {
        self.push_leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor<S>) -> NodeId {
        self.push_leaf(value, false)
    }

    /// A constant copy of `id`'s current value; gradients stop here.
    pub fn detach(&mut self, id: NodeId) -> NodeId {
        let v = self.value(id).clone();
        self.constant(v)
    }

    fn push_leaf(&mut self, value: Tensor<S>, requires_grad: bool) -> NodeId {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn push(&mut self, value: Tensor<S>, op: Op<S>, name: &str) -> Result<NodeId> {
        if self.checked {
            value.check_finite(name)?;
        }
        let requires_grad = op.inputs().iter().any(|i| self.nodes[i.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(NodeId(self.nodes.len() - 1))
    }

    fn dims2(&self, id: NodeId, op: &str) -> Result<(usize, usize)> {
        match self.shape(id) {
            [r, c] => Ok((*r, *c)),
            s => Err(Error::Shape(format!(
                "{op}: expected a matrix, got shape {s:?}"
            ))),
        }
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (m, k) = self.dims2(a, "matmul")?;
        let (k2, n) = self.dims2(b, "matmul")?;
        if k != k2 {
            return Err(shape_err("matmul", self.shape(a), self.shape(b)));
        }
        let mut out = vec![S::zero(); m * n];
        matmul_acc(
            self.value(a).data(),
            self.value(b).data(),
            &mut out,
            m,
            k,
            n,
        );
        let t = Tensor::new(&[m, n], out)?;
        self.push(t, Op::MatMul(a, b), "matmul")
    }

    fn zip(
        &mut self,
        a: NodeId,
        b: NodeId,
        name: &str,
        f: impl Fn(S, S) -> S,
    ) -> Result<Tensor<S>> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(shape_err(name, va.shape(), vb.shape()));
        }
        let data = va
            .data()
            .iter()
            .zip(vb.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        Tensor::new(va.shape(), data)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let t = self.zip(a, b, "add", |x, y| x + y)?;
        self.push(t, Op::Add(a, b), "add")
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let t = self.zip(a, b, "sub", |x, y| x - y)?;
        self.push(t, Op::Sub(a, b), "sub")
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let t = self.zip(a, b, "mul", |x, y| x * y)?;
        self.push(t, Op::Mul(a, b), "mul")
    }

    /// Adds `bias` (length = trailing size of `x`) to every row of `x`.
    pub fn add_bias(&mut self, x: NodeId, bias: NodeId) -> Result<NodeId> {
        let (vx, vb) = (self.value(x), self.value(bias));
        let cols = *vx.shape().last().unwrap_or(&0);
        if vx.shape().len() < 2 || vb.len() != cols {
            return Err(shape_err("add_bias", vx.shape(), vb.shape()));
        }
        let b = vb.data();
        let mut t = vx.clone();
        for row in t.data_mut().chunks_exact_mut(cols) {
            for (v, &w) in row.iter_mut().zip(b) {
                *v = *v + w;
            }
        }
        self.push(t, Op::AddBias(x, bias), "add_bias")
    }

    fn unary(&mut self, a: NodeId, op: Op<S>, name: &str, f: impl Fn(S) -> S) -> Result<NodeId> {
        let t = self.value(a).map(f);
        self.push(t, op, name)
    }

    pub fn sigmoid(&mut self, a: NodeId) -> Result<NodeId> {
        self.unary(a, Op::Sigmoid(a), "sigmoid", S::sigmoid)
    }

    pub fn tanh(&mut self, a: NodeId) -> Result<NodeId> {
        self.unary(a, Op::Tanh(a), "tanh", |x| x.tanh())
    }

    pub fn exp(&mut self, a: NodeId) -> Result<NodeId> {
        self.unary(a, Op::Exp(a), "exp", |x| x.exp())
    }

    pub fn log(&mut self, a: NodeId) -> Result<NodeId> {
        self.unary(a, Op::Log(a), "log", |x| x.ln())
    }

    pub fn neg(&mut self, a: NodeId) -> Result<NodeId> {
        self.unary(a, Op::Neg(a), "neg", |x| -x)
    }

    pub fn square(&mut self, a: NodeId) -> Result<NodeId> {
        self.unary(a, Op::Square(a), "square", |x| x * x)
    }

    pub fn scale(&mut self, a: NodeId, k: S) -> Result<NodeId> {
        self.unary(a, Op::Scale(a, k), "scale", |x| x * k)
    }

    pub fn add_scalar(&mut self, a: NodeId, k: S) -> Result<NodeId> {
        self.unary(a, Op::AddScalar(a, k), "add_scalar", |x| x + k)
    }

    /// Elementwise clamp; the gradient passes only where `lo <= x <= hi`.
    pub fn clamp(&mut self, a: NodeId, lo: S, hi: S) -> Result<NodeId> {
        self.unary(a, Op::Clamp(a, lo, hi), "clamp", |x| x.max(lo).min(hi))
    }

    /// `Σ (a − b)²` as a scalar, without materializing the difference.
    pub fn squared_error(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(shape_err("squared_error", va.shape(), vb.shape()));
        }
        let s = va
            .data()
            .iter()
            .zip(vb.data())
            .fold(S::zero(), |acc, (&x, &y)| acc + (x - y) * (x - y));
        self.push(Tensor::scalar(s), Op::SquaredError(a, b), "squared_error")
    }

    pub fn sum(&mut self, a: NodeId) -> Result<NodeId> {
        let t = Tensor::scalar(self.value(a).sum());
        self.push(t, Op::Sum(a), "sum")
    }

    pub fn mean(&mut self, a: NodeId) -> Result<NodeId> {
        let v = self.value(a);
        let t = Tensor::scalar(v.sum() / S::of(v.len() as f64));
        self.push(t, Op::Mean(a), "mean")
    }

    fn reduce_rows(&self, a: NodeId) -> Tensor<S> {
        let v = self.value(a);
        let cols = v.cols();
        let mut out = vec![S::zero(); cols];
        for row in v.data().chunks(cols) {
            for (o, &x) in out.iter_mut().zip(row) {
                *o = *o + x;
            }
        }
        Tensor::new(&[1, cols], out).expect("row reduction shape")
    }

    /// Sum over the leading axis, producing a `[1, cols]` row.
    pub fn sum_rows(&mut self, a: NodeId) -> Result<NodeId> {
        self.dims2(a, "sum_rows")?;
        let t = self.reduce_rows(a);
        self.push(t, Op::SumRows(a), "sum_rows")
    }

    /// Mean over the leading axis, producing a `[1, cols]` row.
    pub fn mean_rows(&mut self, a: NodeId) -> Result<NodeId> {
        self.dims2(a, "mean_rows")?;
        let n = S::of(self.value(a).rows() as f64);
        let t = self.reduce_rows(a).map(|x| x / n);
        self.push(t, Op::MeanRows(a), "mean_rows")
    }

    pub fn concat(&mut self, xs: &[NodeId], axis: usize) -> Result<NodeId> {
        let first = xs
            .first()
            .ok_or_else(|| Error::Shape("concat: no inputs".into()))?;
        let base = self.shape(*first).to_vec();
        if axis >= base.len() {
            return Err(Error::Shape(format!(
                "concat: axis {axis} out of range for {base:?}"
            )));
        }
        let mut total = 0;
        for &x in xs {
            let s = self.shape(x);
            let compatible = s.len() == base.len()
                && s.iter()
                    .zip(&base)
                    .enumerate()
                    .all(|(d, (p, q))| d == axis || p == q);
            if !compatible {
                return Err(shape_err("concat", &base, s));
            }
            total += s[axis];
        }
        let mut shape = base.clone();
        shape[axis] = total;
        let (outer, _, inner) = split_axis(&shape, axis);
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &x in xs {
                let v = self.value(x);
                let block = v.shape()[axis] * inner;
                data.extend_from_slice(&v.data()[o * block..(o + 1) * block]);
            }
        }
        let t = Tensor::new(&shape, data)?;
        self.push(t, Op::Concat(xs.to_vec(), axis), "concat")
    }

    /// `len` entries starting at `start` along `axis`.
    pub fn slice(&mut self, a: NodeId, axis: usize, start: usize, len: usize) -> Result<NodeId> {
        let s = self.shape(a).to_vec();
        if axis >= s.len() || len == 0 || start + len > s[axis] {
            return Err(Error::Shape(format!(
                "slice: range {start}..{} on axis {axis} out of bounds for {s:?}",
                start + len
            )));
        }
        let (outer, dim, inner) = split_axis(&s, axis);
        let v = self.value(a).data();
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = o * dim * inner + start * inner;
            data.extend_from_slice(&v[base..base + len * inner]);
        }
        let mut shape = s;
        shape[axis] = len;
        let t = Tensor::new(&shape, data)?;
        self.push(t, Op::Slice(a, axis, start, len), "slice")
    }

    pub fn reshape(&mut self, a: NodeId, shape: &[usize]) -> Result<NodeId> {
        let t = self.value(a).clone().reshape(shape)?;
        self.push(t, Op::Reshape(a), "reshape")
    }

    /// Reverse pass from a scalar `loss`.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients<S>> {
        let lv = self.value(loss);
        if !lv.is_scalar() {
            return Err(Error::Shape(format!(
                "backward: loss must be scalar, got shape {:?}",
                lv.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor<S>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::full(lv.shape(), S::one()));
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(idx, &g, &mut grads);
        }
        Ok(Gradients { grads })
    }

    /// Gradient of every leaf, or zeros when the leaf is unreachable.
    pub fn grad_or_zeros(&self, grads: &Gradients<S>, id: NodeId) -> Tensor<S> {
        grads
            .get(id)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(self.shape(id)))
    }

    fn accumulate(&self, grads: &mut [Option<Tensor<S>>], id: NodeId, g: Tensor<S>) {
        if !self.nodes[id.0].requires_grad {
            return;
        }
        match &mut grads[id.0] {
            Some(acc) => acc.add_assign(&g),
            slot => *slot = Some(g),
        }
    }

    fn accumulate_with(
        &self,
        grads: &mut [Option<Tensor<S>>],
        id: NodeId,
        f: impl FnOnce(&mut [S]),
    ) {
        if !self.nodes[id.0].requires_grad {
            return;
        }
        let slot = &mut grads[id.0];
        let acc = slot.get_or_insert_with(|| Tensor::zeros(self.nodes[id.0].value.shape()));
        f(acc.data_mut());
    }

    fn propagate(&self, idx: usize, g: &Tensor<S>, grads: &mut [Option<Tensor<S>>]) {
        let node = &self.nodes[idx];
        let out = &node.value;
        let gd = g.data();
        // gradient of an elementwise op: f(upstream, other operand)
        fn ew<S: Scalar>(
            gd: &[S],
            other: &[S],
            shape: &[usize],
            f: impl Fn(S, S) -> S,
        ) -> Tensor<S> {
            let data = gd.iter().zip(other).map(|(&g, &x)| f(g, x)).collect();
            Tensor::new(shape, data).expect("elementwise gradient shape")
        }
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = (self.value(*a).rows(), self.value(*a).cols());
                let n = self.value(*b).cols();
                let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                // dA = G·Bᵀ, dB = Aᵀ·G
                self.accumulate_with(grads, *a, |acc| matmul_nt_acc(gd, vb, acc, m, n, k));
                self.accumulate_with(grads, *b, |acc| matmul_tn_acc(va, gd, acc, m, k, n));
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.map(|x| -x));
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                if self.requires_grad(*a) {
                    let t = ew(gd, vb, g.shape(), |gi, y| gi * y);
                    self.accumulate(grads, *a, t);
                }
                if self.requires_grad(*b) {
                    let t = ew(gd, va, g.shape(), |gi, x| gi * x);
                    self.accumulate(grads, *b, t);
                }
            }
            Op::AddBias(x, bias) => {
                self.accumulate(grads, *x, g.clone());
                let cols = self.value(*bias).len();
                self.accumulate_with(grads, *bias, |acc| {
                    for row in gd.chunks(cols) {
                        for (o, &v) in acc.iter_mut().zip(row) {
                            *o = *o + v;
                        }
                    }
                });
            }
            Op::Sigmoid(a) => {
                let y = out.data();
                let t = ew(gd, y, g.shape(), |gi, y| gi * y * (S::one() - y));
                self.accumulate(grads, *a, t);
            }
            Op::Tanh(a) => {
                let y = out.data();
                let t = ew(gd, y, g.shape(), |gi, y| gi * (S::one() - y * y));
                self.accumulate(grads, *a, t);
            }
            Op::Exp(a) => {
                let y = out.data();
                let t = ew(gd, y, g.shape(), |gi, y| gi * y);
                self.accumulate(grads, *a, t);
            }
            Op::Log(a) => {
                let x = self.value(*a).data();
                let t = ew(gd, x, g.shape(), |gi, x| gi / x);
                self.accumulate(grads, *a, t);
            }
            Op::Neg(a) => self.accumulate(grads, *a, g.map(|x| -x)),
            Op::Square(a) => {
                let x = self.value(*a).data();
                let two = S::of(2.0);
                let t = ew(gd, x, g.shape(), |gi, x| two * x * gi);
                self.accumulate(grads, *a, t);
            }
            Op::Scale(a, k) => {
                let k = *k;
                self.accumulate(grads, *a, g.map(|x| x * k));
            }
            Op::AddScalar(a, _) | Op::Reshape(a) => {
                let t = Tensor::new(self.shape(*a), gd.to_vec()).expect("same element count");
                self.accumulate(grads, *a, t);
            }
            Op::Clamp(a, lo, hi) => {
                let x = self.value(*a).data();
                let (lo, hi) = (*lo, *hi);
                let t = ew(gd, x, g.shape(), |gi, x| {
                    if x >= lo && x <= hi {
                        gi
                    } else {
                        S::zero()
                    }
                });
                self.accumulate(grads, *a, t);
            }
            Op::SquaredError(a, b) => {
                let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                let k = S::of(2.0) * gd[0];
                let shape = self.shape(*a);
                if self.requires_grad(*a) {
                    self.accumulate(grads, *a, ew(va, vb, shape, |x, y| k * (x - y)));
                }
                if self.requires_grad(*b) {
                    self.accumulate(grads, *b, ew(va, vb, shape, |x, y| k * (y - x)));
                }
            }
            Op::Sum(a) => {
                let t = Tensor::full(self.shape(*a), gd[0]);
                self.accumulate(grads, *a, t);
            }
            Op::Mean(a) => {
                let n = S::of(self.value(*a).len() as f64);
                let t = Tensor::full(self.shape(*a), gd[0] / n);
                self.accumulate(grads, *a, t);
            }
            Op::SumRows(a) | Op::MeanRows(a) => {
                let va = self.value(*a);
                let scale = if matches!(node.op, Op::MeanRows(_)) {
                    S::one() / S::of(va.rows() as f64)
                } else {
                    S::one()
                };
                let cols = va.cols();
                self.accumulate_with(grads, *a, |acc| {
                    for row in acc.chunks_mut(cols) {
                        for (o, &v) in row.iter_mut().zip(gd) {
                            *o = *o + v * scale;
                        }
                    }
                });
            }
            Op::Concat(xs, axis) => {
                let (outer, total, inner) = split_axis(out.shape(), *axis);
                let mut offset = 0;
                for &x in xs {
                    let d = self.shape(x)[*axis];
                    let block = d * inner;
                    self.accumulate_with(grads, x, |acc| {
                        for o in 0..outer {
                            let src = &gd[o * total * inner + offset * inner..][..block];
                            for (a, &v) in acc[o * block..(o + 1) * block].iter_mut().zip(src) {
                                *a = *a + v;
                            }
                        }
                    });
                    offset += d;
                }
            }
            Op::Slice(a, axis, start, len) => {
                let (outer, dim, inner) = split_axis(self.shape(*a), *axis);
                let (start, len) = (*start, *len);
                self.accumulate_with(grads, *a, |acc| {
                    for o in 0..outer {
                        let dst = &mut acc[o * dim * inner + start * inner..][..len * inner];
                        let src = &gd[o * len * inner..(o + 1) * len * inner];
                        for (d, &v) in dst.iter_mut().zip(src) {
                            *d = *d + v;
                        }
                    }
                });
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], v: &[f64]) -> Tensor<f64> {
        Tensor::from_f64(shape, v).unwrap()
    }

    #[test]
    fn matmul_hand_value() {
        let mut g = Graph::new();
        let a = g.constant(t(&[2, 2], &[1., 2., 3., 4.]));
        let b = g.constant(t(&[2, 1], &[1., 1.]));
        let c = g.matmul(a, b).unwrap();
        assert_eq!(g.value(c).data(), &[3.0, 7.0]);
        assert_eq!(g.shape(c), &[2, 1]);
    }

    #[test]
    fn matmul_shape_error_names_primitive_and_shapes() {
        let mut g = Graph::<f64>::new();
        let a = g.constant(Tensor::zeros(&[2, 3]));
        let b = g.constant(Tensor::zeros(&[2, 3]));
        let msg = g.matmul(a, b).unwrap_err().to_string();
        assert!(msg.contains("matmul") && msg.contains("[2, 3]"), "{msg}");
        let c = g_const(&mut g, &[3, 2]);
        let msg = g.add(a, c).unwrap_err().to_string();
        assert!(msg.contains("add") && msg.contains("[3, 2]"), "{msg}");
    }

    fn g_const(g: &mut Graph<f64>, shape: &[usize]) -> NodeId {
        g.constant(Tensor::zeros(shape))
    }

    #[test]
    fn sigmoid_value_and_slope_at_zero() {
        let mut g = Graph::new();
        let x = g.param(Tensor::scalar(0.0));
        let y = g.sigmoid(x).unwrap();
        assert_eq!(g.value(y).item(), 0.5);
        let grads = g.backward(y).unwrap();
        assert_eq!(grads.get(x).unwrap().item(), 0.25);
    }

    #[test]
    fn sum_of_ones() {
        let mut g = Graph::new();
        let x = g.param(Tensor::full(&[2, 3], 1.0));
        let s = g.sum(x).unwrap();
        assert_eq!(g.value(s).item(), 6.0);
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.get(x).unwrap(), &Tensor::full(&[2, 3], 1.0));
    }

    #[test]
    fn square_derivative() {
        let mut g = Graph::new();
        let x = g.param(Tensor::scalar(3.0));
        let y = g.square(x).unwrap();
        let grads = g.backward(y).unwrap();
        assert_eq!(grads.get(x).unwrap().item(), 6.0);
    }

    #[test]
    fn disconnected_param_has_zero_gradient() {
        let mut g = Graph::new();
        let x = g.param(Tensor::scalar(3.0));
        let unused = g.param(t(&[2], &[1.0, 2.0]));
        let y = g.square(x).unwrap();
        let grads = g.backward(y).unwrap();
        assert!(grads.get(unused).is_none());
        assert_eq!(g.grad_or_zeros(&grads, unused), Tensor::zeros(&[2]));
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut g = Graph::new();
        let x = g.param(t(&[2], &[1.0, 2.0]));
        let y = g.square(x).unwrap();
        assert!(g.backward(y).is_err());
    }

    #[test]
    fn constants_get_no_gradient() {
        let mut g = Graph::new();
        let c = g.constant(Tensor::scalar(2.0));
        let x = g.param(Tensor::scalar(3.0));
        let y = g.mul(c, x).unwrap();
        assert!(!g.requires_grad(c));
        let grads = g.backward(y).unwrap();
        assert!(grads.get(c).is_none());
        assert_eq!(grads.get(x).unwrap().item(), 2.0);
    }

    #[test]
    fn checked_graph_rejects_nan() {
        let mut g = Graph::checked();
        let x = g.param(Tensor::scalar(-1.0));
        assert!(matches!(g.log(x), Err(Error::NonFinite(_))));
        let mut g = Graph::new();
        let x = g.param(Tensor::scalar(-1.0));
        assert!(g.log(x).is_ok());
    }

    #[test]
    fn concat_and_slice_round_trip() {
        let mut g = Graph::new();
        let a = g.param(t(&[2, 2], &[1., 2., 3., 4.]));
        let b = g.param(t(&[2, 1], &[5., 6.]));
        let c = g.concat(&[a, b], 1).unwrap();
        assert_eq!(g.value(c).data(), &[1., 2., 5., 3., 4., 6.]);
        let s = g.slice(c, 1, 1, 2).unwrap();
        assert_eq!(g.value(s).data(), &[2., 5., 4., 6.]);
        let r = g.slice(c, 0, 1, 1).unwrap();
        assert_eq!(g.value(r).data(), &[3., 4., 6.]);
        assert!(g.slice(c, 1, 2, 2).is_err());
    }

    #[test]
    fn clamp_blocks_gradient_outside_range() {
        let mut g = Graph::new();
        let x = g.param(t(&[3], &[-20.0, 0.0, 9.0]));
        let c = g.clamp(x, -10.0, 4.0).unwrap();
        assert_eq!(g.value(c).data(), &[-10.0, 0.0, 4.0]);
        let s = g.sum(c).unwrap();
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[0.0, 1.0, 0.0]);
    }
}
