//! Dynamic reverse-mode tape.
//!
//! Every operation appends a node holding its forward value and the indices
//! of its operands, so node order is a topological order by construction.
//! [`Graph::backward`] replays the tape in reverse and accumulates
//! vector-Jacobian products into per-node gradient buffers.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{contract, dim, Result};
use crate::math;
use crate::tensor::Tensor;

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UnaryOp {
    Tanh,
    Sigmoid,
    /// Derivative at zero is zero.
    Relu,
    /// Subgradient at zero is zero.
    Abs,
    Square,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(usize, usize),
    Binary(BinaryOp, usize, usize),
    Unary(UnaryOp, usize),
    Affine { x: usize, scale: f64 },
    LnClamped { x: usize, floor: f64 },
    Softmax(usize),
    Sum(usize),
    Gather { x: usize, index: Vec<usize> },
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Operation record for one forward computation.
#[derive(Debug, Default, Clone)]
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

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn scalar(&mut self, value: f64) -> Var {
        self.constant(Tensor::scalar(value))
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

    /// Gradient of the last `backward` root with respect to `v`, if `v`
    /// requires a gradient and was reached.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Like [`Graph::grad`] but yields zeros for unreached nodes.
    pub fn grad_or_zeros(&self, v: Var) -> Vec<f64> {
        self.grad(v)
            .map(<[f64]>::to_vec)
            .unwrap_or_else(|| vec![0.0; self.value(v).numel()])
    }

    fn rg(&self, a: usize) -> bool {
        self.nodes[a].requires_grad
    }

    /// Matrix product. `b` may be a matrix `[k, n]` or a vector `[k]`, in
    /// which case the result is a vector `[m]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        let (m, k) = match *sa {
            [m, k] => (m, k),
            _ => return Err(dim("matmul", sa, sb)),
        };
        let (kb, n, out_shape) = match *sb {
            [kb, n] => (kb, n, vec![m, n]),
            [kb] => (kb, 1, vec![m]),
            _ => return Err(dim("matmul", sa, sb)),
        };
        if k != kb {
            return Err(dim("matmul", sa, sb));
        }
        let ad = self.value(a).data();
        let bd = self.value(b).data();
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let row = &ad[i * k..(i + 1) * k];
            for j in 0..n {
                let mut acc = 0.0;
                for (p, &av) in row.iter().enumerate() {
                    acc += av * bd[p * n + j];
                }
                out[i * n + j] = acc;
            }
        }
        let rg = self.rg(a.0) || self.rg(b.0);
        Ok(self.push(Tensor::from_raw(out_shape, out), Op::MatMul(a.0, b.0), rg))
    }

    pub fn binary(&mut self, op: BinaryOp, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let f = |x: f64, y: f64| match op {
            BinaryOp::Add => x + y,
            BinaryOp::Sub => x - y,
            BinaryOp::Mul => x * y,
        };
        let value = if ta.shape() == tb.shape() {
            let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
            Tensor::from_raw(ta.shape().to_vec(), data)
        } else if tb.numel() == 1 {
            let y = tb.data()[0];
            Tensor::from_raw(ta.shape().to_vec(), ta.data().iter().map(|&x| f(x, y)).collect())
        } else if ta.numel() == 1 {
            let x = ta.data()[0];
            Tensor::from_raw(tb.shape().to_vec(), tb.data().iter().map(|&y| f(x, y)).collect())
        } else {
            let name = match op {
                BinaryOp::Add => "add",
                BinaryOp::Sub => "sub",
                BinaryOp::Mul => "mul",
            };
            return Err(dim(name, ta.shape(), tb.shape()));
        };
        let rg = self.rg(a.0) || self.rg(b.0);
        Ok(self.push(value, Op::Binary(op, a.0, b.0), rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryOp::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryOp::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryOp::Mul, a, b)
    }

    pub fn unary(&mut self, op: UnaryOp, x: Var) -> Var {
        let t = self.value(x);
        let f: fn(f64) -> f64 = match op {
            UnaryOp::Tanh => math::tanh,
            UnaryOp::Sigmoid => math::sigmoid,
            UnaryOp::Relu => |v| if v > 0.0 { v } else { 0.0 },
            UnaryOp::Abs => f64::abs,
            UnaryOp::Square => |v| v * v,
        };
        let value = Tensor::from_raw(t.shape().to_vec(), t.data().iter().map(|&v| f(v)).collect());
        let rg = self.rg(x.0);
        self.push(value, Op::Unary(op, x.0), rg)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(UnaryOp::Tanh, x)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(UnaryOp::Sigmoid, x)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(UnaryOp::Relu, x)
    }

    pub fn abs(&mut self, x: Var) -> Var {
        self.unary(UnaryOp::Abs, x)
    }

    pub fn square(&mut self, x: Var) -> Var {
        self.unary(UnaryOp::Square, x)
    }

    /// `scale * x + shift`, elementwise.
    pub fn affine(&mut self, x: Var, scale: f64, shift: f64) -> Var {
        let t = self.value(x);
        let value = Tensor::from_raw(
            t.shape().to_vec(),
            t.data().iter().map(|&v| scale * v + shift).collect(),
        );
        let rg = self.rg(x.0);
        self.push(value, Op::Affine { x: x.0, scale }, rg)
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        self.affine(x, factor, 0.0)
    }

    /// `ln(max(x, floor))`; the gradient is zero wherever the floor binds.
    pub fn ln_clamped(&mut self, x: Var, floor: f64) -> Var {
        let t = self.value(x);
        let value = Tensor::from_raw(
            t.shape().to_vec(),
            t.data().iter().map(|&v| math::ln(v.max(floor))).collect(),
        );
        let rg = self.rg(x.0);
        self.push(value, Op::LnClamped { x: x.0, floor }, rg)
    }

    /// Softmax over all elements, computed with max subtraction.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        if t.numel() == 0 {
            return Err(dim("softmax", t.shape(), &[]));
        }
        let value = Tensor::from_raw(t.shape().to_vec(), math::softmax(t.data()));
        let rg = self.rg(x.0);
        Ok(self.push(value, Op::Softmax(x.0), rg))
    }

    /// Sum of all elements as a one-element tensor.
    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        let rg = self.rg(x.0);
        self.push(Tensor::scalar(s), Op::Sum(x.0), rg)
    }

    /// Sum of a non-empty list of same-shape tensors, folded left to right.
    pub fn add_all(&mut self, xs: &[Var]) -> Result<Var> {
        let (&first, rest) = xs
            .split_first()
            .ok_or_else(|| contract("add_all needs at least one operand"))?;
        rest.iter().try_fold(first, |acc, &x| self.add(acc, x))
    }

    pub fn dot(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(dim("dot", self.shape(a), self.shape(b)));
        }
        let p = self.mul(a, b)?;
        Ok(self.sum(p))
    }

    /// Flat gather: `out[j] = x[index[j]]`. The output is one-dimensional.
    pub fn gather(&mut self, x: Var, index: Vec<usize>) -> Result<Var> {
        let t = self.value(x);
        if let Some(&bad) = index.iter().find(|&&i| i >= t.numel()) {
            return Err(dim("gather", t.shape(), &[bad]));
        }
        if index.is_empty() {
            return Err(dim("gather", t.shape(), &[]));
        }
        let data: Vec<f64> = index.iter().map(|&i| t.data()[i]).collect();
        let rg = self.rg(x.0);
        Ok(self.push(
            Tensor::from_raw(vec![data.len()], data),
            Op::Gather { x: x.0, index },
            rg,
        ))
    }

    /// Reverse sweep from a one-element `root`. Gradients of a previous sweep
    /// are discarded.
    pub fn backward(&mut self, root: Var) -> Result<()> {
        if self.value(root).numel() != 1 {
            return Err(contract(alloc::format!(
                "backward root must be scalar, got shape {:?}",
                self.shape(root)
            )));
        }
        self.grads.clear();
        self.grads.resize(self.nodes.len(), None);
        if !self.rg(root.0) {
            return Ok(());
        }
        self.grads[root.0] = Some(vec![1.0]);
        for i in (0..=root.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(g) = self.grads[i].take() else {
                continue;
            };
            self.propagate(i, &g);
            self.grads[i] = Some(g);
        }
        Ok(())
    }

    fn propagate(&mut self, i: usize, g: &[f64]) {
        let nodes = &self.nodes;
        let grads = &mut self.grads;
        let out = &nodes[i].value;
        match nodes[i].op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let ta = &nodes[a].value;
                let tb = &nodes[b].value;
                let (m, k) = (ta.shape()[0], ta.shape()[1]);
                let n = tb.numel() / k;
                if let Some(ga) = slot(nodes, grads, a) {
                    for r in 0..m {
                        for p in 0..k {
                            let mut s = 0.0;
                            for j in 0..n {
                                s += g[r * n + j] * tb.data()[p * n + j];
                            }
                            ga[r * k + p] += s;
                        }
                    }
                }
                if let Some(gb) = slot(nodes, grads, b) {
                    for p in 0..k {
                        for j in 0..n {
                            let mut s = 0.0;
                            for r in 0..m {
                                s += ta.data()[r * k + p] * g[r * n + j];
                            }
                            gb[p * n + j] += s;
                        }
                    }
                }
            }
            Op::Binary(op, a, b) => {
                let ta = &nodes[a].value;
                let tb = &nodes[b].value;
                let n = out.numel();
                let at = |t: &Tensor, j: usize| if t.numel() == 1 { t.data()[0] } else { t.data()[j] };
                let (sa, sb) = match op {
                    BinaryOp::Add => (1.0, 1.0),
                    BinaryOp::Sub => (1.0, -1.0),
                    BinaryOp::Mul => (0.0, 0.0),
                };
                if let Some(ga) = slot(nodes, grads, a) {
                    let bcast = ga.len() == 1 && n != 1;
                    for j in 0..n {
                        let d = match op {
                            BinaryOp::Mul => g[j] * at(tb, j),
                            _ => g[j] * sa,
                        };
                        ga[if bcast { 0 } else { j }] += d;
                    }
                }
                if let Some(gb) = slot(nodes, grads, b) {
                    let bcast = gb.len() == 1 && n != 1;
                    for j in 0..n {
                        let d = match op {
                            BinaryOp::Mul => g[j] * at(ta, j),
                            _ => g[j] * sb,
                        };
                        gb[if bcast { 0 } else { j }] += d;
                    }
                }
            }
            Op::Unary(op, x) => {
                let tx = &nodes[x].value;
                if let Some(gx) = slot(nodes, grads, x) {
                    for j in 0..gx.len() {
                        let (xv, yv) = (tx.data()[j], out.data()[j]);
                        let d = match op {
                            UnaryOp::Tanh => 1.0 - yv * yv,
                            UnaryOp::Sigmoid => yv * (1.0 - yv),
                            UnaryOp::Relu => {
                                if xv > 0.0 {
                                    1.0
                                } else {
                                    0.0
                                }
                            }
                            UnaryOp::Abs => {
                                if xv > 0.0 {
                                    1.0
                                } else if xv < 0.0 {
                                    -1.0
                                } else {
                                    0.0
                                }
                            }
                            UnaryOp::Square => 2.0 * xv,
                        };
                        gx[j] += g[j] * d;
                    }
                }
            }
            Op::Affine { x, scale, .. } => {
                if let Some(gx) = slot(nodes, grads, x) {
                    for (gx, &gj) in gx.iter_mut().zip(g) {
                        *gx += scale * gj;
                    }
                }
            }
            Op::LnClamped { x, floor } => {
                let tx = &nodes[x].value;
                if let Some(gx) = slot(nodes, grads, x) {
                    for j in 0..gx.len() {
                        let xv = tx.data()[j];
                        if xv > floor {
                            gx[j] += g[j] / xv;
                        }
                    }
                }
            }
            Op::Softmax(x) => {
                if let Some(gx) = slot(nodes, grads, x) {
                    let y = out.data();
                    let gy: f64 = g.iter().zip(y).map(|(a, b)| a * b).sum();
                    for j in 0..gx.len() {
                        gx[j] += y[j] * (g[j] - gy);
                    }
                }
            }
            Op::Sum(x) => {
                if let Some(gx) = slot(nodes, grads, x) {
                    for v in gx.iter_mut() {
                        *v += g[0];
                    }
                }
            }
            Op::Gather { x, ref index } => {
                if let Some(gx) = slot(nodes, grads, x) {
                    for (j, &src) in index.iter().enumerate() {
                        gx[src] += g[j];
                    }
                }
            }
        }
    }

    /// Offsets of every non-smooth operation input from its kink point,
    /// in tape order. Two evaluations of the same function yield aligned
    /// vectors.
    pub fn kink_offsets(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for node in &self.nodes {
            let (x, at) = match node.op {
                Op::Unary(UnaryOp::Relu | UnaryOp::Abs, x) => (x, 0.0),
                Op::LnClamped { x, floor } => (x, floor),
                _ => continue,
            };
            out.extend(self.nodes[x].value.data().iter().map(|&v| v - at));
        }
        out
    }
}

fn slot<'a>(nodes: &[Node], grads: &'a mut [Option<Vec<f64>>], idx: usize) -> Option<&'a mut Vec<f64>> {
    if !nodes[idx].requires_grad {
        return None;
    }
    let n = nodes[idx].value.numel();
    Some(grads[idx].get_or_insert_with(|| vec![0.0; n]))
}
