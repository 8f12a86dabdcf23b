use std::sync::atomic::{AtomicU32, Ordering};

use super::kernels::{gemm_nn, gemm_nt, gemm_tn};
use super::{broadcast_map, broadcast_shape, numel, permute_map, ParamId, ParamStore, Tensor};
use crate::error::{Error, Result};

static NEXT_TAPE_TAG: AtomicU32 = AtomicU32::new(1);

/// Handle to a node on a [`Tape`]. Only valid for the tape (and generation)
/// that created it.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var {
    index: usize,
    tag: u32,
}

impl Var {
    pub fn index(self) -> usize {
        self.index
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum UnaryOp {
    Neg,
    Exp,
    Sigmoid,
    Silu,
    Softplus,
    Relu,
    Abs,
    Square,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReduceOp {
    Mean,
    Max,
    Sum,
}

/// An operation whose forward value is computed outside the tape and whose
/// vector-Jacobian product is supplied by the implementor.
pub trait CustomOp {
    fn name(&self) -> &'static str;

    /// Returns one gradient per input (same length as that input), or `None`
    /// when the input does not need one. `needs[i]` says whether input `i`
    /// requires a gradient.
    fn backward(
        &self,
        inputs: &[&Tensor],
        output: &Tensor,
        grad_out: &[f64],
        needs: &[bool],
    ) -> Vec<Option<Vec<f64>>>;
}

enum Op {
    Leaf,
    Param(ParamId),
    Unary(UnaryOp, Var),
    Binary(BinaryOp, Var, Var),
    Scale(Var, f64),
    Matmul(Var, Var),
    Reduce {
        op: ReduceOp,
        input: Var,
        axis: usize,
        argmax: Vec<usize>,
    },
    SumAll(Var),
    MeanAll(Var),
    Reshape(Var),
    Gather(Var, Vec<usize>),
    Custom(Box<dyn CustomOp>, Vec<Var>),
}

impl Op {
    fn parents(&self) -> Vec<Var> {
        match self {
            Op::Leaf | Op::Param(_) => vec![],
            Op::Unary(_, x)
            | Op::Scale(x, _)
            | Op::SumAll(x)
            | Op::MeanAll(x)
            | Op::Reshape(x)
            | Op::Gather(x, _) => vec![*x],
            Op::Reduce { input, .. } => vec![*input],
            Op::Binary(_, a, b) | Op::Matmul(a, b) => vec![*a, *b],
            Op::Custom(_, inputs) => inputs.clone(),
        }
    }
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Ordered record of operations. Parents of node `i` always have index `< i`.
pub struct Tape {
    nodes: Vec<Node>,
    tag: u32,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients produced by one backward pass, indexed by [`Var`].
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    tag: u32,
}

impl Gradients {
    pub fn get(&self, var: Var) -> Option<&[f64]> {
        assert_eq!(var.tag, self.tag, "Var from a different tape");
        self.grads.get(var.index).and_then(|g| g.as_deref())
    }
}

fn fresh_tag() -> u32 {
    NEXT_TAPE_TAG.fetch_add(1, Ordering::Relaxed)
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

impl UnaryOp {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            UnaryOp::Neg => -x,
            UnaryOp::Exp => x.exp(),
            UnaryOp::Sigmoid => sigmoid(x),
            UnaryOp::Silu => x * sigmoid(x),
            UnaryOp::Softplus => softplus(x),
            UnaryOp::Relu => x.max(0.0),
            UnaryOp::Abs => x.abs(),
            UnaryOp::Square => x * x,
        }
    }

    /// dy/dx given the input `x` and output `y`.
    pub fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            UnaryOp::Neg => -1.0,
            UnaryOp::Exp => y,
            UnaryOp::Sigmoid => y * (1.0 - y),
            UnaryOp::Silu => {
                let s = sigmoid(x);
                s * (1.0 + x * (1.0 - s))
            }
            UnaryOp::Softplus => sigmoid(x),
            UnaryOp::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            // subgradient 0 at the kink
            UnaryOp::Abs => sign(x),
            UnaryOp::Square => 2.0 * x,
        }
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            tag: fresh_tag(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Drops every node. Vars handed out before the call become invalid.
    pub fn clear(&mut self) {
        self.nodes.clear();
        self.tag = fresh_tag();
    }

    fn check(&self, v: Var) {
        assert!(
            v.tag == self.tag && v.index < self.nodes.len(),
            "Var does not belong to this tape (stale or foreign handle)"
        );
    }

    pub fn value(&self, v: Var) -> &Tensor {
        self.check(v);
        &self.nodes[v.index].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.check(v);
        self.nodes[v.index].requires_grad
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var {
            index: self.nodes.len() - 1,
            tag: self.tag,
        }
    }

    /// A constant: no gradient flows into it.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// A free input whose gradient can be read from [`Gradients`].
    pub fn input(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Copies a parameter onto the tape.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        self.push(store.value(id).clone(), Op::Param(id), true)
    }

    pub fn unary(&mut self, op: UnaryOp, x: Var) -> Var {
        self.check(x);
        let node = &self.nodes[x.index];
        let value = node.value.map(|v| op.apply(v));
        let rg = node.requires_grad;
        self.push(value, Op::Unary(op, x), rg)
    }

    pub fn neg(&mut self, x: Var) -> Var {
        self.unary(UnaryOp::Neg, x)
    }
    pub fn exp(&mut self, x: Var) -> Var {
        self.unary(UnaryOp::Exp, x)
    }
    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(UnaryOp::Sigmoid, x)
    }
    pub fn silu(&mut self, x: Var) -> Var {
        self.unary(UnaryOp::Silu, x)
    }
    pub fn softplus(&mut self, x: Var) -> Var {
        self.unary(UnaryOp::Softplus, x)
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

    pub fn binary(&mut self, op: BinaryOp, a: Var, b: Var) -> Result<Var> {
        self.check(a);
        self.check(b);
        let (av, bv) = (&self.nodes[a.index].value, &self.nodes[b.index].value);
        let f = match op {
            BinaryOp::Add => |x: f64, y: f64| x + y,
            BinaryOp::Sub => |x: f64, y: f64| x - y,
            BinaryOp::Mul => |x: f64, y: f64| x * y,
        };
        let value = if av.shape() == bv.shape() {
            let data = av.data().iter().zip(bv.data()).map(|(&x, &y)| f(x, y)).collect();
            Tensor::new(av.shape().to_vec(), data)?
        } else {
            let shape = broadcast_shape(av.shape(), bv.shape())?;
            let am = broadcast_map(av.shape(), &shape);
            let bm = broadcast_map(bv.shape(), &shape);
            let (ad, bd) = (av.data(), bv.data());
            let data = am.iter().zip(&bm).map(|(&i, &j)| f(ad[i], bd[j])).collect();
            Tensor::new(shape, data)?
        };
        let rg = self.nodes[a.index].requires_grad || self.nodes[b.index].requires_grad;
        Ok(self.push(value, Op::Binary(op, a, b), rg))
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

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        self.check(x);
        let node = &self.nodes[x.index];
        let value = node.value.map(|v| v * c);
        let rg = node.requires_grad;
        self.push(value, Op::Scale(x, c), rg)
    }

    /// Batched matrix product over the last two axes; leading axes broadcast.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check(a);
        self.check(b);
        let (av, bv) = (&self.nodes[a.index].value, &self.nodes[b.index].value);
        let geo = MatmulGeometry::new(av.shape(), bv.shape())?;
        let mut out = vec![0.0; geo.out_numel()];
        geo.forward(av.data(), bv.data(), &mut out);
        let value = Tensor::new(geo.out_shape.clone(), out)?;
        let rg = self.nodes[a.index].requires_grad || self.nodes[b.index].requires_grad;
        Ok(self.push(value, Op::Matmul(a, b), rg))
    }

    pub fn reduce(&mut self, op: ReduceOp, x: Var, axis: usize) -> Result<Var> {
        self.check(x);
        let xv = &self.nodes[x.index].value;
        let shape = xv.shape();
        if axis >= shape.len() {
            return Err(Error::Axis {
                axis,
                rank: shape.len(),
            });
        }
        let outer: usize = shape[..axis].iter().product();
        let len = shape[axis];
        let inner: usize = shape[axis + 1..].iter().product();
        let data = xv.data();
        let mut out = vec![0.0; outer * inner];
        let mut argmax = Vec::new();
        match op {
            ReduceOp::Sum | ReduceOp::Mean => {
                for o in 0..outer {
                    for l in 0..len {
                        let base = (o * len + l) * inner;
                        for i in 0..inner {
                            out[o * inner + i] += data[base + i];
                        }
                    }
                }
                if op == ReduceOp::Mean {
                    let inv = 1.0 / len as f64;
                    out.iter_mut().for_each(|v| *v *= inv);
                }
            }
            ReduceOp::Max => {
                argmax = vec![0; outer * inner];
                for o in 0..outer {
                    for i in 0..inner {
                        let mut best = data[o * len * inner + i];
                        let mut best_l = 0;
                        for l in 1..len {
                            let v = data[(o * len + l) * inner + i];
                            // strict: ties go to the first maximum
                            if v > best {
                                best = v;
                                best_l = l;
                            }
                        }
                        out[o * inner + i] = best;
                        argmax[o * inner + i] = (o * len + best_l) * inner + i;
                    }
                }
            }
        }
        let mut out_shape = shape.to_vec();
        out_shape.remove(axis);
        let value = Tensor::new(out_shape, out)?;
        let rg = self.nodes[x.index].requires_grad;
        Ok(self.push(
            value,
            Op::Reduce {
                op,
                input: x,
                axis,
                argmax,
            },
            rg,
        ))
    }

    pub fn sum_all(&mut self, x: Var) -> Var {
        self.check(x);
        let node = &self.nodes[x.index];
        let value = Tensor::scalar(node.value.data().iter().sum());
        let rg = node.requires_grad;
        self.push(value, Op::SumAll(x), rg)
    }

    pub fn mean_all(&mut self, x: Var) -> Var {
        self.check(x);
        let node = &self.nodes[x.index];
        let n = node.value.numel() as f64;
        let value = Tensor::scalar(node.value.data().iter().sum::<f64>() / n);
        let rg = node.requires_grad;
        self.push(value, Op::MeanAll(x), rg)
    }

    pub fn reshape(&mut self, x: Var, shape: impl Into<Vec<usize>>) -> Result<Var> {
        self.check(x);
        let node = &self.nodes[x.index];
        let value = node.value.clone().reshape(shape)?;
        let rg = node.requires_grad;
        Ok(self.push(value, Op::Reshape(x), rg))
    }

    pub fn permute(&mut self, x: Var, axes: &[usize]) -> Result<Var> {
        self.check(x);
        let shape = self.nodes[x.index].value.shape().to_vec();
        let map = permute_map(&shape, axes)?;
        let out_shape: Vec<usize> = axes.iter().map(|&a| shape[a]).collect();
        self.gather(x, map, out_shape)
    }

    /// `out[i] = x[indices[i]]` over flat indices; the backward pass scatter-adds.
    pub fn gather(
        &mut self,
        x: Var,
        indices: Vec<usize>,
        out_shape: impl Into<Vec<usize>>,
    ) -> Result<Var> {
        self.check(x);
        let node = &self.nodes[x.index];
        let src = node.value.data();
        if let Some(&bad) = indices.iter().find(|&&i| i >= src.len()) {
            return Err(Error::Domain(format!(
                "gather index {bad} out of range for {} values",
                src.len()
            )));
        }
        let data = indices.iter().map(|&i| src[i]).collect();
        let value = Tensor::new(out_shape, data)?;
        let rg = node.requires_grad;
        Ok(self.push(value, Op::Gather(x, indices), rg))
    }

    /// Records a custom operation whose forward `output` was computed by the caller.
    pub fn custom(&mut self, op: impl CustomOp + 'static, inputs: &[Var], output: Tensor) -> Var {
        for &v in inputs {
            self.check(v);
        }
        let rg = inputs.iter().any(|v| self.nodes[v.index].requires_grad);
        self.push(output, Op::Custom(Box::new(op), inputs.to_vec()), rg)
    }

    /// Reverse-mode sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        self.check(loss);
        let root = &self.nodes[loss.index];
        if root.value.numel() != 1 || root.value.rank() > 1 {
            return Err(Error::NonScalarLoss(root.value.shape().to_vec()));
        }
        if !root.requires_grad {
            return Err(Error::Detached);
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.index + 1];
        grads[loss.index] = Some(vec![1.0]);

        for i in (0..=loss.index).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            self.propagate(node, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(Gradients {
            grads,
            tag: self.tag,
        })
    }

    /// Runs [`Tape::backward`] and adds parameter gradients into `store`.
    pub fn backward_into(&self, loss: Var, store: &mut ParamStore) -> Result<()> {
        let grads = self.backward(loss)?;
        for (i, node) in self.nodes.iter().enumerate().take(loss.index + 1) {
            if let Op::Param(id) = node.op {
                if let Some(g) = grads.grads[i].as_deref() {
                    store.accumulate(id, g);
                }
            }
        }
        Ok(())
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.index].requires_grad
    }

    fn propagate(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let mut acc = |v: Var, contrib: Vec<f64>| match &mut grads[v.index] {
            Some(existing) => existing.iter_mut().zip(&contrib).for_each(|(e, c)| *e += c),
            slot @ None => *slot = Some(contrib),
        };
        match &node.op {
            Op::Leaf | Op::Param(_) => {}
            Op::Unary(op, x) => {
                if !self.needs(*x) {
                    return;
                }
                let xv = self.nodes[x.index].value.data();
                let yv = node.value.data();
                let contrib = g
                    .iter()
                    .zip(xv.iter().zip(yv))
                    .map(|(&gi, (&xi, &yi))| gi * op.derivative(xi, yi))
                    .collect();
                acc(*x, contrib);
            }
            Op::Scale(x, c) => {
                if self.needs(*x) {
                    acc(*x, g.iter().map(|gi| gi * c).collect());
                }
            }
            Op::Binary(op, a, b) => {
                let av = &self.nodes[a.index].value;
                let bv = &self.nodes[b.index].value;
                let out_shape = node.value.shape();
                let same = av.shape() == out_shape && bv.shape() == out_shape;
                let amap = (!same).then(|| broadcast_map(av.shape(), out_shape));
                let bmap = (!same).then(|| broadcast_map(bv.shape(), out_shape));
                let ai = |i: usize| amap.as_ref().map_or(i, |m| m[i]);
                let bi = |i: usize| bmap.as_ref().map_or(i, |m| m[i]);
                if self.needs(*a) {
                    let mut ga = vec![0.0; av.numel()];
                    for (i, &gi) in g.iter().enumerate() {
                        ga[ai(i)] += match op {
                            BinaryOp::Add | BinaryOp::Sub => gi,
                            BinaryOp::Mul => gi * bv.data()[bi(i)],
                        };
                    }
                    acc(*a, ga);
                }
                if self.needs(*b) {
                    let mut gb = vec![0.0; bv.numel()];
                    for (i, &gi) in g.iter().enumerate() {
                        gb[bi(i)] += match op {
                            BinaryOp::Add => gi,
                            BinaryOp::Sub => -gi,
                            BinaryOp::Mul => gi * av.data()[ai(i)],
                        };
                    }
                    acc(*b, gb);
                }
            }
            Op::Matmul(a, b) => {
                let av = &self.nodes[a.index].value;
                let bv = &self.nodes[b.index].value;
                let geo = MatmulGeometry::new(av.shape(), bv.shape())
                    .expect("shapes validated in forward");
                if self.needs(*a) {
                    let mut ga = vec![0.0; av.numel()];
                    geo.grad_a(g, bv.data(), &mut ga);
                    acc(*a, ga);
                }
                if self.needs(*b) {
                    let mut gb = vec![0.0; bv.numel()];
                    geo.grad_b(av.data(), g, &mut gb);
                    acc(*b, gb);
                }
            }
            Op::Reduce {
                op,
                input,
                axis,
                argmax,
            } => {
                if !self.needs(*input) {
                    return;
                }
                let xv = &self.nodes[input.index].value;
                let shape = xv.shape();
                let mut gx = vec![0.0; xv.numel()];
                match op {
                    ReduceOp::Max => {
                        for (&src, &gi) in argmax.iter().zip(g) {
                            gx[src] += gi;
                        }
                    }
                    ReduceOp::Sum | ReduceOp::Mean => {
                        let outer: usize = shape[..*axis].iter().product();
                        let len = shape[*axis];
                        let inner: usize = shape[axis + 1..].iter().product();
                        let f = if *op == ReduceOp::Mean {
                            1.0 / len as f64
                        } else {
                            1.0
                        };
                        for o in 0..outer {
                            for l in 0..len {
                                for i in 0..inner {
                                    gx[(o * len + l) * inner + i] = g[o * inner + i] * f;
                                }
                            }
                        }
                    }
                }
                acc(*input, gx);
            }
            Op::SumAll(x) => {
                if self.needs(*x) {
                    let n = self.nodes[x.index].value.numel();
                    acc(*x, vec![g[0]; n]);
                }
            }
            Op::MeanAll(x) => {
                if self.needs(*x) {
                    let n = self.nodes[x.index].value.numel();
                    acc(*x, vec![g[0] / n as f64; n]);
                }
            }
            Op::Reshape(x) => {
                if self.needs(*x) {
                    acc(*x, g.to_vec());
                }
            }
            Op::Gather(x, indices) => {
                if self.needs(*x) {
                    let mut gx = vec![0.0; self.nodes[x.index].value.numel()];
                    for (&src, &gi) in indices.iter().zip(g) {
                        gx[src] += gi;
                    }
                    acc(*x, gx);
                }
            }
            Op::Custom(op, inputs) => {
                let needs: Vec<bool> = inputs.iter().map(|&v| self.needs(v)).collect();
                if !needs.iter().any(|&n| n) {
                    return;
                }
                let values: Vec<&Tensor> =
                    inputs.iter().map(|v| &self.nodes[v.index].value).collect();
                let contribs = op.backward(&values, &node.value, g, &needs);
                for ((v, c), need) in inputs.iter().zip(contribs).zip(needs) {
                    if let (Some(c), true) = (c, need) {
                        assert_eq!(
                            c.len(),
                            self.nodes[v.index].value.numel(),
                            "{} returned a gradient of the wrong size",
                            op.name()
                        );
                        acc(*v, c);
                    }
                }
            }
        }
    }

    /// Parent indices of every node, for structural checks.
    pub fn parent_indices(&self) -> Vec<Vec<usize>> {
        self.nodes
            .iter()
            .map(|n| n.op.parents().into_iter().map(|v| v.index).collect())
            .collect()
    }
}

struct MatmulGeometry {
    m: usize,
    k: usize,
    n: usize,
    a_map: Vec<usize>,
    b_map: Vec<usize>,
    out_shape: Vec<usize>,
    /// `b` is a plain matrix and `a` needs no broadcast: one big GEMM.
    flat: bool,
}

impl MatmulGeometry {
    fn new(a: &[usize], b: &[usize]) -> Result<Self> {
        let mismatch = || Error::ShapeMismatch {
            op: "matmul",
            lhs: a.to_vec(),
            rhs: b.to_vec(),
        };
        if a.len() < 2 || b.len() < 2 {
            return Err(mismatch());
        }
        let (m, k) = (a[a.len() - 2], a[a.len() - 1]);
        let (k2, n) = (b[b.len() - 2], b[b.len() - 1]);
        if k != k2 {
            return Err(mismatch());
        }
        let (ab, bb) = (&a[..a.len() - 2], &b[..b.len() - 2]);
        let batch = broadcast_shape(ab, bb).map_err(|_| mismatch())?;
        let flat = bb.is_empty() && ab == batch.as_slice();
        let a_map = broadcast_map(ab, &batch);
        let b_map = broadcast_map(bb, &batch);
        let mut out_shape = batch;
        out_shape.extend([m, n]);
        Ok(MatmulGeometry {
            m,
            k,
            n,
            a_map,
            b_map,
            out_shape,
            flat,
        })
    }

    fn batches(&self) -> usize {
        self.a_map.len()
    }

    fn out_numel(&self) -> usize {
        numel(&self.out_shape)
    }

    fn forward(&self, a: &[f64], b: &[f64], out: &mut [f64]) {
        let (m, k, n) = (self.m, self.k, self.n);
        if self.flat {
            gemm_nn(self.batches() * m, k, n, a, b, out);
            return;
        }
        for bi in 0..self.batches() {
            let ao = self.a_map[bi] * m * k;
            let bo = self.b_map[bi] * k * n;
            gemm_nn(
                m,
                k,
                n,
                &a[ao..ao + m * k],
                &b[bo..bo + k * n],
                &mut out[bi * m * n..(bi + 1) * m * n],
            );
        }
    }

    fn grad_a(&self, g: &[f64], b: &[f64], ga: &mut [f64]) {
        let (m, k, n) = (self.m, self.k, self.n);
        if self.flat {
            gemm_nt(self.batches() * m, n, k, g, b, ga);
            return;
        }
        for bi in 0..self.batches() {
            let ao = self.a_map[bi] * m * k;
            let bo = self.b_map[bi] * k * n;
            gemm_nt(
                m,
                n,
                k,
                &g[bi * m * n..(bi + 1) * m * n],
                &b[bo..bo + k * n],
                &mut ga[ao..ao + m * k],
            );
        }
    }

    fn grad_b(&self, a: &[f64], g: &[f64], gb: &mut [f64]) {
        let (m, k, n) = (self.m, self.k, self.n);
        if self.flat {
            gemm_tn(self.batches() * m, k, n, a, g, gb);
            return;
        }
        for bi in 0..self.batches() {
            let ao = self.a_map[bi] * m * k;
            let bo = self.b_map[bi] * k * n;
            gemm_tn(
                m,
                k,
                n,
                &a[ao..ao + m * k],
                &g[bi * m * n..(bi + 1) * m * n],
                &mut gb[bo..bo + k * n],
            );
        }
    }
}
