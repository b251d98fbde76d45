//! Define-by-run reverse-mode differentiation.
//!
//! A [`Tape`] is rebuilt for every forward pass. Each op appends a node holding
//! its output value and enough saved state to run its backward rule; node ids
//! are handed out as [`Var`]s, so inputs always precede their consumers.
//! [`Tape::backward`] walks the nodes in reverse and accumulates gradients, so a
//! node that feeds several consumers receives the sum of their contributions.

use super::kernels::{dot, matmul_acc, matmul_nt_acc, matmul_tn_acc, sigmoid};
use super::params::{BoundParams, ParamSet};
use super::value::Tensor;
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BinaryKind {
    Add,
    Sub,
    Mul,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ActivationKind {
    /// Subgradient at 0 is 0.
    Relu,
    Tanh,
    Sigmoid,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReduceKind {
    Sum,
    Mean,
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    BatchMatMul {
        a: Var,
        b: Var,
        transpose_b: bool,
    },
    Elementwise {
        kind: BinaryKind,
        a: Var,
        b: Var,
    },
    Activation {
        kind: ActivationKind,
        a: Var,
    },
    Ln(Var),
    Clamp {
        a: Var,
        lo: f64,
        hi: f64,
    },
    Scale(Var, f64),
    SoftmaxMasked(Var),
    Concat {
        inputs: Vec<Var>,
        axis: usize,
    },
    Reduce {
        kind: ReduceKind,
        a: Var,
        axis: usize,
    },
    Reshape(Var),
    AddBias(Var, Var),
    Gather {
        table: Var,
        rows: Vec<Option<usize>>,
    },
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Append-only record of one forward pass.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Result of [`Tape::backward`]: one optional gradient per tape node.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradients for every bound parameter, zero-filled where the loss does not reach.
    pub fn for_params(&self, bound: &BoundParams, params: &ParamSet) -> Vec<Tensor> {
        bound
            .vars()
            .iter()
            .zip(params.tensors())
            .map(|(&v, p)| {
                self.get(v)
                    .cloned()
                    .unwrap_or_else(|| Tensor::zeros(p.shape()))
            })
            .collect()
    }
}

fn split3(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let len = shape[axis];
    let inner = shape[axis + 1..].iter().product();
    (outer, len, inner)
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

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// A value that receives no gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// A differentiable leaf.
    pub fn variable(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Puts every parameter on the tape as a differentiable leaf.
    pub fn bind(&mut self, params: &ParamSet) -> BoundParams {
        let vars = params
            .tensors()
            .iter()
            .map(|t| self.variable(t.clone()))
            .collect();
        BoundParams::new(vars)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::dim("matmul", sa, sb));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![0.0; m * n];
        matmul_acc(
            self.value(a).data(),
            self.value(b).data(),
            &mut out,
            m,
            k,
            n,
        );
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(Tensor::from_parts(vec![m, n], out), Op::MatMul(a, b), ng))
    }

    /// Batched product of `[B, m, k]` and `[B, k, n]` (or `[B, n, k]` when `transpose_b`).
    pub fn batch_matmul(&mut self, a: Var, b: Var, transpose_b: bool) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        let ok = sa.len() == 3
            && sb.len() == 3
            && sa[0] == sb[0]
            && if transpose_b {
                sa[2] == sb[2]
            } else {
                sa[2] == sb[1]
            };
        if !ok {
            return Err(Error::dim("batch_matmul", sa, sb));
        }
        let (bt, m, k) = (sa[0], sa[1], sa[2]);
        let n = if transpose_b { sb[1] } else { sb[2] };
        let mut out = vec![0.0; bt * m * n];
        {
            let (ad, bd) = (self.value(a).data(), self.value(b).data());
            for i in 0..bt {
                let a_i = &ad[i * m * k..(i + 1) * m * k];
                let b_i = &bd[i * k * n..(i + 1) * k * n];
                let c_i = &mut out[i * m * n..(i + 1) * m * n];
                if transpose_b {
                    matmul_nt_acc(a_i, b_i, c_i, m, k, n);
                } else {
                    matmul_acc(a_i, b_i, c_i, m, k, n);
                }
            }
        }
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(
            Tensor::from_parts(vec![bt, m, n], out),
            Op::BatchMatMul { a, b, transpose_b },
            ng,
        ))
    }

    /// Pointwise `a ∘ b`; `b` may also be a one-element tensor broadcast as a scalar.
    pub fn elementwise(&mut self, kind: BinaryKind, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        let scalar_b = vb.numel() == 1;
        if va.shape() != vb.shape() && !scalar_b {
            return Err(Error::dim("elementwise", va.shape(), vb.shape()));
        }
        let f = |x: f64, y: f64| match kind {
            BinaryKind::Add => x + y,
            BinaryKind::Sub => x - y,
            BinaryKind::Mul => x * y,
        };
        let data: Vec<f64> = if scalar_b && va.shape() != vb.shape() {
            let s = vb.data()[0];
            va.data().iter().map(|&x| f(x, s)).collect()
        } else {
            va.data()
                .iter()
                .zip(vb.data())
                .map(|(&x, &y)| f(x, y))
                .collect()
        };
        let shape = va.shape().to_vec();
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(
            Tensor::from_parts(shape, data),
            Op::Elementwise { kind, a, b },
            ng,
        ))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise(BinaryKind::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise(BinaryKind::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise(BinaryKind::Mul, a, b)
    }

    pub fn activation(&mut self, kind: ActivationKind, a: Var) -> Var {
        let va = self.value(a);
        let data = va
            .data()
            .iter()
            .map(|&x| match kind {
                ActivationKind::Relu => {
                    if x > 0.0 {
                        x
                    } else {
                        0.0
                    }
                }
                ActivationKind::Tanh => x.tanh(),
                ActivationKind::Sigmoid => sigmoid(x),
            })
            .collect();
        let shape = va.shape().to_vec();
        let ng = self.ng(a);
        self.push(
            Tensor::from_parts(shape, data),
            Op::Activation { kind, a },
            ng,
        )
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.activation(ActivationKind::Relu, a)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.activation(ActivationKind::Tanh, a)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.activation(ActivationKind::Sigmoid, a)
    }

    /// Natural log; inputs must be strictly positive.
    pub fn ln(&mut self, a: Var) -> Result<Var> {
        let va = self.value(a);
        if va.data().iter().any(|&x| x <= 0.0) {
            return Err(Error::contract("ln of a non-positive value"));
        }
        let data = va.data().iter().map(|x| x.ln()).collect();
        let shape = va.shape().to_vec();
        let ng = self.ng(a);
        Ok(self.push(Tensor::from_parts(shape, data), Op::Ln(a), ng))
    }

    /// Clips into `[lo, hi]`; gradient passes only where the input was inside.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        let va = self.value(a);
        let data = va.data().iter().map(|x| x.clamp(lo, hi)).collect();
        let shape = va.shape().to_vec();
        let ng = self.ng(a);
        self.push(Tensor::from_parts(shape, data), Op::Clamp { a, lo, hi }, ng)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let va = self.value(a);
        let data = va.data().iter().map(|x| x * c).collect();
        let shape = va.shape().to_vec();
        let ng = self.ng(a);
        self.push(Tensor::from_parts(shape, data), Op::Scale(a, c), ng)
    }

    /// Softmax over the last axis restricted to `mask`.
    ///
    /// Masked slots are exactly 0. A row with no valid slot is an error.
    pub fn softmax_masked(&mut self, logits: Var, mask: &[bool]) -> Result<Var> {
        self.softmax_masked_impl(logits, mask, false)
    }

    /// Like [`Tape::softmax_masked`], but a fully masked row yields all zeros.
    pub fn softmax_masked_or_zero(&mut self, logits: Var, mask: &[bool]) -> Result<Var> {
        self.softmax_masked_impl(logits, mask, true)
    }

    fn softmax_masked_impl(
        &mut self,
        logits: Var,
        mask: &[bool],
        allow_empty: bool,
    ) -> Result<Var> {
        let v = self.value(logits);
        if mask.len() != v.numel() {
            return Err(Error::dim("softmax_masked", v.shape(), &[mask.len()]));
        }
        let width = *v.shape().last().unwrap();
        let mut out = vec![0.0; v.numel()];
        for (r, (row, mrow)) in v.data().chunks(width).zip(mask.chunks(width)).enumerate() {
            let max = row
                .iter()
                .zip(mrow)
                .filter(|(_, &m)| m)
                .map(|(&x, _)| x)
                .fold(f64::NEG_INFINITY, f64::max);
            if max == f64::NEG_INFINITY {
                if allow_empty {
                    continue;
                }
                return Err(Error::DegenerateInput(format!(
                    "softmax row {r} is fully masked"
                )));
            }
            let o = &mut out[r * width..(r + 1) * width];
            let mut sum = 0.0;
            for ((ov, &x), &m) in o.iter_mut().zip(row).zip(mrow) {
                if m {
                    *ov = (x - max).exp();
                    sum += *ov;
                }
            }
            for ov in o.iter_mut() {
                *ov /= sum;
            }
        }
        let shape = v.shape().to_vec();
        let ng = self.ng(logits);
        Ok(self.push(
            Tensor::from_parts(shape, out),
            Op::SoftmaxMasked(logits),
            ng,
        ))
    }

    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        let first = *inputs
            .first()
            .ok_or_else(|| Error::contract("concat of an empty list"))?;
        let base = self.shape(first).to_vec();
        if axis >= base.len() {
            return Err(Error::dim("concat", &base, &[axis]));
        }
        let mut total = 0;
        for &v in inputs {
            let s = self.shape(v);
            let compatible = s.len() == base.len()
                && s.iter()
                    .zip(&base)
                    .enumerate()
                    .all(|(i, (x, y))| i == axis || x == y);
            if !compatible {
                return Err(Error::dim("concat", &base, s));
            }
            total += s[axis];
        }
        let (outer, _, inner) = split3(&base, axis);
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &v in inputs {
                let t = self.value(v);
                let chunk = t.shape()[axis] * inner;
                out.extend_from_slice(&t.data()[o * chunk..(o + 1) * chunk]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        let ng = inputs.iter().any(|&v| self.ng(v));
        Ok(self.push(
            Tensor::from_parts(shape, out),
            Op::Concat {
                inputs: inputs.to_vec(),
                axis,
            },
            ng,
        ))
    }

    /// Sum or mean along `axis`; the axis is removed (a rank-1 input reduces to `[1]`).
    pub fn reduce(&mut self, kind: ReduceKind, a: Var, axis: usize) -> Result<Var> {
        let va = self.value(a);
        if axis >= va.rank() {
            return Err(Error::dim("reduce", va.shape(), &[axis]));
        }
        let (outer, len, inner) = split3(va.shape(), axis);
        let mut out = vec![0.0; outer * inner];
        let d = va.data();
        for o in 0..outer {
            for l in 0..len {
                let src = &d[(o * len + l) * inner..(o * len + l + 1) * inner];
                for (acc, &x) in out[o * inner..(o + 1) * inner].iter_mut().zip(src) {
                    *acc += x;
                }
            }
        }
        if kind == ReduceKind::Mean {
            let inv = 1.0 / len as f64;
            out.iter_mut().for_each(|x| *x *= inv);
        }
        let mut shape: Vec<usize> = va.shape().to_vec();
        shape.remove(axis);
        if shape.is_empty() {
            shape.push(1);
        }
        let ng = self.ng(a);
        Ok(self.push(
            Tensor::from_parts(shape, out),
            Op::Reduce { kind, a, axis },
            ng,
        ))
    }

    /// Sum of every element, as a `[1]` tensor.
    pub fn sum_all(&mut self, a: Var) -> Result<Var> {
        let n = self.value(a).numel();
        let flat = self.reshape(a, &[n])?;
        self.reduce(ReduceKind::Sum, flat, 0)
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(a).clone().reshape(shape)?;
        let ng = self.ng(a);
        Ok(self.push(t, Op::Reshape(a), ng))
    }

    /// Adds a `[C]` bias to every row of a tensor whose last dim is `C`.
    pub fn add_bias(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(bias));
        let c = *va.shape().last().unwrap();
        if vb.numel() != c || vb.rank() != 1 {
            return Err(Error::dim("add_bias", va.shape(), vb.shape()));
        }
        let b = vb.data();
        let data = va
            .data()
            .chunks(c)
            .flat_map(|row| row.iter().zip(b).map(|(x, y)| x + y))
            .collect();
        let shape = va.shape().to_vec();
        let ng = self.ng(a) || self.ng(bias);
        Ok(self.push(Tensor::from_parts(shape, data), Op::AddBias(a, bias), ng))
    }

    /// Selects rows of a 2-D `table`; `None` produces a zero row with no gradient path.
    pub fn gather_rows(&mut self, table: Var, rows: &[Option<usize>]) -> Result<Var> {
        let vt = self.value(table);
        if vt.rank() != 2 {
            return Err(Error::dim("gather_rows", vt.shape(), &[2]));
        }
        if rows.is_empty() {
            return Err(Error::contract("gather_rows with no rows"));
        }
        let (v, c) = (vt.shape()[0], vt.shape()[1]);
        let mut out = Vec::with_capacity(rows.len() * c);
        for r in rows {
            match *r {
                Some(i) if i >= v => {
                    return Err(Error::Index {
                        what: "embedding table".into(),
                        index: i,
                        size: v,
                    })
                }
                Some(i) => out.extend_from_slice(vt.row(i)),
                None => out.extend(std::iter::repeat_n(0.0, c)),
            }
        }
        let ng = self.ng(table);
        Ok(self.push(
            Tensor::from_parts(vec![rows.len(), c], out),
            Op::Gather {
                table,
                rows: rows.to_vec(),
            },
            ng,
        ))
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lv = self.value(loss);
        if !lv.is_scalar() {
            return Err(Error::contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                lv.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::ones(lv.shape()));

        for id in (0..=loss.0).rev() {
            let node = &self.nodes[id];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            self.propagate(node, &g, &mut grads);
            grads[id] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let gd = g.data();
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (m, k, n) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
                if self.ng(*a) {
                    let mut da = vec![0.0; m * k];
                    matmul_nt_acc(gd, tb.data(), &mut da, m, n, k);
                    accumulate(grads, *a, ta.shape(), da);
                }
                if self.ng(*b) {
                    let mut db = vec![0.0; k * n];
                    matmul_tn_acc(ta.data(), gd, &mut db, m, k, n);
                    accumulate(grads, *b, tb.shape(), db);
                }
            }
            Op::BatchMatMul { a, b, transpose_b } => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (bt, m, k) = (ta.shape()[0], ta.shape()[1], ta.shape()[2]);
                let n = if *transpose_b {
                    tb.shape()[1]
                } else {
                    tb.shape()[2]
                };
                if self.ng(*a) {
                    let mut da = vec![0.0; bt * m * k];
                    for i in 0..bt {
                        let g_i = &gd[i * m * n..(i + 1) * m * n];
                        let b_i = &tb.data()[i * k * n..(i + 1) * k * n];
                        let da_i = &mut da[i * m * k..(i + 1) * m * k];
                        if *transpose_b {
                            // a·bᵀ with b: n×k  →  da = g·b
                            matmul_acc(g_i, b_i, da_i, m, n, k);
                        } else {
                            matmul_nt_acc(g_i, b_i, da_i, m, n, k);
                        }
                    }
                    accumulate(grads, *a, ta.shape(), da);
                }
                if self.ng(*b) {
                    let mut db = vec![0.0; bt * k * n];
                    for i in 0..bt {
                        let g_i = &gd[i * m * n..(i + 1) * m * n];
                        let a_i = &ta.data()[i * m * k..(i + 1) * m * k];
                        let db_i = &mut db[i * k * n..(i + 1) * k * n];
                        if *transpose_b {
                            // db (n×k) = gᵀ·a
                            matmul_tn_acc(g_i, a_i, db_i, m, n, k);
                        } else {
                            matmul_tn_acc(a_i, g_i, db_i, m, k, n);
                        }
                    }
                    accumulate(grads, *b, tb.shape(), db);
                }
            }
            Op::Elementwise { kind, a, b } => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let broadcast = ta.shape() != tb.shape();
                let bval = |i: usize| {
                    if broadcast {
                        tb.data()[0]
                    } else {
                        tb.data()[i]
                    }
                };
                if self.ng(*a) {
                    let da: Vec<f64> = match kind {
                        BinaryKind::Add | BinaryKind::Sub => gd.to_vec(),
                        BinaryKind::Mul => {
                            gd.iter().enumerate().map(|(i, &x)| x * bval(i)).collect()
                        }
                    };
                    accumulate(grads, *a, ta.shape(), da);
                }
                if self.ng(*b) {
                    let per: Vec<f64> = match kind {
                        BinaryKind::Add => gd.to_vec(),
                        BinaryKind::Sub => gd.iter().map(|x| -x).collect(),
                        BinaryKind::Mul => gd.iter().zip(ta.data()).map(|(x, y)| x * y).collect(),
                    };
                    let db = if broadcast {
                        vec![per.iter().sum()]
                    } else {
                        per
                    };
                    accumulate(grads, *b, tb.shape(), db);
                }
            }
            Op::Activation { kind, a } => {
                if !self.ng(*a) {
                    return;
                }
                let (x, y) = (self.value(*a).data(), node.value.data());
                let da = gd
                    .iter()
                    .zip(x.iter().zip(y))
                    .map(|(&g, (&x, &y))| match kind {
                        ActivationKind::Relu => {
                            if x > 0.0 {
                                g
                            } else {
                                0.0
                            }
                        }
                        ActivationKind::Tanh => g * (1.0 - y * y),
                        ActivationKind::Sigmoid => g * y * (1.0 - y),
                    })
                    .collect();
                accumulate(grads, *a, node.value.shape(), da);
            }
            Op::Ln(a) => {
                if self.ng(*a) {
                    let x = self.value(*a).data();
                    let da = gd.iter().zip(x).map(|(g, x)| g / x).collect();
                    accumulate(grads, *a, node.value.shape(), da);
                }
            }
            Op::Clamp { a, lo, hi } => {
                if self.ng(*a) {
                    let x = self.value(*a).data();
                    let da = gd
                        .iter()
                        .zip(x)
                        .map(|(&g, &x)| if x >= *lo && x <= *hi { g } else { 0.0 })
                        .collect();
                    accumulate(grads, *a, node.value.shape(), da);
                }
            }
            Op::Scale(a, c) => {
                if self.ng(*a) {
                    let da = gd.iter().map(|g| g * c).collect();
                    accumulate(grads, *a, node.value.shape(), da);
                }
            }
            Op::SoftmaxMasked(a) => {
                if !self.ng(*a) {
                    return;
                }
                let y = node.value.data();
                let width = *node.value.shape().last().unwrap();
                let mut da = vec![0.0; y.len()];
                for ((yr, gr), dr) in y
                    .chunks(width)
                    .zip(gd.chunks(width))
                    .zip(da.chunks_mut(width))
                {
                    // masked slots have y == 0 and therefore zero gradient
                    let s = dot(yr, gr);
                    for ((d, &yv), &gv) in dr.iter_mut().zip(yr).zip(gr) {
                        *d = yv * (gv - s);
                    }
                }
                accumulate(grads, *a, node.value.shape(), da);
            }
            Op::Concat { inputs, axis } => {
                let out_shape = node.value.shape();
                let (outer, total, inner) = split3(out_shape, *axis);
                let mut offset = 0;
                for &v in inputs {
                    let s = self.value(v).shape();
                    let len = s[*axis];
                    if self.ng(v) {
                        let mut dv = Vec::with_capacity(outer * len * inner);
                        for o in 0..outer {
                            let start = (o * total + offset) * inner;
                            dv.extend_from_slice(&gd[start..start + len * inner]);
                        }
                        accumulate(grads, v, s, dv);
                    }
                    offset += len;
                }
            }
            Op::Reduce { kind, a, axis } => {
                if !self.ng(*a) {
                    return;
                }
                let sa = self.value(*a).shape();
                let (outer, len, inner) = split3(sa, *axis);
                let w = match kind {
                    ReduceKind::Sum => 1.0,
                    ReduceKind::Mean => 1.0 / len as f64,
                };
                let mut da = Vec::with_capacity(outer * len * inner);
                for o in 0..outer {
                    let src = &gd[o * inner..(o + 1) * inner];
                    for _ in 0..len {
                        da.extend(src.iter().map(|x| x * w));
                    }
                }
                accumulate(grads, *a, sa, da);
            }
            Op::Reshape(a) => {
                if self.ng(*a) {
                    accumulate(grads, *a, self.value(*a).shape(), gd.to_vec());
                }
            }
            Op::AddBias(a, bias) => {
                if self.ng(*a) {
                    accumulate(grads, *a, node.value.shape(), gd.to_vec());
                }
                if self.ng(*bias) {
                    let c = self.value(*bias).numel();
                    let mut db = vec![0.0; c];
                    for row in gd.chunks(c) {
                        for (d, x) in db.iter_mut().zip(row) {
                            *d += x;
                        }
                    }
                    accumulate(grads, *bias, self.value(*bias).shape(), db);
                }
            }
            Op::Gather { table, rows } => {
                if !self.ng(*table) {
                    return;
                }
                let st = self.value(*table).shape();
                let c = st[1];
                let mut dt = vec![0.0; st[0] * c];
                for (r, row) in rows.iter().zip(gd.chunks(c)) {
                    if let Some(i) = *r {
                        for (d, x) in dt[i * c..(i + 1) * c].iter_mut().zip(row) {
                            *d += x;
                        }
                    }
                }
                accumulate(grads, *table, st, dt);
            }
        }
    }
}

fn accumulate(grads: &mut [Option<Tensor>], v: Var, shape: &[usize], delta: Vec<f64>) {
    match &mut grads[v.0] {
        Some(existing) => {
            for (e, d) in existing.data_mut().iter_mut().zip(delta) {
                *e += d;
            }
        }
        slot @ None => *slot = Some(Tensor::from_parts(shape.to_vec(), delta)),
    }
}
