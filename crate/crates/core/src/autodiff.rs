//! Reverse-mode automatic differentiation over [`Tensor`] values.
//!
//! A [`Tape`] records every op applied to its [`Var`]s. Ops whose operands
//! all have `grad_required == false` are recorded as constants with no
//! backward rule. [`Tape::backward`] replays the tape once in reverse; after
//! that the tape is consumed and a second call is a state error.
//!
//! Binary elementwise ops broadcast when one operand's shape is a trailing
//! suffix of the other's (a `[k]` bias against an `[n, k]` batch, a `[n, C]`
//! logit mean against `[N, n, C]` noise) or when one operand has a single
//! element.

use std::cell::{Cell, Ref, RefCell};

use crate::error::{Error, Result};
use crate::tensor::{gemm, Tensor};

#[derive(Clone, Copy, Debug)]
enum Op {
    Leaf,
    Constant,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    MatMul(usize, usize),
    Transpose(usize),
    Reshape(usize),
    Neg(usize),
    Scale(usize, f64),
    Exp(usize),
    Log(usize),
    Square(usize),
    Sqrt(usize),
    Powf(usize, f64),
    Relu(usize),
    Softplus(usize),
    Softmax(usize),
    ClampMin(usize, f64),
    Sum(usize),
    Mean(usize),
    MeanLeading(usize),
    SumLastAxis(usize),
}

struct Node {
    value: Tensor,
    requires_grad: bool,
    op: Op,
}

#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
    consumed: Cell<bool>,
}

/// Handle to a tensor recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Var")
            .field("id", &self.id)
            .field("shape", &self.shape())
            .field("requires_grad", &self.requires_grad())
            .finish()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a tensor that receives a gradient.
    pub fn leaf(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf, true)
    }

    /// Registers a tensor that never receives a gradient.
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Constant, false)
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_consumed(&self) -> bool {
        self.consumed.get()
    }

    fn push(&self, value: Tensor, op: Op, requires_grad: bool) -> Var<'_> {
        let op = if requires_grad || matches!(op, Op::Leaf) {
            op
        } else {
            Op::Constant
        };
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            requires_grad,
            op,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    fn value(&self, id: usize) -> Ref<'_, Tensor> {
        Ref::map(self.nodes.borrow(), |n| &n[id].value)
    }

    fn requires(&self, id: usize) -> bool {
        self.nodes.borrow()[id].requires_grad
    }

    /// Reverse sweep from a scalar `loss`. Consumes the tape.
    pub fn backward(&self, loss: Var<'_>) -> Result<Gradients> {
        if !std::ptr::eq(loss.tape, self) {
            return Err(Error::State("loss was recorded on a different tape".into()));
        }
        if self.consumed.get() {
            return Err(Error::State("tape already consumed by backward".into()));
        }
        let nodes = self.nodes.borrow();
        if nodes[loss.id].value.len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                nodes[loss.id].value.shape()
            )));
        }
        self.consumed.set(true);

        let mut grads: Vec<Option<Vec<f64>>> = vec![None; nodes.len()];
        if nodes[loss.id].requires_grad {
            grads[loss.id] = Some(vec![1.0]);
        }
        for id in (0..=loss.id).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &nodes[id];
            backprop(&nodes, node, &g, &mut grads);
            grads[id] = Some(g);
        }

        let grads = grads
            .into_iter()
            .zip(nodes.iter())
            .map(|(g, n)| {
                g.filter(|_| n.requires_grad).map(|g| {
                    Tensor::new(n.value.shape().to_vec(), g).expect("gradient shape")
                })
            })
            .collect();
        Ok(Gradients { grads })
    }
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// `None` for vars that do not require gradients or are unreachable from the loss.
    pub fn get(&self, var: Var<'_>) -> Option<&Tensor> {
        self.grads.get(var.id).and_then(|g| g.as_ref())
    }

    pub fn get_or_zeros(&self, var: Var<'_>) -> Tensor {
        match self.get(var) {
            Some(g) => g.clone(),
            None => Tensor::zeros(&var.shape()),
        }
    }
}

fn accumulate(grads: &mut [Option<Vec<f64>>], id: usize, len: usize) -> &mut [f64] {
    grads[id].get_or_insert_with(|| vec![0.0; len])
}

fn backprop(nodes: &[Node], node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
    let val = |i: usize| nodes[i].value.data();
    let req = |i: usize| nodes[i].requires_grad;
    let out = node.value.data();
    match node.op {
        Op::Leaf | Op::Constant => {}
        Op::Add(a, b) | Op::Sub(a, b) => {
            let sign = if matches!(node.op, Op::Sub(..)) { -1.0 } else { 1.0 };
            if req(a) {
                let la = val(a).len();
                let ga = accumulate(grads, a, la);
                for (i, gi) in g.iter().enumerate() {
                    ga[i % la] += gi;
                }
            }
            if req(b) {
                let lb = val(b).len();
                let gb = accumulate(grads, b, lb);
                for (i, gi) in g.iter().enumerate() {
                    gb[i % lb] += sign * gi;
                }
            }
        }
        Op::Mul(a, b) => {
            let (av, bv) = (val(a), val(b));
            let (la, lb) = (av.len(), bv.len());
            if req(a) {
                let ga = accumulate(grads, a, la);
                for (i, gi) in g.iter().enumerate() {
                    ga[i % la] += gi * bv[i % lb];
                }
            }
            if req(b) {
                let gb = accumulate(grads, b, lb);
                for (i, gi) in g.iter().enumerate() {
                    gb[i % lb] += gi * av[i % la];
                }
            }
        }
        Op::Div(a, b) => {
            let (av, bv) = (val(a), val(b));
            let (la, lb) = (av.len(), bv.len());
            if req(a) {
                let ga = accumulate(grads, a, la);
                for (i, gi) in g.iter().enumerate() {
                    ga[i % la] += gi / bv[i % lb];
                }
            }
            if req(b) {
                let gb = accumulate(grads, b, lb);
                for (i, gi) in g.iter().enumerate() {
                    let d = bv[i % lb];
                    gb[i % lb] -= gi * av[i % la] / (d * d);
                }
            }
        }
        Op::MatMul(a, b) => {
            let (n, k) = nodes[a].value.dims2().expect("2-D");
            let m = nodes[b].value.shape()[1];
            if req(a) {
                // dA = G · Bᵀ
                let ga = accumulate(grads, a, n * k);
                gemm(n, m, k, g, (m, 1), val(b), (1, m), ga);
            }
            if req(b) {
                // dB = Aᵀ · G
                let gb = accumulate(grads, b, k * m);
                gemm(k, n, m, val(a), (1, k), g, (m, 1), gb);
            }
        }
        Op::Transpose(a) => {
            if req(a) {
                let (r, c) = nodes[a].value.dims2().expect("2-D");
                let ga = accumulate(grads, a, r * c);
                for i in 0..r {
                    for j in 0..c {
                        ga[i * c + j] += g[j * r + i];
                    }
                }
            }
        }
        Op::Reshape(a) => unary(grads, a, req(a), g.len(), |i| g[i]),
        Op::Neg(a) => unary(grads, a, req(a), g.len(), |i| -g[i]),
        Op::Scale(a, s) => unary(grads, a, req(a), g.len(), |i| s * g[i]),
        Op::Exp(a) => unary(grads, a, req(a), g.len(), |i| g[i] * out[i]),
        Op::Log(a) => {
            let x = val(a);
            unary(grads, a, req(a), g.len(), |i| g[i] / x[i])
        }
        Op::Square(a) => {
            let x = val(a);
            unary(grads, a, req(a), g.len(), |i| 2.0 * x[i] * g[i])
        }
        Op::Sqrt(a) => unary(grads, a, req(a), g.len(), |i| 0.5 * g[i] / out[i]),
        Op::Powf(a, p) => {
            let x = val(a);
            unary(grads, a, req(a), g.len(), |i| g[i] * p * x[i].powf(p - 1.0))
        }
        Op::Relu(a) => {
            let x = val(a);
            unary(grads, a, req(a), g.len(), |i| if x[i] > 0.0 { g[i] } else { 0.0 })
        }
        Op::Softplus(a) => {
            let x = val(a);
            unary(grads, a, req(a), g.len(), |i| g[i] * sigmoid(x[i]))
        }
        Op::ClampMin(a, lo) => {
            let x = val(a);
            unary(grads, a, req(a), g.len(), |i| if x[i] > lo { g[i] } else { 0.0 })
        }
        Op::Softmax(a) => {
            if req(a) {
                let c = nodes[a].value.last_dim();
                let ga = accumulate(grads, a, g.len());
                for (row, (gr, yr)) in g.chunks(c).zip(out.chunks(c)).enumerate() {
                    let dot: f64 = gr.iter().zip(yr).map(|(gi, yi)| gi * yi).sum();
                    for j in 0..c {
                        ga[row * c + j] += yr[j] * (gr[j] - dot);
                    }
                }
            }
        }
        Op::Sum(a) => {
            let n = val(a).len();
            unary(grads, a, req(a), n, |_| g[0])
        }
        Op::Mean(a) => {
            let n = val(a).len();
            unary(grads, a, req(a), n, |_| g[0] / n as f64)
        }
        Op::MeanLeading(a) => {
            let total = val(a).len();
            let lead = nodes[a].value.shape()[0] as f64;
            let rest = g.len();
            unary(grads, a, req(a), total, |i| g[i % rest] / lead)
        }
        Op::SumLastAxis(a) => {
            let total = val(a).len();
            let c = nodes[a].value.last_dim();
            unary(grads, a, req(a), total, |i| g[i / c])
        }
    }
}

fn unary(
    grads: &mut [Option<Vec<f64>>],
    a: usize,
    required: bool,
    len: usize,
    f: impl Fn(usize) -> f64,
) {
    if required {
        let ga = accumulate(grads, a, len);
        for (i, gi) in ga.iter_mut().enumerate() {
            *gi += f(i);
        }
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^x)` without overflow.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Inverse of [`softplus`] for `y > 0`.
pub fn softplus_inverse(y: f64) -> f64 {
    // ln(e^y - 1) = y + ln(1 - e^-y)
    y + (-(-y).exp()).ln_1p()
}

/// Max-shifted softmax of one row, written into `out`.
pub fn softmax_into(row: &[f64], out: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for (o, &z) in out.iter_mut().zip(row) {
        *o = (z - max).exp();
        total += *o;
    }
    for o in out.iter_mut() {
        *o /= total;
    }
}

fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let na: usize = a.iter().product();
    let nb: usize = b.iter().product();
    if a == b || b.len() <= a.len() && a.ends_with(b) || nb == 1 && na >= 1 {
        Some(a.to_vec())
    } else if a.len() <= b.len() && b.ends_with(a) || na == 1 {
        Some(b.to_vec())
    } else {
        None
    }
}

#[allow(clippy::should_implement_trait)]
impl<'t> Var<'t> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn value(&self) -> Tensor {
        self.tape.value(self.id).clone()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.value(self.id).shape().to_vec()
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.requires(self.id)
    }

    /// Single value of a one-element var.
    pub fn item(&self) -> Result<f64> {
        self.tape.value(self.id).item()
    }

    fn same_tape(&self, other: &Var<'t>) -> Result<()> {
        if std::ptr::eq(self.tape, other.tape) {
            Ok(())
        } else {
            Err(Error::State("operands recorded on different tapes".into()))
        }
    }

    fn binary(
        self,
        other: Var<'t>,
        name: &str,
        op: Op,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Var<'t>> {
        self.same_tape(&other)?;
        let value = {
            let (a, b) = (self.tape.value(self.id), self.tape.value(other.id));
            let shape = broadcast_shape(a.shape(), b.shape()).ok_or_else(|| {
                Error::Dimension(format!("{name} of {:?} and {:?}", a.shape(), b.shape()))
            })?;
            let n: usize = shape.iter().product();
            let (ad, bd) = (a.data(), b.data());
            let (la, lb) = (ad.len(), bd.len());
            let data = (0..n).map(|i| f(ad[i % la], bd[i % lb])).collect();
            Tensor::new(shape, data)?
        };
        let rg = self.requires_grad() || other.requires_grad();
        Ok(self.tape.push(value, op, rg))
    }

    fn unary(self, op: Op, f: impl Fn(f64) -> f64) -> Var<'t> {
        let value = self.tape.value(self.id).map(f);
        self.tape.push(value, op, self.requires_grad())
    }

    pub fn add(self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, "add", Op::Add(self.id, other.id), |a, b| a + b)
    }

    pub fn sub(self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, "sub", Op::Sub(self.id, other.id), |a, b| a - b)
    }

    pub fn mul(self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, "mul", Op::Mul(self.id, other.id), |a, b| a * b)
    }

    pub fn div(self, other: Var<'t>) -> Result<Var<'t>> {
        if self.tape.value(other.id).data().contains(&0.0) {
            return Err(Error::Domain("division by zero".into()));
        }
        self.binary(other, "div", Op::Div(self.id, other.id), |a, b| a / b)
    }

    pub fn matmul(self, other: Var<'t>) -> Result<Var<'t>> {
        self.same_tape(&other)?;
        let value = self.tape.value(self.id).matmul(&self.tape.value(other.id))?;
        let rg = self.requires_grad() || other.requires_grad();
        Ok(self.tape.push(value, Op::MatMul(self.id, other.id), rg))
    }

    pub fn transpose(self) -> Result<Var<'t>> {
        let value = self.tape.value(self.id).transpose()?;
        Ok(self.tape.push(value, Op::Transpose(self.id), self.requires_grad()))
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Var<'t>> {
        let value = self.tape.value(self.id).reshape(shape)?;
        Ok(self.tape.push(value, Op::Reshape(self.id), self.requires_grad()))
    }

    pub fn neg(self) -> Var<'t> {
        self.unary(Op::Neg(self.id), |x| -x)
    }

    pub fn scale(self, s: f64) -> Var<'t> {
        self.unary(Op::Scale(self.id, s), |x| s * x)
    }

    pub fn exp(self) -> Var<'t> {
        self.unary(Op::Exp(self.id), f64::exp)
    }

    pub fn log(self) -> Result<Var<'t>> {
        if self.tape.value(self.id).data().iter().any(|&x| x <= 0.0) {
            return Err(Error::Domain("log of non-positive value".into()));
        }
        Ok(self.unary(Op::Log(self.id), f64::ln))
    }

    pub fn square(self) -> Var<'t> {
        self.unary(Op::Square(self.id), |x| x * x)
    }

    pub fn sqrt(self) -> Result<Var<'t>> {
        if self.tape.value(self.id).data().iter().any(|&x| x < 0.0) {
            return Err(Error::Domain("sqrt of negative value".into()));
        }
        Ok(self.unary(Op::Sqrt(self.id), f64::sqrt))
    }

    /// Elementwise `x^p`; negative bases are rejected.
    pub fn powf(self, p: f64) -> Result<Var<'t>> {
        if self.tape.value(self.id).data().iter().any(|&x| x < 0.0) {
            return Err(Error::Domain("powf of negative value".into()));
        }
        Ok(self.unary(Op::Powf(self.id, p), |x| x.powf(p)))
    }

    pub fn relu(self) -> Var<'t> {
        self.unary(Op::Relu(self.id), |x| x.max(0.0))
    }

    pub fn softplus(self) -> Var<'t> {
        self.unary(Op::Softplus(self.id), softplus)
    }

    pub fn clamp_min(self, lo: f64) -> Var<'t> {
        self.unary(Op::ClampMin(self.id, lo), |x| x.max(lo))
    }

    /// Softmax over the last axis.
    pub fn softmax(self) -> Result<Var<'t>> {
        let value = {
            let x = self.tape.value(self.id);
            if x.ndim() == 0 {
                return Err(Error::Dimension("softmax of a scalar".into()));
            }
            let c = x.last_dim();
            let mut out = vec![0.0; x.len()];
            if c > 0 {
                for (src, dst) in x.data().chunks(c).zip(out.chunks_mut(c)) {
                    softmax_into(src, dst);
                }
            }
            Tensor::new(x.shape().to_vec(), out)?
        };
        Ok(self.tape.push(value, Op::Softmax(self.id), self.requires_grad()))
    }

    pub fn sum(self) -> Var<'t> {
        let s = self.tape.value(self.id).data().iter().sum();
        self.tape
            .push(Tensor::scalar(s), Op::Sum(self.id), self.requires_grad())
    }

    pub fn mean(self) -> Var<'t> {
        let s = {
            let v = self.tape.value(self.id);
            v.data().iter().sum::<f64>() / v.len() as f64
        };
        self.tape
            .push(Tensor::scalar(s), Op::Mean(self.id), self.requires_grad())
    }

    /// Mean over the first axis: `[N, rest..] -> [rest..]`.
    pub fn mean_leading(self) -> Result<Var<'t>> {
        let value = {
            let v = self.tape.value(self.id);
            let Some((&lead, rest)) = v.shape().split_first() else {
                return Err(Error::Dimension("mean_leading of a scalar".into()));
            };
            if lead == 0 {
                return Err(Error::Dimension("mean_leading over empty axis".into()));
            }
            let inner: usize = rest.iter().product();
            let mut out = vec![0.0; inner];
            for chunk in v.data().chunks(inner.max(1)) {
                for (o, x) in out.iter_mut().zip(chunk) {
                    *o += x;
                }
            }
            for o in &mut out {
                *o /= lead as f64;
            }
            Tensor::new(rest.to_vec(), out)?
        };
        Ok(self
            .tape
            .push(value, Op::MeanLeading(self.id), self.requires_grad()))
    }

    /// Sum over the last axis: `[.., C] -> [..]`.
    pub fn sum_last_axis(self) -> Result<Var<'t>> {
        let value = {
            let v = self.tape.value(self.id);
            let Some((&c, lead)) = v.shape().split_last() else {
                return Err(Error::Dimension("sum_last_axis of a scalar".into()));
            };
            if c == 0 {
                return Err(Error::Dimension("sum_last_axis over empty axis".into()));
            }
            let out = v.data().chunks(c).map(|r| r.iter().sum()).collect();
            Tensor::new(lead.to_vec(), out)?
        };
        Ok(self
            .tape
            .push(value, Op::SumLastAxis(self.id), self.requires_grad()))
    }

    /// Identity forward, zero backward.
    pub fn stop_gradient(self) -> Var<'t> {
        let value = self.value();
        self.tape.push(value, Op::Constant, false)
    }
}
