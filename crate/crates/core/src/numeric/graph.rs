//! Reverse-mode differentiation over a per-forward-pass operation graph.
//!
//! A [`Graph`] records every operation applied to its [`Var`]s. Calling
//! [`Graph::backward`] consumes the graph, so each forward pass builds a fresh
//! one and nothing outlives a single gradient evaluation.

use std::sync::atomic::{AtomicU64, Ordering};

use super::tensor::{kernels, Tensor};
use crate::error::{Error, Result};

static NEXT_GRAPH_ID: AtomicU64 = AtomicU64::new(1);

/// Handle to a node of one particular [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var {
    graph: u64,
    index: usize,
}

#[derive(Debug, Clone, Copy)]
enum Op {
    Leaf,
    Affine { input: usize, weight: usize, bias: usize },
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    AddScalar(usize),
    Relu(usize),
    Sigmoid(usize),
    Softplus(usize),
    Exp(usize),
    Log(usize),
    Recip(usize),
    Sum(usize),
    Mean(usize),
    Bce { pred: usize, target: usize },
    BceLogits { logits: usize, target: usize },
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

pub struct Graph {
    id: u64,
    nodes: Vec<Node>,
}

/// Gradients of a scalar with respect to every parameter leaf of a graph.
#[derive(Debug)]
pub struct Gradients {
    graph: u64,
    grads: Vec<Option<Vec<f64>>>,
}

const BCE_LOG_FLOOR: f64 = -100.0;

fn clamped_ln(p: f64) -> f64 {
    if p <= 0.0 {
        BCE_LOG_FLOOR
    } else {
        p.ln().max(BCE_LOG_FLOOR)
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

pub(crate) fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

impl Graph {
    pub fn new() -> Self {
        Graph {
            id: NEXT_GRAPH_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
        }
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Result<Var> {
        if let Some(v) = value.data().iter().find(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("operation {op:?} produced {v}")));
        }
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var {
            graph: self.id,
            index: self.nodes.len() - 1,
        })
    }

    fn idx(&self, v: Var) -> Result<usize> {
        if v.graph != self.id || v.index >= self.nodes.len() {
            return Err(Error::Contract(format!(
                "variable {} belongs to graph {}, not to graph {}",
                v.index, v.graph, self.id
            )));
        }
        Ok(v.index)
    }

    fn node(&self, i: usize) -> &Node {
        &self.nodes[i]
    }

    /// Trainable leaf; its gradient is reported by [`Graph::backward`].
    pub fn param(&mut self, value: &Tensor) -> Var {
        let mut value = value.clone();
        value.clear_grad();
        self.push(value, Op::Leaf, true)
            .expect("tensor invariant guarantees finite values")
    }

    /// Leaf that never receives a gradient (data, noise draws).
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
            .expect("tensor invariant guarantees finite values")
    }

    pub fn value(&self, v: Var) -> Result<&Tensor> {
        let i = self.idx(v)?;
        Ok(&self.node(i).value)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn affine(&mut self, input: Var, weight: Var, bias: Var) -> Result<Var> {
        let (i, w, b) = (self.idx(input)?, self.idx(weight)?, self.idx(bias)?);
        let out = super::tensor::affine_forward(&self.node(i).value, &self.node(w).value, &self.node(b).value)?;
        let rg = self.node(i).requires_grad || self.node(w).requires_grad || self.node(b).requires_grad;
        self.push(
            out,
            Op::Affine {
                input: i,
                weight: w,
                bias: b,
            },
            rg,
        )
    }

    fn binary(
        &mut self,
        a: Var,
        b: Var,
        name: &str,
        f: impl Fn(f64, f64) -> f64,
        op: fn(usize, usize) -> Op,
    ) -> Result<Var> {
        let (ia, ib) = (self.idx(a)?, self.idx(b)?);
        let (ta, tb) = (&self.node(ia).value, &self.node(ib).value);
        if ta.shape() != tb.shape() {
            return Err(Error::dim(format!(
                "{name}: shapes {:?} and {:?} differ",
                ta.shape(),
                tb.shape()
            )));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        let out = Tensor::from_parts_unchecked(ta.shape().to_vec(), data);
        let rg = self.node(ia).requires_grad || self.node(ib).requires_grad;
        self.push(out, op(ia, ib), rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "add", |x, y| x + y, Op::Add)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "sub", |x, y| x - y, Op::Sub)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "mul", |x, y| x * y, Op::Mul)
    }

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Result<Var> {
        let ia = self.idx(a)?;
        let out = self.node(ia).value.map(f);
        let rg = self.node(ia).requires_grad;
        self.push(out, op, rg)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        let ia = self.idx(a)?;
        self.unary(a, |x| x * c, Op::Scale(ia, c))
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Result<Var> {
        let ia = self.idx(a)?;
        self.unary(a, |x| x + c, Op::AddScalar(ia))
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let ia = self.idx(a)?;
        self.unary(a, |x| x.max(0.0), Op::Relu(ia))
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        let ia = self.idx(a)?;
        self.unary(a, sigmoid, Op::Sigmoid(ia))
    }

    pub fn softplus(&mut self, a: Var) -> Result<Var> {
        let ia = self.idx(a)?;
        self.unary(a, softplus, Op::Softplus(ia))
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        let ia = self.idx(a)?;
        self.unary(a, f64::exp, Op::Exp(ia))
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        let ia = self.idx(a)?;
        if let Some(v) = self.node(ia).value.data().iter().find(|&&v| v <= 0.0) {
            return Err(Error::domain(format!("log of non-positive value {v}")));
        }
        self.unary(a, f64::ln, Op::Log(ia))
    }

    pub fn recip(&mut self, a: Var) -> Result<Var> {
        let ia = self.idx(a)?;
        if self.node(ia).value.data().contains(&0.0) {
            return Err(Error::domain("reciprocal of zero"));
        }
        self.unary(a, |x| 1.0 / x, Op::Recip(ia))
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let ia = self.idx(a)?;
        let s = self.node(ia).value.sum();
        let rg = self.node(ia).requires_grad;
        self.push(Tensor::scalar(s), Op::Sum(ia), rg)
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let ia = self.idx(a)?;
        let t = &self.node(ia).value;
        if t.is_empty() {
            return Err(Error::dim("mean of an empty tensor"));
        }
        let m = t.sum() / t.len() as f64;
        let rg = self.node(ia).requires_grad;
        self.push(Tensor::scalar(m), Op::Mean(ia), rg)
    }

    /// Binary cross entropy of probabilities `pred` against `target`, summed
    /// over every element. Logarithms are floored at -100.
    pub fn bce(&mut self, pred: Var, target: Var) -> Result<Var> {
        let (ip, it) = (self.idx(pred)?, self.idx(target)?);
        let (p, t) = (&self.node(ip).value, &self.node(it).value);
        if p.shape() != t.shape() {
            return Err(Error::dim(format!(
                "bce: shapes {:?} and {:?} differ",
                p.shape(),
                t.shape()
            )));
        }
        if p.data().iter().any(|&v| !(0.0..=1.0).contains(&v)) {
            return Err(Error::domain("bce prediction outside [0, 1]"));
        }
        let loss: f64 = p
            .data()
            .iter()
            .zip(t.data())
            .map(|(&p, &t)| -(t * clamped_ln(p) + (1.0 - t) * clamped_ln(1.0 - p)))
            .sum();
        let rg = self.node(ip).requires_grad || self.node(it).requires_grad;
        self.push(Tensor::scalar(loss), Op::Bce { pred: ip, target: it }, rg)
    }

    /// Binary cross entropy computed from logits, summed over every element.
    pub fn bce_with_logits(&mut self, logits: Var, target: Var) -> Result<Var> {
        let (il, it) = (self.idx(logits)?, self.idx(target)?);
        let (l, t) = (&self.node(il).value, &self.node(it).value);
        if l.shape() != t.shape() {
            return Err(Error::dim(format!(
                "bce_with_logits: shapes {:?} and {:?} differ",
                l.shape(),
                t.shape()
            )));
        }
        let loss: f64 = l.data().iter().zip(t.data()).map(|(&l, &t)| softplus(l) - t * l).sum();
        let rg = self.node(il).requires_grad || self.node(it).requires_grad;
        self.push(Tensor::scalar(loss), Op::BceLogits { logits: il, target: it }, rg)
    }

    /// Reverse accumulation from a scalar `loss`. Consumes the graph.
    pub fn backward(self, loss: Var) -> Result<Gradients> {
        let root = self.idx(loss)?;
        if !self.nodes[root].value.is_scalar() {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.nodes[root].value.shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[root] = Some(vec![1.0]);

        for i in (0..=root).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            if matches!(node.op, Op::Leaf) {
                grads[i] = Some(g);
                continue;
            }
            self.propagate(node, &g, &mut grads);
        }

        // only trainable leaves keep their gradient
        for (i, n) in self.nodes.iter().enumerate() {
            let trainable = matches!(n.op, Op::Leaf) && n.requires_grad;
            if trainable {
                if grads[i].is_none() {
                    grads[i] = Some(vec![0.0; n.value.len()]);
                }
            } else {
                grads[i] = None;
            }
        }
        Ok(Gradients { graph: self.id, grads })
    }

    fn propagate(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let val = |i: usize| &self.nodes[i].value;
        let wants = |i: usize| self.nodes[i].requires_grad;
        let mut accumulate = |i: usize, f: &mut dyn FnMut(&mut [f64])| {
            if !self.nodes[i].requires_grad {
                return;
            }
            let slot = grads[i].get_or_insert_with(|| vec![0.0; self.nodes[i].value.len()]);
            f(slot);
        };
        let out = node.value.data();

        match node.op {
            Op::Leaf => {}
            Op::Affine { input, weight, bias } => {
                let (_, fan_in) = val(input).dims2().expect("checked at record time");
                let fan_out = val(bias).len();
                if wants(input) {
                    let w = val(weight).data();
                    accumulate(input, &mut |dx| kernels::grad_input(g, w, fan_in, fan_out, dx));
                }
                if wants(weight) {
                    let x = val(input).data();
                    accumulate(weight, &mut |dw| kernels::grad_weight(x, g, fan_in, fan_out, dw));
                }
                accumulate(bias, &mut |db| {
                    for row in g.chunks_exact(fan_out) {
                        for (d, &r) in db.iter_mut().zip(row) {
                            *d += r;
                        }
                    }
                });
            }
            Op::Add(a, b) => {
                accumulate(a, &mut |d| add_into(d, g));
                accumulate(b, &mut |d| add_into(d, g));
            }
            Op::Sub(a, b) => {
                accumulate(a, &mut |d| add_into(d, g));
                accumulate(b, &mut |d| {
                    for (di, &gi) in d.iter_mut().zip(g) {
                        *di -= gi;
                    }
                });
            }
            Op::Mul(a, b) => {
                let (va, vb) = (val(a).data(), val(b).data());
                accumulate(a, &mut |d| zip_into(d, g, vb, |gi, y| gi * y));
                accumulate(b, &mut |d| zip_into(d, g, va, |gi, x| gi * x));
            }
            Op::Scale(a, c) => accumulate(a, &mut |d| {
                for (di, &gi) in d.iter_mut().zip(g) {
                    *di += gi * c;
                }
            }),
            Op::AddScalar(a) => accumulate(a, &mut |d| add_into(d, g)),
            Op::Relu(a) => {
                let x = val(a).data();
                accumulate(a, &mut |d| zip_into(d, g, x, |gi, x| if x > 0.0 { gi } else { 0.0 }));
            }
            Op::Sigmoid(a) => accumulate(a, &mut |d| zip_into(d, g, out, |gi, s| gi * s * (1.0 - s))),
            Op::Softplus(a) => {
                let x = val(a).data();
                accumulate(a, &mut |d| zip_into(d, g, x, |gi, x| gi * sigmoid(x)));
            }
            Op::Exp(a) => accumulate(a, &mut |d| zip_into(d, g, out, |gi, e| gi * e)),
            Op::Log(a) => {
                let x = val(a).data();
                accumulate(a, &mut |d| zip_into(d, g, x, |gi, x| gi / x));
            }
            Op::Recip(a) => accumulate(a, &mut |d| zip_into(d, g, out, |gi, r| -gi * r * r)),
            Op::Sum(a) => accumulate(a, &mut |d| {
                for di in d.iter_mut() {
                    *di += g[0];
                }
            }),
            Op::Mean(a) => {
                let n = val(a).len() as f64;
                accumulate(a, &mut |d| {
                    for di in d.iter_mut() {
                        *di += g[0] / n;
                    }
                });
            }
            Op::Bce { pred, target } => {
                let (p, t) = (val(pred).data(), val(target).data());
                accumulate(pred, &mut |d| {
                    for ((di, &p), &t) in d.iter_mut().zip(p).zip(t) {
                        let p = p.clamp(1e-12, 1.0 - 1e-12);
                        *di += g[0] * ((1.0 - t) / (1.0 - p) - t / p);
                    }
                });
                accumulate(target, &mut |d| {
                    for ((di, &p), _) in d.iter_mut().zip(p).zip(t) {
                        *di += g[0] * (clamped_ln(1.0 - p) - clamped_ln(p));
                    }
                });
            }
            Op::BceLogits { logits, target } => {
                let (l, t) = (val(logits).data(), val(target).data());
                accumulate(logits, &mut |d| {
                    for ((di, &l), &t) in d.iter_mut().zip(l).zip(t) {
                        *di += g[0] * (sigmoid(l) - t);
                    }
                });
                accumulate(target, &mut |d| {
                    for (di, &l) in d.iter_mut().zip(l) {
                        *di -= g[0] * l;
                    }
                });
            }
        }
    }
}

fn add_into(d: &mut [f64], g: &[f64]) {
    for (di, &gi) in d.iter_mut().zip(g) {
        *di += gi;
    }
}

fn zip_into(d: &mut [f64], g: &[f64], other: &[f64], f: impl Fn(f64, f64) -> f64) {
    for ((di, &gi), &o) in d.iter_mut().zip(g).zip(other) {
        *di += f(gi, o);
    }
}

impl Gradients {
    /// Gradient for a trainable leaf of the graph this came from.
    pub fn get(&self, v: Var) -> Result<&[f64]> {
        if v.graph != self.graph {
            return Err(Error::Contract("variable from a different graph".into()));
        }
        self.grads
            .get(v.index)
            .and_then(Option::as_deref)
            .ok_or_else(|| Error::Contract(format!("variable {} is not a trainable leaf", v.index)))
    }

    /// Stores the gradients of `vars` into the matching tensors' grad slots.
    pub fn write_into(&self, vars: &[Var], tensors: &mut [Tensor]) -> Result<()> {
        if vars.len() != tensors.len() {
            return Err(Error::dim("one variable per tensor expected"));
        }
        for (v, t) in vars.iter().zip(tensors.iter_mut()) {
            t.set_grad(self.get(*v)?.to_vec())?;
        }
        Ok(())
    }
}
